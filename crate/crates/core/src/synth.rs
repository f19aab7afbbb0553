//! Synthetic monitoring data shaped like the Rijeka bathing-water record.
//!
//! Each station draws E. coli from a log-normal and salinity from a normal
//! distribution, coupled through a Gaussian copula with a negative rank
//! correlation. Spring samples (May to mid-June) are fresher by a fixed
//! offset. Irradiance follows a clear-sky diurnal curve scaled by a random
//! cloud factor; rainfall is mostly zero.

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Measurement, MAX_SALINITY};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationProfile {
    pub code: String,
    pub n: usize,
    /// Mean of ln(E. coli).
    pub ecoli_log_mean: f64,
    /// Standard deviation of ln(E. coli).
    pub ecoli_log_sd: f64,
    /// Salinity outside the spring window, PSU.
    pub salinity_mean: f64,
    pub salinity_sd: f64,
    /// First season sampled; earlier seasons are skipped for this station.
    #[serde(default)]
    pub first_year: Option<i32>,
}

impl StationProfile {
    /// Log-normal parameters matching an arithmetic mean and a median
    /// (`median = e^mu`, `mean = e^(mu + sd^2 / 2)`); requires `mean >= median > 0`.
    pub fn from_moments(
        code: &str,
        n: usize,
        ecoli_mean: f64,
        ecoli_median: f64,
        salinity_mean: f64,
        salinity_sd: f64,
    ) -> Result<Self> {
        if !(ecoli_median > 0.0 && ecoli_mean >= ecoli_median) {
            return Err(Error::config(format!(
                "station {code}: need mean >= median > 0, got mean {ecoli_mean}, median {ecoli_median}"
            )));
        }
        Ok(StationProfile {
            code: code.to_string(),
            n,
            ecoli_log_mean: ecoli_median.ln(),
            ecoli_log_sd: (2.0 * (ecoli_mean / ecoli_median).ln()).sqrt(),
            salinity_mean,
            salinity_sd,
            first_year: None,
        })
    }

    pub fn ecoli_median(&self) -> f64 {
        self.ecoli_log_mean.exp()
    }

    pub fn ecoli_mean(&self) -> f64 {
        (self.ecoli_log_mean + self.ecoli_log_sd * self.ecoli_log_sd / 2.0).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub stations: Vec<StationProfile>,
    /// Target Spearman correlation between salinity and E. coli within a station.
    pub salinity_ecoli_corr: f64,
    /// PSU subtracted from samples inside the spring window.
    pub spring_salinity_offset: f64,
    /// Bathing season as (month, day) pairs, inclusive.
    pub season_start: (u32, u32),
    pub season_end: (u32, u32),
    /// Last day of the spring window.
    pub spring_end: (u32, u32),
    pub first_year: i32,
    pub n_seasons: u32,
    /// Probability that a rainfall column is exactly zero.
    pub rain_zero_prob: f64,
    /// Mean of the non-zero rainfall amounts, mm.
    pub rain_mean_mm: f64,
    pub seed: u64,
}

/// Station counts and E. coli/salinity moments of the nine monitoring points.
const STATIONS: [(&str, usize, f64, f64, f64); 9] = [
    ("BRH", 122, 36.0, 5.0, 35.0),
    ("KH", 123, 47.0, 7.0, 34.5),
    ("KBW", 144, 36.0, 7.0, 34.7),
    ("KBE", 149, 26.0, 5.0, 34.8),
    ("KVN", 119, 35.8, 8.0, 34.4),
    ("PNI", 20, 56.8, 26.0, 31.8),
    ("KW", 151, 78.0, 35.0, 31.6),
    ("KE", 155, 86.4, 60.0, 30.0),
    ("3M", 150, 72.3, 25.0, 30.5),
];

const DEFAULT_SPRING_OFFSET: f64 = 3.4;
const DEFAULT_SALINITY_SD: f64 = 1.5;
/// Share of the May 1 - Sep 30 season inside May 1 - Jun 15.
const SPRING_SHARE: f64 = 46.0 / 153.0;

impl Default for SynthConfig {
    /// 1133 records over 2009-2020. Configured salinity means are the
    /// station means plus the expected spring dip so the realised station
    /// means land on the targets.
    fn default() -> Self {
        let stations = STATIONS
            .iter()
            .map(|&(code, n, mean, median, sal)| {
                let mut p = StationProfile::from_moments(
                    code,
                    n,
                    mean,
                    median,
                    sal + SPRING_SHARE * DEFAULT_SPRING_OFFSET,
                    DEFAULT_SALINITY_SD,
                )
                .expect("built-in station moments are valid");
                if code == "PNI" {
                    p.first_year = Some(2019);
                }
                p
            })
            .collect();
        SynthConfig {
            stations,
            salinity_ecoli_corr: -0.5,
            spring_salinity_offset: DEFAULT_SPRING_OFFSET,
            season_start: (5, 1),
            season_end: (9, 30),
            spring_end: (6, 15),
            first_year: 2009,
            n_seasons: 12,
            rain_zero_prob: 0.8,
            rain_mean_mm: 25.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Every station scaled to `n` records.
    pub fn with_station_size(mut self, n: usize) -> Self {
        self.stations.iter_mut().for_each(|s| s.n = n);
        self
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_seasons as i32 - 1
    }

    pub fn total_records(&self) -> usize {
        self.stations.iter().map(|s| s.n).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.is_empty() {
            return Err(Error::config("synthetic config needs at least one station"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.stations {
            if s.code.trim().is_empty() || s.code.contains(',') {
                return Err(Error::config(format!("invalid station code `{}`", s.code)));
            }
            if !seen.insert(&s.code) {
                return Err(Error::config(format!("duplicate station `{}`", s.code)));
            }
            if s.n == 0 {
                return Err(Error::config(format!("station {} needs n >= 1", s.code)));
            }
            let finite = [
                s.ecoli_log_mean,
                s.ecoli_log_sd,
                s.salinity_mean,
                s.salinity_sd,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite || s.ecoli_log_sd < 0.0 || s.salinity_sd < 0.0 {
                return Err(Error::config(format!(
                    "station {} has invalid moments",
                    s.code
                )));
            }
            if let Some(y) = s.first_year {
                if y > self.last_year() {
                    return Err(Error::config(format!(
                        "station {} starts after the last season",
                        s.code
                    )));
                }
            }
        }
        if !(self.salinity_ecoli_corr > -1.0 && self.salinity_ecoli_corr <= 0.0) {
            return Err(Error::config(format!(
                "salinity/E. coli correlation must be in (-1, 0], got {}",
                self.salinity_ecoli_corr
            )));
        }
        if !(0.0..=1.0).contains(&self.rain_zero_prob) {
            return Err(Error::config("rain_zero_prob must be in [0, 1]"));
        }
        if !(self.rain_mean_mm > 0.0 && self.rain_mean_mm.is_finite()) {
            return Err(Error::config("rain_mean_mm must be positive"));
        }
        if !self.spring_salinity_offset.is_finite() {
            return Err(Error::config("spring_salinity_offset must be finite"));
        }
        if self.n_seasons == 0 {
            return Err(Error::config("n_seasons must be >= 1"));
        }
        let day = |(m, d): (u32, u32)| {
            NaiveDate::from_ymd_opt(2001, m, d)
                .ok_or_else(|| Error::config(format!("invalid month/day {m}/{d}")))
        };
        let (start, end) = (day(self.season_start)?, day(self.season_end)?);
        day(self.spring_end)?;
        if start > end {
            return Err(Error::config("season start is after season end"));
        }
        Ok(())
    }

    /// Pearson correlation of the latent normals that yields the target
    /// Spearman correlation: `rho = 2 sin(pi r / 6)`.
    pub fn latent_correlation(&self) -> f64 {
        2.0 * (std::f64::consts::PI * self.salinity_ecoli_corr / 6.0).sin()
    }
}

/// Clear-sky GHI (W/m²) at `hour` UTC on day-of-year `doy` near 45°N.
fn clear_sky_ghi(hour: f64, doy: u32) -> f64 {
    // Solar noon ~11:20 UTC at 14.4°E; day length from ~14.3 h (May) to ~12 h (late Sep).
    let seasonal = ((f64::from(doy) - 172.0) / 365.0 * 2.0 * std::f64::consts::PI).cos();
    let half_day = 6.0 + 1.3 * seasonal;
    let x = (hour - (11.33 - half_day)) / (2.0 * half_day);
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    let peak = 820.0 + 130.0 * seasonal;
    peak * (std::f64::consts::PI * x).sin().powf(1.2)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn generate_station(
    cfg: &SynthConfig,
    station: &StationProfile,
    seed: u64,
    out: &mut Vec<Measurement>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = cfg.latent_correlation();
    let rho_c = (1.0 - rho * rho).sqrt();
    let rain = Exp::new(1.0 / cfg.rain_mean_mm).map_err(|e| Error::config(e.to_string()))?;
    let first = station
        .first_year
        .unwrap_or(cfg.first_year)
        .max(cfg.first_year);
    let last = cfg.last_year();
    let date = |y: i32, (m, d): (u32, u32)| NaiveDate::from_ymd_opt(y, m, d).expect("validated");

    for _ in 0..station.n {
        let year = rng.random_range(first..=last);
        let start = date(year, cfg.season_start);
        let span = (date(year, cfg.season_end) - start).num_days();
        let day = start + Duration::days(rng.random_range(0..=span));
        let spring = day <= date(year, cfg.spring_end);
        let minutes: i64 = rng.random_range(6 * 60..10 * 60);
        let timestamp = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight"))
            + Duration::minutes(minutes);
        let hour = minutes as f64 / 60.0;
        let doy = day.ordinal();

        let z_ecoli = standard_normal(&mut rng);
        let z_sal = rho * z_ecoli + rho_c * standard_normal(&mut rng);
        let ecoli = (station.ecoli_log_mean + station.ecoli_log_sd * z_ecoli)
            .exp()
            .round()
            .min(f64::from(u32::MAX)) as u32;
        let offset = if spring {
            cfg.spring_salinity_offset
        } else {
            0.0
        };
        let salinity =
            (station.salinity_mean + station.salinity_sd * z_sal - offset).clamp(0.0, MAX_SALINITY);

        // Sea surface warms from ~17 °C in early May to ~25 °C in August.
        let season_phase = (f64::from(doy) - 121.0) / 110.0;
        let water_base = 17.0 + 8.0 * (std::f64::consts::FRAC_PI_2 * season_phase.min(1.0)).sin()
            - 2.5 * (season_phase - 1.0).max(0.0);
        let water_temp = water_base + 1.0 * standard_normal(&mut rng);
        let air_temp = water_temp + 1.5 + 2.0 * standard_normal(&mut rng);

        let cloud: f64 = 1.0 - 0.7 * rng.random::<f64>().powi(2);
        let ghi = (clear_sky_ghi(hour, doy) * cloud + 15.0 * standard_normal(&mut rng)).max(0.0);
        let cum: f64 = (0..16)
            .map(|q| clear_sky_ghi(hour - 4.0 + (f64::from(q) + 0.5) * 0.25, doy) * 0.25)
            .sum();
        let ghi_cum4h = cum * cloud;

        let rain_amount = |rng: &mut ChaCha8Rng| {
            if rng.random::<f64>() < cfg.rain_zero_prob {
                0.0
            } else {
                (rain.sample(rng) * 10.0).round() / 10.0
            }
        };
        let rain_4_7d = rain_amount(&mut rng);
        let rain_7_14d = rain_amount(&mut rng);

        out.push(Measurement {
            id: 0,
            station: station.code.clone(),
            timestamp,
            salinity: round_to(salinity, 2),
            water_temp: round_to(water_temp, 2),
            air_temp: round_to(air_temp, 2),
            ghi: round_to(ghi, 1),
            ghi_cum4h: round_to(ghi_cum4h, 1),
            rain_4_7d,
            rain_7_14d,
            ecoli,
            outlier: false,
        });
    }
    Ok(())
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Generates a dataset from `cfg`. Station `i` draws from the stream
/// `derive_seed(cfg.seed, i)`; records are ordered by timestamp then station
/// and numbered from 1.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.total_records());
    for (i, station) in cfg.stations.iter().enumerate() {
        generate_station(cfg, station, derive_seed(cfg.seed, i as u64), &mut records)?;
    }
    records.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.station.cmp(&b.station))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i as u64 + 1;
    }
    Ok(Dataset::new(
        records,
        format!("synthetic seed={}", cfg.seed),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::station_stats;
    use crate::stats;
    use chrono::Datelike;

    #[test]
    fn default_shape() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.total_records(), 1133);
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 1133);
        for (i, r) in d.records.iter().enumerate() {
            assert_eq!(r.id, i as u64 + 1);
            r.validate(0).unwrap();
            assert!((2009..=2020).contains(&r.timestamp.year()));
            assert!((5..=9).contains(&r.timestamp.month()));
        }
        assert!(d
            .records
            .iter()
            .filter(|r| r.station == "PNI")
            .all(|r| r.timestamp.year() >= 2019));
        let reparsed = Dataset::from_csv_str(&d.to_csv_string()).unwrap();
        assert_eq!(reparsed.records, d.records);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default().with_seed(11);
        assert_eq!(
            generate_dataset(&cfg).unwrap(),
            generate_dataset(&cfg).unwrap()
        );
        assert_ne!(
            generate_dataset(&cfg).unwrap().records,
            generate_dataset(&cfg.clone().with_seed(12))
                .unwrap()
                .records
        );
    }

    #[test]
    fn ke_calibration_large_sample() {
        let ke = StationProfile::from_moments("KE", 10_000, 86.4, 60.0, 31.0, 1.5).unwrap();
        let cfg = SynthConfig {
            stations: vec![ke],
            seed: 3,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        let s = &station_stats(&d)[0];
        assert!(
            (s.ecoli_mean - 86.4).abs() / 86.4 < 0.10,
            "mean {}",
            s.ecoli_mean
        );
        assert!(
            (s.ecoli_median - 60.0).abs() / 60.0 < 0.15,
            "median {}",
            s.ecoli_median
        );
    }

    #[test]
    fn independence_when_uncorrelated() {
        let mut cfg = SynthConfig {
            stations: vec![
                StationProfile::from_moments("KE", 10_000, 86.4, 60.0, 31.0, 1.5).unwrap(),
            ],
            salinity_ecoli_corr: 0.0,
            spring_salinity_offset: 0.0,
            seed: 8,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        let sal: Vec<f64> = d.records.iter().map(|r| r.salinity).collect();
        let rho = stats::spearman(&sal, &d.ecoli_values()).unwrap();
        assert!(rho.abs() <= 0.05, "rho {rho}");

        cfg.salinity_ecoli_corr = -0.5;
        let d = generate_dataset(&cfg).unwrap();
        let sal: Vec<f64> = d.records.iter().map(|r| r.salinity).collect();
        let rho = stats::spearman(&sal, &d.ecoli_values()).unwrap();
        assert!((rho + 0.5).abs() < 0.05, "rho {rho}");
    }

    #[test]
    fn rejects_invalid_configs() {
        let ok = SynthConfig::default();
        let mut c = ok.clone();
        c.salinity_ecoli_corr = 0.2;
        assert!(generate_dataset(&c).is_err());
        let mut c = ok.clone();
        c.stations[0].n = 0;
        assert!(generate_dataset(&c).is_err());
        let mut c = ok.clone();
        c.stations.clear();
        assert!(generate_dataset(&c).is_err());
        let mut c = ok.clone();
        c.rain_zero_prob = 1.5;
        assert!(generate_dataset(&c).is_err());
        let mut c = ok;
        c.season_end = (2, 30);
        assert!(generate_dataset(&c).is_err());
        assert!(StationProfile::from_moments("X", 1, 5.0, 10.0, 30.0, 1.0).is_err());
    }

    #[test]
    fn spring_is_fresher() {
        let d = generate_dataset(&SynthConfig::default().with_seed(4)).unwrap();
        let (spring, summer): (Vec<_>, Vec<_>) = d
            .records
            .iter()
            .partition(|r| (r.timestamp.month(), r.timestamp.day()) <= (6, 15));
        let mean = |v: &[&Measurement]| v.iter().map(|r| r.salinity).sum::<f64>() / v.len() as f64;
        assert!(mean(&summer) - mean(&spring) > 2.5);
    }

    #[test]
    fn clear_sky_shape() {
        assert_eq!(clear_sky_ghi(2.0, 180), 0.0);
        assert!(clear_sky_ghi(11.3, 180) > 900.0);
        assert!(clear_sky_ghi(9.0, 180) > clear_sky_ghi(7.0, 180));
        assert!(clear_sky_ghi(11.3, 180) > clear_sky_ghi(11.3, 260));
    }
}
