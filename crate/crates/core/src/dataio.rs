//! Measurement data model, CSV ingestion and serialization, outlier removal,
//! station statistics and binary labeling against a concentration limit.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Exact header of the measurement CSV format.
pub const CSV_HEADER: [&str; 12] = [
    "id",
    "station",
    "timestamp",
    "salinity",
    "water_temp",
    "air_temp",
    "ghi",
    "ghi_cum4h",
    "rain_4_7d",
    "rain_7_14d",
    "ecoli",
    "outlier",
];

pub const MAX_SALINITY: f64 = 45.0;

/// One sampling event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub id: u64,
    pub station: String,
    pub timestamp: DateTime<Utc>,
    /// Practical salinity (PSU).
    pub salinity: f64,
    /// °C
    pub water_temp: f64,
    /// °C
    pub air_temp: f64,
    /// Instantaneous global horizontal irradiance, W/m².
    pub ghi: f64,
    /// Irradiance accumulated over the previous 4 hours, Wh/m².
    pub ghi_cum4h: f64,
    /// Rainfall summed over days 4-7 before sampling, mm.
    pub rain_4_7d: f64,
    /// Rainfall summed over days 7-14 before sampling, mm.
    pub rain_7_14d: f64,
    /// E. coli, CFU/100 mL.
    pub ecoli: u32,
    pub outlier: bool,
}

impl Measurement {
    /// Checks the field-level invariants; `line` is only used for the message.
    pub fn validate(&self, line: u64) -> Result<()> {
        let bad = |message: String| Err(Error::Validation { line, message });
        if self.station.trim().is_empty() {
            return bad("station code is empty".into());
        }
        if !(0.0..=MAX_SALINITY).contains(&self.salinity) {
            return bad(format!(
                "salinity {} outside [0, {MAX_SALINITY}]",
                self.salinity
            ));
        }
        for feature in [Feature::WaterTemp, Feature::AirTemp] {
            let v = feature.value(self);
            if !v.is_finite() {
                return bad(format!("{} is not finite", feature.name()));
            }
        }
        for feature in [
            Feature::Ghi,
            Feature::GhiCum4h,
            Feature::Rain4To7,
            Feature::Rain7To14,
        ] {
            let v = feature.value(self);
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!(
                    "{} must be a non-negative number, got {v}",
                    feature.name()
                ));
            }
        }
        Ok(())
    }
}

/// Measurement columns usable as model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Salinity,
    WaterTemp,
    AirTemp,
    Ghi,
    GhiCum4h,
    #[serde(rename = "rain_4_7d")]
    Rain4To7,
    #[serde(rename = "rain_7_14d")]
    Rain7To14,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Salinity,
        Feature::WaterTemp,
        Feature::AirTemp,
        Feature::Ghi,
        Feature::GhiCum4h,
        Feature::Rain4To7,
        Feature::Rain7To14,
    ];

    /// Salinity, both temperatures and both irradiance columns.
    pub const BASE: [Feature; 5] = [
        Feature::Salinity,
        Feature::WaterTemp,
        Feature::AirTemp,
        Feature::Ghi,
        Feature::GhiCum4h,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Salinity => "salinity",
            Feature::WaterTemp => "water_temp",
            Feature::AirTemp => "air_temp",
            Feature::Ghi => "ghi",
            Feature::GhiCum4h => "ghi_cum4h",
            Feature::Rain4To7 => "rain_4_7d",
            Feature::Rain7To14 => "rain_7_14d",
        }
    }

    pub fn value(self, m: &Measurement) -> f64 {
        match self {
            Feature::Salinity => m.salinity,
            Feature::WaterTemp => m.water_temp,
            Feature::AirTemp => m.air_temp,
            Feature::Ghi => m.ghi,
            Feature::GhiCum4h => m.ghi_cum4h,
            Feature::Rain4To7 => m.rain_4_7d,
            Feature::Rain7To14 => m.rain_7_14d,
        }
    }

    pub fn parse_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<Feature>> {
        names.iter().map(|n| n.as_ref().parse()).collect()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown feature `{s}`")))
    }
}

/// Feature vector of `m` restricted to `features`, in that order.
pub fn feature_vector(m: &Measurement, features: &[Feature]) -> Vec<f64> {
    features.iter().map(|f| f.value(m)).collect()
}

/// An ordered collection of measurements.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Measurement>,
    pub provenance: String,
}

/// Non-fatal issue found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: u64,
    pub column: &'static str,
    pub message: String,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column `{}`: {}",
            self.line, self.column, self.message
        )
    }
}

impl Dataset {
    pub fn new(records: Vec<Measurement>, provenance: impl Into<String>) -> Self {
        Dataset {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A dataset with the same provenance and the given records.
    pub fn with_records(&self, records: Vec<Measurement>) -> Dataset {
        Dataset {
            records,
            provenance: self.provenance.clone(),
        }
    }

    pub fn ecoli_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| f64::from(r.ecoli)).collect()
    }

    pub fn count_above(&self, limit: f64) -> usize {
        self.records
            .iter()
            .filter(|r| f64::from(r.ecoli) > limit)
            .count()
    }

    /// Records sorted ascending by E. coli, ties broken by id.
    pub fn sorted_by_ecoli(&self) -> Vec<Measurement> {
        let mut v = self.records.clone();
        v.sort_by(|a, b| a.ecoli.cmp(&b.ecoli).then(a.id.cmp(&b.id)));
        v
    }

    pub fn stations(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.records.iter().map(|r| r.station.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Only the records of the listed stations, in original order.
    pub fn filter_stations(&self, stations: &[String]) -> Dataset {
        let keep: HashSet<&str> = stations.iter().map(String::as_str).collect();
        self.with_records(
            self.records
                .iter()
                .filter(|r| keep.contains(r.station.as_str()))
                .cloned()
                .collect(),
        )
    }

    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        parse_dataset(text.as_bytes())
    }

    /// Serializes to the measurement CSV format.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for r in &self.records {
            wtr.write_record([
                r.id.to_string(),
                r.station.clone(),
                format_timestamp(&r.timestamp),
                r.salinity.to_string(),
                r.water_temp.to_string(),
                r.air_temp.to_string(),
                r.ghi.to_string(),
                r.ghi_cum4h.to_string(),
                r.rain_4_7d.to_string(),
                r.rain_7_14d.to_string(),
                r.ecoli.to_string(),
                if r.outlier { "1" } else { "0" }.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing CSV into memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses the measurement CSV. Missing rainfall cells are logged and read as 0.
pub fn parse_dataset<R: Read>(input: R) -> Result<Dataset> {
    let (dataset, warnings) = parse_dataset_with_warnings(input)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(dataset)
}

/// Like [`parse_dataset`], returning the warnings instead of logging them.
pub fn parse_dataset_with_warnings<R: Read>(input: R) -> Result<(Dataset, Vec<ParseWarning>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut ids = HashSet::new();
    let mut saw_header = false;

    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                column: String::new(),
                message: e.to_string(),
            }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if !saw_header {
            let got: Vec<&str> = row.iter().collect();
            if got != CSV_HEADER {
                return Err(Error::Parse {
                    line,
                    column: "header".into(),
                    message: format!(
                        "expected `{}`, got `{}`",
                        CSV_HEADER.join(","),
                        got.join(",")
                    ),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                column: String::new(),
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
        }
        let m = parse_row(&row, line, &mut warnings)?;
        m.validate(line)?;
        if !ids.insert(m.id) {
            return Err(Error::Validation {
                line,
                message: format!("duplicate record id {}", m.id),
            });
        }
        records.push(m);
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            column: "header".into(),
            message: "missing header".into(),
        });
    }
    Ok((Dataset::new(records, "csv"), warnings))
}

fn parse_row(
    row: &csv::StringRecord,
    line: u64,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Measurement> {
    let cell = |idx: usize| row.get(idx).unwrap_or("").trim();
    let perr = |idx: usize, message: String| Error::Parse {
        line,
        column: CSV_HEADER[idx].to_string(),
        message,
    };
    let required = |idx: usize| -> Result<&str> {
        let s = cell(idx);
        if s.is_empty() {
            Err(perr(idx, "missing value".into()))
        } else {
            Ok(s)
        }
    };
    let real = |idx: usize| -> Result<f64> {
        let s = required(idx)?;
        s.parse::<f64>()
            .map_err(|_| perr(idx, format!("`{s}` is not a number")))
    };
    let mut rain = |idx: usize| -> Result<f64> {
        if cell(idx).is_empty() {
            warnings.push(ParseWarning {
                line,
                column: CSV_HEADER[idx],
                message: "missing rainfall, using 0 mm".into(),
            });
            Ok(0.0)
        } else {
            real(idx)
        }
    };

    let rain_4_7d = rain(8)?;
    let rain_7_14d = rain(9)?;

    let id_s = required(0)?;
    let id = id_s
        .parse::<u64>()
        .map_err(|_| perr(0, format!("`{id_s}` is not a non-negative integer id")))?;
    let station = required(1)?.to_string();
    let ts_s = required(2)?;
    let timestamp = DateTime::parse_from_rfc3339(ts_s)
        .map_err(|e| perr(2, format!("`{ts_s}` is not an ISO 8601 timestamp: {e}")))?
        .with_timezone(&Utc);

    let ecoli_s = required(10)?;
    let ecoli = match ecoli_s.parse::<i64>() {
        Ok(v) if v < 0 => {
            return Err(Error::Validation {
                line,
                message: format!("ecoli must be non-negative, got {v}"),
            })
        }
        Ok(v) => u32::try_from(v).map_err(|_| perr(10, format!("`{ecoli_s}` is out of range")))?,
        Err(_) => return Err(perr(10, format!("`{ecoli_s}` is not an integer count"))),
    };
    let outlier = match required(11)? {
        "0" => false,
        "1" => true,
        other => return Err(perr(11, format!("`{other}` is not 0 or 1"))),
    };

    Ok(Measurement {
        id,
        station,
        timestamp,
        salinity: real(3)?,
        water_temp: real(4)?,
        air_temp: real(5)?,
        ghi: real(6)?,
        ghi_cum4h: real(7)?,
        rain_4_7d,
        rain_7_14d,
        ecoli,
        outlier,
    })
}

/// Drops every record flagged as an outlier. The input is left untouched.
pub fn remove_outliers(d: &Dataset) -> Dataset {
    d.with_records(d.records.iter().filter(|r| !r.outlier).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub station: String,
    pub n: usize,
    pub ecoli_mean: f64,
    pub ecoli_median: f64,
    pub salinity_mean: f64,
    pub salinity_median: f64,
}

/// Per-station E. coli and salinity summaries, sorted by station code.
pub fn station_stats(d: &Dataset) -> Vec<StationStats> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &d.records {
        let e = groups.entry(r.station.as_str()).or_default();
        e.0.push(f64::from(r.ecoli));
        e.1.push(r.salinity);
    }
    groups
        .into_iter()
        .map(|(station, (ecoli, salinity))| StationStats {
            station: station.to_string(),
            n: ecoli.len(),
            ecoli_mean: stats::mean(&ecoli).unwrap_or(0.0),
            ecoli_median: stats::median(&ecoli).unwrap_or(0.0),
            salinity_mean: stats::mean(&salinity).unwrap_or(0.0),
            salinity_median: stats::median(&salinity).unwrap_or(0.0),
        })
        .collect()
}

/// Binary water-quality class relative to a limit. `ecoli == limit` is `Below`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Class {
    Below,
    Above,
}

impl Class {
    pub fn of(ecoli: u32, limit: f64) -> Class {
        if f64::from(ecoli) > limit {
            Class::Above
        } else {
            Class::Below
        }
    }
}

/// Measurements with their class under `limit` and the feature matrix over `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub base: Dataset,
    pub limit: f64,
    pub labels: Vec<Class>,
    pub features: Vec<Feature>,
    /// Row-major; `rows[i]` belongs to `base.records[i]`.
    pub rows: Vec<Vec<f64>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }
}

/// Labels `d` against `limit` and extracts the requested feature columns.
///
/// `limit` must be finite and non-negative.
pub fn label(d: &Dataset, limit: f64, features: &[Feature]) -> Result<LabeledDataset> {
    if !(limit.is_finite() && limit >= 0.0) {
        return Err(Error::config(format!(
            "limit must be a non-negative number, got {limit}"
        )));
    }
    if features.is_empty() {
        return Err(Error::config("at least one feature is required"));
    }
    Ok(LabeledDataset {
        base: d.clone(),
        limit,
        labels: d
            .records
            .iter()
            .map(|r| Class::of(r.ecoli, limit))
            .collect(),
        features: features.to_vec(),
        rows: d
            .records
            .iter()
            .map(|r| feature_vector(r, features))
            .collect(),
    })
}

/// [`label`] with features given by column name.
pub fn label_by_name<S: AsRef<str>>(
    d: &Dataset,
    limit: f64,
    names: &[S],
) -> Result<LabeledDataset> {
    label(d, limit, &Feature::parse_list(names)?)
}
