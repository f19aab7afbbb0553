//! Train/test partitioning: stride sampling over the E. coli-sorted records,
//! held-out years, held-out stations, E. coli-preserving thinning and
//! station groups.

use std::fmt;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Measurement};
use crate::error::{Error, Result};

/// Offset of the first uniform split ("Set 1").
pub const SET1_OFFSET: usize = 4;
/// Offset of the second uniform split ("Set 2").
pub const SET2_OFFSET: usize = 2;
pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    Uniform { k: usize, offset: usize },
    Temporal { year: i32 },
    Spatial { station: String },
}

impl SplitSpec {
    pub fn set1() -> Self {
        SplitSpec::Uniform {
            k: DEFAULT_STRIDE,
            offset: SET1_OFFSET,
        }
    }

    pub fn set2() -> Self {
        SplitSpec::Uniform {
            k: DEFAULT_STRIDE,
            offset: SET2_OFFSET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SplitSpec::Uniform { k, offset } => {
                if *k < 2 {
                    return Err(Error::config(format!(
                        "uniform stride k must be >= 2, got {k}"
                    )));
                }
                if offset >= k {
                    return Err(Error::config(format!(
                        "uniform offset {offset} must be < k = {k}"
                    )));
                }
            }
            SplitSpec::Temporal { .. } => {}
            SplitSpec::Spatial { station } => {
                if station.is_empty() {
                    return Err(Error::config("spatial split needs a station code"));
                }
            }
        }
        Ok(())
    }

    /// Returns `(train, test)`.
    pub fn apply(&self, d: &Dataset) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        match self {
            SplitSpec::Uniform { k, offset } => uniform_split(d, *k, *offset),
            SplitSpec::Temporal { year } => temporal_split(d, *year),
            SplitSpec::Spatial { station } => spatial_split(d, station),
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Uniform { k, offset } => write!(f, "uniform:k={k},offset={offset}"),
            SplitSpec::Temporal { year } => write!(f, "temporal:year={year}"),
            SplitSpec::Spatial { station } => write!(f, "spatial:station={station}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    /// Parses `uniform:k=5,offset=4`, `temporal:year=2019` or `spatial:station=KW`.
    /// `set1` and `set2` are accepted as shorthands.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "set1" => return Ok(SplitSpec::set1()),
            "set2" => return Ok(SplitSpec::set2()),
            _ => {}
        }
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let mut k = None;
        let mut offset = None;
        let mut year = None;
        let mut station = None;
        for pair in args.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed split argument `{pair}`")))?;
            let value = value.trim();
            let int = |v: &str| {
                v.parse::<i64>()
                    .map_err(|_| Error::config(format!("`{v}` is not an integer in split `{s}`")))
            };
            match key.trim() {
                "k" => k = Some(int(value)?),
                "offset" => offset = Some(int(value)?),
                "year" => year = Some(int(value)?),
                "station" => station = Some(value.to_string()),
                other => return Err(Error::config(format!("unknown split argument `{other}`"))),
            }
        }
        let non_negative = |v: i64, name: &str| {
            usize::try_from(v).map_err(|_| Error::config(format!("{name} must be non-negative")))
        };
        let spec = match kind.trim() {
            "uniform" => SplitSpec::Uniform {
                k: non_negative(k.unwrap_or(DEFAULT_STRIDE as i64), "k")?,
                offset: non_negative(offset.unwrap_or(SET1_OFFSET as i64), "offset")?,
            },
            "temporal" => SplitSpec::Temporal {
                year: year
                    .ok_or_else(|| Error::config("temporal split needs year=YYYY"))?
                    .try_into()
                    .map_err(|_| Error::config("year out of range"))?,
            },
            "spatial" => SplitSpec::Spatial {
                station: station
                    .ok_or_else(|| Error::config("spatial split needs station=CODE"))?,
            },
            other => return Err(Error::config(format!("unknown split kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sorts by E. coli (ties by id) and sends every `k`-th record, starting at
/// `offset`, to the test set. Both outputs keep the sorted order.
pub fn uniform_split(d: &Dataset, k: usize, offset: usize) -> Result<(Dataset, Dataset)> {
    if k < 2 || offset >= k {
        return Err(Error::config(format!(
            "invalid uniform split k={k}, offset={offset}"
        )));
    }
    if d.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    type Indexed = Vec<(usize, Measurement)>;
    let (test, train): (Indexed, Indexed) = d
        .sorted_by_ecoli()
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % k == offset);
    let strip = |v: Indexed| v.into_iter().map(|(_, m)| m).collect();
    Ok((d.with_records(strip(train)), d.with_records(strip(test))))
}

fn partition_by(d: &Dataset, in_test: impl Fn(&Measurement) -> bool) -> (Dataset, Dataset) {
    let (test, train): (Vec<Measurement>, Vec<Measurement>) =
        d.records.iter().cloned().partition(|m| in_test(m));
    (d.with_records(train), d.with_records(test))
}

/// Holds out every record sampled in `year`.
pub fn temporal_split(d: &Dataset, year: i32) -> Result<(Dataset, Dataset)> {
    let (train, test) = partition_by(d, |m| m.timestamp.year() == year);
    if test.is_empty() {
        return Err(Error::EmptyTest);
    }
    if train.is_empty() {
        return Err(Error::EmptyTrain);
    }
    Ok((train, test))
}

/// Holds out every record of `station`.
pub fn spatial_split(d: &Dataset, station: &str) -> Result<(Dataset, Dataset)> {
    let (train, test) = partition_by(d, |m| m.station == station);
    if test.is_empty() {
        return Err(Error::config(format!(
            "station `{station}` not present in dataset"
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyTrain);
    }
    Ok((train, test))
}

/// Reduces `d` to exactly `target_size` records while keeping the shape of
/// the E. coli distribution.
///
/// Records are sorted by E. coli and `m = |d| - target_size` of them are
/// removed at evenly spaced sorted positions: index `i` goes iff
/// `floor((i + 1) m / |d|) > floor(i m / |d|)`. When `|d| / m` is an integer
/// `n` this is exactly "remove every n-th record". A no-op request returns
/// the input unchanged; otherwise the result is in sorted order.
pub fn thin(d: &Dataset, target_size: usize) -> Result<Dataset> {
    let n = d.len();
    if target_size == 0 || target_size > n {
        return Err(Error::config(format!(
            "thinning target {target_size} must be in 1..={n}"
        )));
    }
    if target_size == n {
        return Ok(d.clone());
    }
    let remove = (n - target_size) as u128;
    let total = n as u128;
    let kept = d
        .sorted_by_ecoli()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| {
            let i = *i as u128;
            (i + 1) * remove / total == i * remove / total
        })
        .map(|(_, m)| m)
        .collect();
    Ok(d.with_records(kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GroupName {
    Low,
    High,
    All,
}

impl FromStr for GroupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LOW" => Ok(GroupName::Low),
            "HIGH" => Ok(GroupName::High),
            "ALL" => Ok(GroupName::All),
            other => Err(Error::config(format!("unknown station group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationGroup {
    pub name: GroupName,
    pub stations: Vec<String>,
}

/// The low- and high-E. coli station groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationGroups {
    pub low: Vec<String>,
    pub high: Vec<String>,
}

impl Default for StationGroups {
    fn default() -> Self {
        let v = |s: &[&str]| s.iter().map(|c| c.to_string()).collect();
        StationGroups {
            low: v(&["BRH", "KH", "KBW", "KBE", "KVN"]),
            high: v(&["PNI", "KW", "KE", "3M"]),
        }
    }
}

impl StationGroups {
    pub fn validate(&self) -> Result<()> {
        if self.low.is_empty() || self.high.is_empty() {
            return Err(Error::config("station groups must be non-empty"));
        }
        if let Some(s) = self.low.iter().find(|s| self.high.contains(s)) {
            return Err(Error::config(format!(
                "station `{s}` is in both LOW and HIGH groups"
            )));
        }
        Ok(())
    }

    pub fn group(&self, name: GroupName) -> Result<StationGroup> {
        self.validate()?;
        let stations = match name {
            GroupName::Low => self.low.clone(),
            GroupName::High => self.high.clone(),
            GroupName::All => self.low.iter().chain(&self.high).cloned().collect(),
        };
        Ok(StationGroup { name, stations })
    }
}

impl StationGroup {
    /// Restricts `d` to this group. `ALL` keeps every record, including
    /// stations outside both configured groups.
    pub fn select(&self, d: &Dataset) -> Dataset {
        match self.name {
            GroupName::All => d.clone(),
            _ => d.filter_stations(&self.stations),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::record;
    use chrono::{TimeZone, Utc};

    fn ladder(n: usize) -> Dataset {
        // ids deliberately not in ecoli order
        Dataset::new(
            (0..n)
                .map(|i| record((n - i) as u64 * 7, "KE", i as u32 * 3))
                .collect(),
            "t",
        )
    }

    fn ecolis(d: &Dataset) -> Vec<u32> {
        d.records.iter().map(|r| r.ecoli).collect()
    }

    #[test]
    fn uniform_ten_records() {
        let d = ladder(10);
        let (train, test) = uniform_split(&d, 5, 0).unwrap();
        assert_eq!(ecolis(&test), vec![0, 15]);
        assert_eq!(train.len(), 8);
    }

    #[test]
    fn uniform_minimal() {
        let d = Dataset::new(vec![record(2, "KE", 9), record(1, "KE", 1)], "t");
        let (train, test) = uniform_split(&d, 2, 1).unwrap();
        assert_eq!(ecolis(&test), vec![9]);
        assert_eq!(ecolis(&train), vec![1]);
    }

    #[test]
    fn uniform_1133_sizes() {
        let (train, test) = uniform_split(&ladder(1133), 5, SET1_OFFSET).unwrap();
        assert_eq!((train.len(), test.len()), (907, 226));
        let (train, test) = uniform_split(&ladder(1133), 5, SET2_OFFSET).unwrap();
        assert_eq!((train.len(), test.len()), (906, 227));
    }

    #[test]
    fn uniform_ties_broken_by_id() {
        let d = Dataset::new(
            vec![record(5, "KE", 1), record(3, "KE", 1), record(4, "KE", 1)],
            "t",
        );
        let (_, test) = uniform_split(&d, 3, 0).unwrap();
        assert_eq!(test.records[0].id, 3);
    }

    #[test]
    fn uniform_errors() {
        assert!(uniform_split(&ladder(4), 1, 0).is_err());
        assert!(uniform_split(&ladder(4), 5, 5).is_err());
        assert!(uniform_split(&Dataset::default(), 5, 0).is_err());
    }

    fn dated(id: u64, station: &str, year: i32) -> Measurement {
        let mut m = record(id, station, id as u32);
        m.timestamp = Utc.with_ymd_and_hms(year, 6, 20, 8, 0, 0).unwrap();
        m
    }

    #[test]
    fn temporal() {
        let d = Dataset::new(
            vec![
                dated(1, "KE", 2019),
                dated(2, "KE", 2020),
                dated(3, "KW", 2019),
                dated(4, "KW", 2018),
            ],
            "t",
        );
        let (train, test) = temporal_split(&d, 2019).unwrap();
        assert_eq!(
            test.records.iter().map(|r| r.id).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert_eq!(train.len(), 2);
        assert!(matches!(temporal_split(&d, 2011), Err(Error::EmptyTest)));
        let one_year = Dataset::new(vec![dated(1, "KE", 2019)], "t");
        assert!(matches!(
            temporal_split(&one_year, 2019),
            Err(Error::EmptyTrain)
        ));
    }

    #[test]
    fn spatial() {
        let d = Dataset::new(
            vec![
                dated(1, "KE", 2019),
                dated(2, "KW", 2020),
                dated(3, "KW", 2019),
            ],
            "t",
        );
        let (train, test) = spatial_split(&d, "KW").unwrap();
        assert_eq!((train.len(), test.len()), (1, 2));
        assert!(matches!(spatial_split(&d, "BRH"), Err(Error::Config(_))));
        let single = Dataset::new(vec![dated(1, "KE", 2019)], "t");
        assert!(matches!(
            spatial_split(&single, "KE"),
            Err(Error::EmptyTrain)
        ));
    }

    #[test]
    fn thin_every_fifth() {
        let d = ladder(10);
        let t = thin(&d, 8).unwrap();
        let sorted = d.sorted_by_ecoli();
        let expected: Vec<u32> = sorted
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 4 && *i != 9)
            .map(|(_, m)| m.ecoli)
            .collect();
        assert_eq!(ecolis(&t), expected);
    }

    #[test]
    fn thin_exact_size_and_noop() {
        let d = ladder(1133);
        assert_eq!(thin(&d, 1133).unwrap(), d);
        assert_eq!(thin(&d, 479).unwrap().len(), 479);
        let (train, test) = uniform_split(&thin(&d, 479).unwrap(), 5, SET1_OFFSET).unwrap();
        assert_eq!(train.len() + test.len(), 479);
        assert!(train.len().abs_diff(383) <= 1, "train {}", train.len());
        assert!(thin(&d, 1134).is_err());
        assert!(thin(&d, 0).is_err());
    }

    #[test]
    fn spec_strings() {
        for s in [
            "uniform:k=5,offset=4",
            "temporal:year=2019",
            "spatial:station=KW",
        ] {
            let spec: SplitSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!("set2".parse::<SplitSpec>().unwrap(), SplitSpec::set2());
        assert!("uniform:k=5,offset=5".parse::<SplitSpec>().is_err());
        assert!("random:p=0.2".parse::<SplitSpec>().is_err());
        assert!("temporal".parse::<SplitSpec>().is_err());
        assert!("uniform:k=x".parse::<SplitSpec>().is_err());
    }

    #[test]
    fn groups() {
        let g = StationGroups::default();
        let low = g.group(GroupName::Low).unwrap();
        let high = g.group(GroupName::High).unwrap();
        assert!(low.stations.iter().all(|s| !high.stations.contains(s)));
        assert_eq!(g.group(GroupName::All).unwrap().stations.len(), 9);
        let bad = StationGroups {
            low: vec!["KE".into()],
            high: vec!["KE".into()],
        };
        assert!(bad.group(GroupName::Low).is_err());
        let d = Dataset::new(vec![record(1, "KE", 1), record(2, "BRH", 2)], "t");
        assert_eq!(high.select(&d).records[0].station, "KE");
        assert_eq!(g.group(GroupName::All).unwrap().select(&d).len(), 2);
    }
}
