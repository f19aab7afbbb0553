//! Experiment harness: repeated single-forest runs, classification-limit
//! sweeps, repeated cascade runs and threshold tables, plus CSV, JSON,
//! markdown and SVG emission of their results.
//!
//! Run `i` of an experiment trains with seed `derive_seed(base_seed, i)`.
//! Aggregates are means and sample standard deviations accumulated in run
//! order, so a fixed base seed reproduces every number bit for bit.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cascade::{
    evaluate_cascade, fit_cascade, CascadeConfig, CascadeModel, CascadeReport, ThresholdPolicy,
};
use crate::dataio::{label, Class, Dataset, Feature, LabeledDataset, StationStats};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams, ImportanceVector};
use crate::seed::derive_seed;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        Some(MeanStd {
            mean: stats::mean(values)?,
            std: stats::sample_std(values)?,
        })
    }
}

/// Metrics of one trained single forest on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub limit: f64,
    pub n_test: usize,
    pub n_above: usize,
    pub accuracy: f64,
    /// Share of truly-above test records predicted above; `None` without any.
    pub tp_rate: Option<f64>,
    pub importance: ImportanceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleModelReport {
    pub limit: f64,
    pub n_test: usize,
    pub n_above: usize,
    pub n_runs: usize,
    pub accuracy: MeanStd,
    pub tp_rate: Option<MeanStd>,
    pub importance: Vec<FeatureImportance>,
}

/// Scores `forest` on an already labeled test set.
pub fn score_forest(forest: &Forest, test: &LabeledDataset) -> Result<RunMetrics> {
    if test.is_empty() {
        return Err(Error::Empty("test set is empty".into()));
    }
    let mut correct = 0usize;
    let mut above = 0usize;
    let mut above_hit = 0usize;
    for (row, &truth) in test.rows.iter().zip(&test.labels) {
        let predicted = forest.predict_class(row)?;
        if predicted == truth {
            correct += 1;
        }
        if truth == Class::Above {
            above += 1;
            if predicted == Class::Above {
                above_hit += 1;
            }
        }
    }
    Ok(RunMetrics {
        limit: test.limit,
        n_test: test.len(),
        n_above: above,
        accuracy: correct as f64 / test.len() as f64,
        tp_rate: (above > 0).then(|| above_hit as f64 / above as f64),
        importance: forest.feature_importance(),
    })
}

/// Aggregates runs over the same test set and limit.
pub fn average_runs(runs: &[RunMetrics]) -> Result<SingleModelReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Empty("no runs to average".into()))?;
    for r in runs {
        if r.limit != first.limit
            || r.n_test != first.n_test
            || r.n_above != first.n_above
            || r.importance.feature_names != first.importance.feature_names
            || r.tp_rate.is_some() != first.tp_rate.is_some()
        {
            return Err(Error::config("cannot average runs of different shapes"));
        }
    }
    let column = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let accuracy = MeanStd::of(&column(&|r| r.accuracy)).expect("non-empty");
    let tp_rate = first
        .tp_rate
        .map(|_| MeanStd::of(&column(&|r| r.tp_rate.unwrap_or(0.0))).expect("non-empty"));
    let importance = first
        .importance
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let ms = MeanStd::of(&column(&|r| r.importance.weights[j])).expect("non-empty");
            FeatureImportance {
                feature: name.clone(),
                mean: ms.mean,
                std: ms.std,
            }
        })
        .collect();
    Ok(SingleModelReport {
        limit: first.limit,
        n_test: first.n_test,
        n_above: first.n_above,
        n_runs: runs.len(),
        accuracy,
        tp_rate,
        importance,
    })
}

/// Trains `n_runs` forests on `train` labeled at `limit` and scores each on `test`.
pub fn single_model_runs(
    train: &Dataset,
    test: &Dataset,
    limit: f64,
    features: &[Feature],
    params: &ForestParams,
    n_runs: usize,
    base_seed: u64,
) -> Result<Vec<RunMetrics>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("train and test must be non-empty".into()));
    }
    if n_runs == 0 {
        return Err(Error::config("n_runs must be >= 1"));
    }
    let train_l = label(train, limit, features)?;
    let test_l = label(test, limit, features)?;
    (0..n_runs as u64)
        .map(|i| {
            let forest = Forest::fit(
                &train_l,
                &params.clone().with_seed(derive_seed(base_seed, i)),
            )?;
            score_forest(&forest, &test_l)
        })
        .collect()
}

pub fn single_model_experiment(
    train: &Dataset,
    test: &Dataset,
    limit: f64,
    features: &[Feature],
    params: &ForestParams,
    n_runs: usize,
    base_seed: u64,
) -> Result<SingleModelReport> {
    average_runs(&single_model_runs(
        train, test, limit, features, params, n_runs, base_seed,
    )?)
}

/// Test accuracy of always predicting the training majority class.
pub fn majority_baseline(train: &Dataset, test: &Dataset, limit: f64) -> f64 {
    let train_above = train.count_above(limit);
    let majority = if train_above * 2 > train.len() {
        Class::Above
    } else {
        Class::Below
    };
    let hits = test
        .records
        .iter()
        .filter(|r| Class::of(r.ecoli, limit) == majority)
        .count();
    hits as f64 / test.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub limit: f64,
    pub n_above: usize,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub tp_rate: Option<f64>,
    pub tp_rate_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn limits(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.limit).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }
}

/// One averaged single-model experiment per limit. Limits must be strictly increasing.
pub fn limit_sweep(
    train: &Dataset,
    test: &Dataset,
    limits: &[f64],
    features: &[Feature],
    params: &ForestParams,
    n_runs: usize,
    base_seed: u64,
) -> Result<SweepCurve> {
    if limits.is_empty() {
        return Err(Error::config("limit sweep needs at least one limit"));
    }
    if limits
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::config("sweep limits must be strictly increasing"));
    }
    let points = limits
        .iter()
        .map(|&limit| {
            let r =
                single_model_experiment(train, test, limit, features, params, n_runs, base_seed)?;
            Ok(SweepPoint {
                limit,
                n_above: r.n_above,
                accuracy: r.accuracy.mean,
                accuracy_std: r.accuracy.std,
                tp_rate: r.tp_rate.map(|t| t.mean),
                tp_rate_std: r.tp_rate.map(|t| t.std),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve { points })
}

/// Aggregate of repeated cascade runs on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub limit: f64,
    pub n_runs: usize,
    pub n_test: usize,
    pub n_above_limit: usize,
    pub true_positive: MeanStd,
    pub tp_rate: Option<MeanStd>,
    pub false_negative: MeanStd,
    pub fn_rate: Option<MeanStd>,
    pub suspects: MeanStd,
    /// Mean EXCELLENT exits per stage.
    pub per_stage_exits: Vec<f64>,
    pub stages: Vec<StageSummary>,
}

/// Stage layout (identical across runs) with run-averaged feature importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub n_train: usize,
    pub train_lower_bound: Option<f64>,
    pub median: f64,
    pub p25: f64,
    pub theta: f64,
    pub weak: Option<f64>,
    pub importance: Vec<FeatureImportance>,
}

/// Aggregates per-run reports of one cascade configuration.
pub fn summarize_cascade_runs(
    reports: &[CascadeReport],
    models: &[StageLayout],
) -> Result<CascadeSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Empty("no cascade runs to summarize".into()))?;
    if reports.iter().any(|r| {
        r.n_test != first.n_test
            || r.n_above_limit != first.n_above_limit
            || r.per_stage_exits.len() != first.per_stage_exits.len()
            || r.limit != first.limit
    }) {
        return Err(Error::config(
            "cannot summarize cascade runs of different shapes",
        ));
    }
    let col = |f: &dyn Fn(&CascadeReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let ms = |v: Vec<f64>| MeanStd::of(&v).expect("non-empty");
    let n_stages = first.per_stage_exits.len();
    let per_stage_exits = (0..n_stages)
        .map(|k| stats::mean(&col(&|r| r.per_stage_exits[k] as f64)).expect("non-empty"))
        .collect();
    Ok(CascadeSummary {
        limit: first.limit,
        n_runs: reports.len(),
        n_test: first.n_test,
        n_above_limit: first.n_above_limit,
        true_positive: ms(col(&|r| r.true_positive as f64)),
        tp_rate: first
            .tp_rate
            .map(|_| ms(col(&|r| r.tp_rate.unwrap_or(0.0)))),
        false_negative: ms(col(&|r| r.false_negative as f64)),
        fn_rate: first
            .fn_rate
            .map(|_| ms(col(&|r| r.fn_rate.unwrap_or(0.0)))),
        suspects: ms(col(&|r| r.suspects as f64)),
        per_stage_exits,
        stages: average_layouts(models),
    })
}

/// Stage structure and importance of one trained cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLayout {
    pub stages: Vec<(crate::cascade::StageSpec, ImportanceVector)>,
}

impl StageLayout {
    pub fn of(model: &CascadeModel) -> StageLayout {
        StageLayout {
            stages: model
                .stages
                .iter()
                .map(|s| {
                    let mut spec = s.clone();
                    // The forest itself is not needed once its importance is taken.
                    spec.forest.trees.clear();
                    (spec, s.forest.feature_importance())
                })
                .collect(),
        }
    }
}

fn average_layouts(layouts: &[StageLayout]) -> Vec<StageSummary> {
    let Some(first) = layouts.first() else {
        return Vec::new();
    };
    first
        .stages
        .iter()
        .enumerate()
        .map(|(k, (spec, imp))| {
            let importance = imp
                .feature_names
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    let v: Vec<f64> = layouts
                        .iter()
                        .filter_map(|l| l.stages.get(k))
                        .map(|(_, i)| i.weights[j])
                        .collect();
                    let ms = MeanStd::of(&v).expect("non-empty");
                    FeatureImportance {
                        feature: name.clone(),
                        mean: ms.mean,
                        std: ms.std,
                    }
                })
                .collect();
            StageSummary {
                stage: spec.index,
                n_train: spec.n_train,
                train_lower_bound: spec.train_lower_bound,
                median: spec.median,
                p25: spec.p25,
                theta: spec.theta,
                weak: spec.weak,
                importance,
            }
        })
        .collect()
}

/// Trains `n_runs` cascades and evaluates each under every policy in
/// `policies` (thresholds only; the stages are trained once per run with
/// `config.policy`'s feature masks). Returns one summary per policy.
pub fn cascade_threshold_experiment(
    train: &Dataset,
    test: &Dataset,
    config: &CascadeConfig,
    policies: &[ThresholdPolicy],
    n_runs: usize,
    base_seed: u64,
    limit: f64,
) -> Result<Vec<CascadeSummary>> {
    if n_runs == 0 {
        return Err(Error::config("n_runs must be >= 1"));
    }
    if policies.is_empty() {
        return Err(Error::config("at least one threshold policy is required"));
    }
    let mut reports: Vec<Vec<CascadeReport>> = vec![Vec::with_capacity(n_runs); policies.len()];
    let mut layouts: Vec<Vec<StageLayout>> = vec![Vec::with_capacity(n_runs); policies.len()];
    for i in 0..n_runs as u64 {
        let mut cfg = config.clone();
        cfg.params.seed = derive_seed(base_seed, i);
        let model = fit_cascade(train, &cfg)?;
        for (j, policy) in policies.iter().enumerate() {
            let m = model.with_thresholds(policy)?;
            reports[j].push(evaluate_cascade(&m, test, limit)?);
            layouts[j].push(StageLayout::of(&m));
        }
    }
    reports
        .iter()
        .zip(&layouts)
        .map(|(r, l)| summarize_cascade_runs(r, l))
        .collect()
}

/// Repeated cascade runs with `config`'s own policy.
pub fn cascade_experiment(
    train: &Dataset,
    test: &Dataset,
    config: &CascadeConfig,
    n_runs: usize,
    base_seed: u64,
    limit: f64,
) -> Result<CascadeSummary> {
    let mut v = cascade_threshold_experiment(
        train,
        test,
        config,
        std::slice::from_ref(&config.policy),
        n_runs,
        base_seed,
        limit,
    )?;
    Ok(v.remove(0))
}

// ---------------------------------------------------------------------------
// Emission

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Config fingerprint and seed stamped into every emitted artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Missing,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Real)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn markdown(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format!("{v:.4}"),
            Cell::Text(s) => s.replace('|', "\\|"),
            Cell::Missing => "/".into(),
        }
    }
}

/// A record type that renders as one table row.
pub trait Tabular {
    fn header(&self) -> Vec<String>;
    fn row(&self) -> Vec<Cell>;
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Tabular for SingleModelReport {
    fn header(&self) -> Vec<String> {
        let mut h = names(&[
            "limit",
            "n_test",
            "n_above",
            "n_runs",
            "accuracy_mean",
            "accuracy_std",
            "tp_rate_mean",
            "tp_rate_std",
        ]);
        for f in &self.importance {
            h.push(format!("importance_{}_mean", f.feature));
            h.push(format!("importance_{}_std", f.feature));
        }
        h
    }

    fn row(&self) -> Vec<Cell> {
        let mut r = vec![
            self.limit.into(),
            self.n_test.into(),
            self.n_above.into(),
            self.n_runs.into(),
            self.accuracy.mean.into(),
            self.accuracy.std.into(),
            self.tp_rate.map(|t| t.mean).into(),
            self.tp_rate.map(|t| t.std).into(),
        ];
        for f in &self.importance {
            r.push(f.mean.into());
            r.push(f.std.into());
        }
        r
    }
}

impl Tabular for SweepPoint {
    fn header(&self) -> Vec<String> {
        names(&[
            "limit",
            "n_above",
            "accuracy",
            "accuracy_std",
            "tp_rate",
            "tp_rate_std",
        ])
    }

    fn row(&self) -> Vec<Cell> {
        vec![
            self.limit.into(),
            self.n_above.into(),
            self.accuracy.into(),
            self.accuracy_std.into(),
            self.tp_rate.into(),
            self.tp_rate_std.into(),
        ]
    }
}

impl Tabular for CascadeReport {
    fn header(&self) -> Vec<String> {
        let mut h = names(&[
            "limit",
            "n_test",
            "n_above_limit",
            "true_positive",
            "tp_rate",
            "false_negative",
            "fn_rate",
            "suspects",
            "double_weak_exits",
        ]);
        h.extend((1..=self.per_stage_exits.len()).map(|k| format!("exits_stage_{k}")));
        h
    }

    fn row(&self) -> Vec<Cell> {
        let mut r = vec![
            self.limit.into(),
            self.n_test.into(),
            self.n_above_limit.into(),
            self.true_positive.into(),
            self.tp_rate.into(),
            self.false_negative.into(),
            self.fn_rate.into(),
            self.suspects.into(),
            self.double_weak_exits.into(),
        ];
        r.extend(self.per_stage_exits.iter().map(|&e| Cell::from(e)));
        r
    }
}

impl Tabular for CascadeSummary {
    fn header(&self) -> Vec<String> {
        let mut h = names(&[
            "limit",
            "n_runs",
            "n_test",
            "n_above_limit",
            "true_positive_mean",
            "true_positive_std",
            "tp_rate_mean",
            "false_negative_mean",
            "false_negative_std",
            "fn_rate_mean",
            "suspects_mean",
        ]);
        h.extend((1..=self.per_stage_exits.len()).map(|k| format!("exits_stage_{k}_mean")));
        h
    }

    fn row(&self) -> Vec<Cell> {
        let mut r = vec![
            self.limit.into(),
            self.n_runs.into(),
            self.n_test.into(),
            self.n_above_limit.into(),
            self.true_positive.mean.into(),
            self.true_positive.std.into(),
            self.tp_rate.map(|t| t.mean).into(),
            self.false_negative.mean.into(),
            self.false_negative.std.into(),
            self.fn_rate.map(|t| t.mean).into(),
            self.suspects.mean.into(),
        ];
        r.extend(self.per_stage_exits.iter().map(|&e| Cell::from(e)));
        r
    }
}

impl Tabular for StageSummary {
    fn header(&self) -> Vec<String> {
        let mut h = names(&[
            "stage",
            "n_train",
            "train_lower_bound",
            "median",
            "p25",
            "theta",
            "weak",
        ]);
        h.extend(
            self.importance
                .iter()
                .map(|f| format!("importance_{}", f.feature)),
        );
        h
    }

    fn row(&self) -> Vec<Cell> {
        let mut r = vec![
            self.stage.into(),
            self.n_train.into(),
            self.train_lower_bound.into(),
            self.median.into(),
            self.p25.into(),
            self.theta.into(),
            self.weak.into(),
        ];
        r.extend(self.importance.iter().map(|f| Cell::from(f.mean)));
        r
    }
}

impl Tabular for StationStats {
    fn header(&self) -> Vec<String> {
        names(&[
            "station",
            "n",
            "ecoli_mean",
            "ecoli_median",
            "salinity_mean",
            "salinity_median",
        ])
    }

    fn row(&self) -> Vec<Cell> {
        vec![
            self.station.as_str().into(),
            self.n.into(),
            self.ecoli_mean.into(),
            self.ecoli_median.into(),
            self.salinity_mean.into(),
            self.salinity_median.into(),
        ]
    }
}

pub const REPORT_FORMAT: &str = "seawater-cascade/report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Serialize)]
struct JsonReport<'a, R> {
    format: &'static str,
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a Provenance>,
    rows: &'a [R],
}

/// Renders `rows` as CSV, JSON or a markdown table. Column order is fixed by
/// the row type; with provenance, CSV gains `config_hash` and `seed` columns,
/// JSON a `provenance` object and markdown a leading comment.
pub fn emit_report<R: Tabular + Serialize>(
    rows: &[R],
    format: ReportFormat,
    provenance: Option<&Provenance>,
) -> Result<Vec<u8>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Empty("nothing to report".into()))?;
    let header = first.header();
    if rows.iter().any(|r| r.header() != header) {
        return Err(Error::config("report rows have different columns"));
    }
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&JsonReport {
                format: REPORT_FORMAT,
                version: REPORT_VERSION,
                provenance,
                rows,
            })?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut wtr = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            let mut h = header;
            if provenance.is_some() {
                h.extend(names(&["config_hash", "seed"]));
            }
            wtr.write_record(&h)?;
            for r in rows {
                let mut cells: Vec<String> = r.row().iter().map(Cell::csv).collect();
                if let Some(p) = provenance {
                    cells.push(p.config_hash.clone());
                    cells.push(p.seed.to_string());
                }
                wtr.write_record(&cells)?;
            }
            wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            if let Some(p) = provenance {
                writeln!(s, "<!-- config_hash={} seed={} -->", p.config_hash, p.seed).unwrap();
            }
            writeln!(s, "| {} |", header.join(" | ")).unwrap();
            writeln!(s, "|{}", "---|".repeat(header.len())).unwrap();
            for r in rows {
                let cells: Vec<String> = r.row().iter().map(Cell::markdown).collect();
                writeln!(s, "| {} |", cells.join(" | ")).unwrap();
            }
            Ok(s.into_bytes())
        }
    }
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;
const ACCURACY_COLOR: &str = "#1f77b4";
const TP_COLOR: &str = "#d62728";

/// SVG line chart of accuracy and TP rate against the classification limit.
pub fn emit_plot(curve: &SweepCurve, provenance: Option<&Provenance>) -> Result<String> {
    if curve.points.is_empty() {
        return Err(Error::Empty("cannot plot an empty curve".into()));
    }
    let lo = curve.points[0].limit;
    let hi = curve.points[curve.points.len() - 1].limit;
    let inner_w = PLOT_W - MARGIN_L - MARGIN_R;
    let inner_h = PLOT_H - MARGIN_T - MARGIN_B;
    let x_of = |limit: f64| {
        if hi > lo {
            MARGIN_L + (limit - lo) / (hi - lo) * inner_w
        } else {
            MARGIN_L + inner_w / 2.0
        }
    };
    let y_of = |rate: f64| MARGIN_T + (1.0 - rate.clamp(0.0, 1.0)) * inner_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    if let Some(p) = provenance {
        writeln!(s, "<!-- config_hash={} seed={} -->", p.config_hash, p.seed).unwrap();
    }
    writeln!(
        s,
        r#"<rect width="{PLOT_W}" height="{PLOT_H}" fill="white"/>"#
    )
    .unwrap();
    // axes
    let (x0, x1, y0, y1) = (MARGIN_L, MARGIN_L + inner_w, MARGIN_T, MARGIN_T + inner_h);
    writeln!(
        s,
        r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=5 {
        let rate = f64::from(i) / 5.0;
        let y = y_of(rate);
        writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}%</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            rate * 100.0
        )
        .unwrap();
    }
    for p in &curve.points {
        let x = x_of(p.limit);
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 18.0,
            p.limit
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Classification limit (CFU/100 mL)</text>"#,
        MARGIN_L + inner_w / 2.0,
        PLOT_H - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">Rate</text>"#,
        MARGIN_T + inner_h / 2.0,
        MARGIN_T + inner_h / 2.0
    )
    .unwrap();

    type Series<'a> = (&'a str, &'a str, Vec<(f64, f64)>);
    let series: [Series; 2] = [
        (
            "accuracy",
            ACCURACY_COLOR,
            curve.points.iter().map(|p| (p.limit, p.accuracy)).collect(),
        ),
        (
            "tp_rate",
            TP_COLOR,
            curve
                .points
                .iter()
                .filter_map(|p| p.tp_rate.map(|t| (p.limit, t)))
                .collect(),
        ),
    ];
    for (name, color, pts) in &series {
        writeln!(s, r#"<g class="series" id="{name}">"#).unwrap();
        if pts.len() > 1 {
            let coords: Vec<String> = pts
                .iter()
                .map(|&(l, r)| format!("{:.2},{:.2}", x_of(l), y_of(r)))
                .collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                coords.join(" ")
            )
            .unwrap();
        }
        for &(l, r) in pts {
            writeln!(
                s,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                x_of(l),
                y_of(r)
            )
            .unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    let lx = x1 + 20.0;
    for (i, (label, color)) in [
        ("Model accuracy", ACCURACY_COLOR),
        ("True positive rate", TP_COLOR),
    ]
    .iter()
    .enumerate()
    {
        let ly = MARGIN_T + 10.0 + 20.0 * i as f64;
        writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{color}"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            ly - 10.0,
            lx + 18.0,
            ly
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
