//! The cascade filter.
//!
//! Stage 1 is trained on the whole training set, labeled against its own
//! median. Each following stage drops the records below the previous stage's
//! 25th percentile and relabels against the new median, so every stage sees
//! a balanced problem while the stage medians climb. At prediction time a
//! measurement exits as EXCELLENT at the first stage that is confident enough
//! it lies below that stage's median; otherwise it stays SUSPECT.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{feature_vector, label, Class, Dataset, Feature, Measurement};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams, ImportanceVector};
use crate::seed::derive_seed;
use crate::stats;

pub const DEFAULT_N_STAGES: usize = 6;
pub const DEFAULT_TRIM_PERCENTILE: f64 = 25.0;
/// Stage construction stops before a stage would have fewer training records.
pub const DEFAULT_MIN_STAGE_SIZE: usize = 100;
pub const DEFAULT_UNIFORM_THETA: f64 = 0.80;
pub const DEFAULT_INCREASING_THETAS: [f64; 6] = [0.65, 0.70, 0.75, 0.80, 0.80, 0.80];
pub const DEFAULT_WEAK_THRESHOLDS: [Option<f64>; 6] = [
    None,
    Some(0.70),
    Some(0.70),
    Some(0.75),
    Some(0.75),
    Some(0.75),
];

pub const CASCADE_FORMAT: &str = "seawater-cascade/cascade";
pub const CASCADE_VERSION: u32 = 1;

/// Training subset of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSubset {
    pub records: Dataset,
    /// Smallest E. coli admitted; `None` for stage 1.
    pub lower_bound: Option<f64>,
    pub median: f64,
    pub p25: f64,
}

/// Builds up to `n_stages` nested training subsets.
///
/// `subset[k+1]` keeps the records of `subset[k]` with E. coli at or above
/// the `trim_percentile` quantile of `subset[k]`. Construction stops early,
/// with a warning, when the next subset would hold fewer than
/// `min_stage_size` records or would not shrink at all.
pub fn build_stages(
    train: &Dataset,
    n_stages: usize,
    trim_percentile: f64,
    min_stage_size: usize,
) -> Result<Vec<StageSubset>> {
    if train.is_empty() {
        return Err(Error::Empty("cascade training set is empty".into()));
    }
    if n_stages == 0 {
        return Err(Error::config("a cascade needs at least one stage"));
    }
    if !(trim_percentile > 0.0 && trim_percentile < 100.0) {
        return Err(Error::config(format!(
            "trim percentile must be in (0, 100), got {trim_percentile}"
        )));
    }
    let mut stages = Vec::with_capacity(n_stages);
    let mut current = train.clone();
    let mut lower_bound = None;
    loop {
        let mut values = current.ecoli_values();
        values.sort_by(f64::total_cmp);
        let median = stats::quantile_sorted(&values, 0.5).expect("non-empty stage");
        let p25 =
            stats::quantile_sorted(&values, trim_percentile / 100.0).expect("non-empty stage");
        stages.push(StageSubset {
            records: current.clone(),
            lower_bound,
            median,
            p25,
        });
        if stages.len() == n_stages {
            break;
        }
        let next = current.with_records(
            current
                .records
                .iter()
                .filter(|r| f64::from(r.ecoli) >= p25)
                .cloned()
                .collect(),
        );
        if next.len() == current.len() {
            log::warn!(
                "stopping after {} stages: trimming at {p25} removes nothing",
                stages.len()
            );
            break;
        }
        if next.len() < min_stage_size {
            log::warn!(
                "stopping after {} stages: next stage would have {} < {min_stage_size} records",
                stages.len(),
                next.len()
            );
            break;
        }
        lower_bound = Some(p25);
        current = next;
    }
    Ok(stages)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Uniform,
    Increasing,
}

/// Which weak threshold the previous stage's probability is compared to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakPairing {
    /// `p[k-1] >= w[k-1]`, with an absent `w[k-1]` read as `w[k]`.
    #[default]
    PreviousStage,
    /// Both probabilities are compared to `w[k]`.
    CurrentStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `p >= threshold`
    #[default]
    AtLeast,
    /// `p > threshold`
    Greater,
}

impl Comparison {
    fn passes(self, p: f64, threshold: f64) -> bool {
        match self {
            Comparison::AtLeast => p >= threshold,
            Comparison::Greater => p > threshold,
        }
    }
}

/// Per-stage certainty thresholds, the optional double-weak rule and
/// optional per-stage feature masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub mode: ThresholdMode,
    pub uniform_theta: f64,
    pub increasing_thetas: Vec<f64>,
    /// `None` disables the double-weak rule.
    #[serde(default)]
    pub weak_thresholds: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub weak_pairing: WeakPairing,
    /// `None` trains every stage on the cascade's base features.
    #[serde(default)]
    pub feature_masks: Option<Vec<Vec<Feature>>>,
    #[serde(default)]
    pub comparison: Comparison,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::uniform(DEFAULT_UNIFORM_THETA)
    }
}

impl ThresholdPolicy {
    pub fn uniform(theta: f64) -> Self {
        ThresholdPolicy {
            mode: ThresholdMode::Uniform,
            uniform_theta: theta,
            increasing_thetas: DEFAULT_INCREASING_THETAS.to_vec(),
            weak_thresholds: None,
            weak_pairing: WeakPairing::default(),
            feature_masks: None,
            comparison: Comparison::default(),
        }
    }

    /// 0.65, 0.70, 0.75, then 0.80.
    pub fn with_increasing_thresholds(mut self) -> Self {
        self.mode = ThresholdMode::Increasing;
        self.increasing_thetas = DEFAULT_INCREASING_THETAS.to_vec();
        self
    }

    /// Weak thresholds 0.70 at stages 2-3 and 0.75 afterwards.
    pub fn with_double_weak(mut self) -> Self {
        self.weak_thresholds = Some(DEFAULT_WEAK_THRESHOLDS.to_vec());
        self
    }

    /// Stages 1-3 without air temperature, stages 4-6 with it.
    pub fn with_feature_change(mut self) -> Self {
        let without_air: Vec<Feature> = Feature::BASE
            .into_iter()
            .filter(|&f| f != Feature::AirTemp)
            .collect();
        let mut masks = vec![without_air; 3];
        masks.extend(std::iter::repeat_n(Feature::BASE.to_vec(), 3));
        self.feature_masks = Some(masks);
        self
    }

    /// Increasing thresholds, double-weak rule and feature change together.
    pub fn adjusted() -> Self {
        ThresholdPolicy::uniform(DEFAULT_UNIFORM_THETA)
            .with_increasing_thresholds()
            .with_double_weak()
            .with_feature_change()
    }

    pub fn theta(&self, stage: usize) -> f64 {
        match self.mode {
            ThresholdMode::Uniform => self.uniform_theta,
            ThresholdMode::Increasing => self.increasing_thetas[stage],
        }
    }

    pub fn weak(&self, stage: usize) -> Option<f64> {
        self.weak_thresholds.as_ref().and_then(|w| w[stage])
    }

    /// Checks list lengths against `n_stages` and the threshold ranges.
    pub fn validate(&self, n_stages: usize) -> Result<()> {
        let check_theta = |t: f64| {
            if t.is_finite() && t >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "threshold {t} must be a non-negative number"
                )))
            }
        };
        match self.mode {
            ThresholdMode::Uniform => check_theta(self.uniform_theta)?,
            ThresholdMode::Increasing => {
                if self.increasing_thetas.len() != n_stages {
                    return Err(Error::config(format!(
                        "{} increasing thresholds given for {n_stages} stages",
                        self.increasing_thetas.len()
                    )));
                }
                self.increasing_thetas
                    .iter()
                    .try_for_each(|&t| check_theta(t))?;
            }
        }
        if let Some(weak) = &self.weak_thresholds {
            if weak.len() != n_stages {
                return Err(Error::config(format!(
                    "{} weak thresholds given for {n_stages} stages",
                    weak.len()
                )));
            }
            for (k, w) in weak.iter().enumerate() {
                if let Some(w) = *w {
                    check_theta(w)?;
                    if w > self.theta(k) {
                        return Err(Error::config(format!(
                            "weak threshold {w} exceeds strong threshold {} at stage {}",
                            self.theta(k),
                            k + 1
                        )));
                    }
                }
            }
        }
        if let Some(masks) = &self.feature_masks {
            if masks.len() != n_stages {
                return Err(Error::config(format!(
                    "{} feature masks given for {n_stages} stages",
                    masks.len()
                )));
            }
            if masks.iter().any(Vec::is_empty) {
                return Err(Error::config("feature masks must not be empty"));
            }
        }
        Ok(())
    }

    fn truncated(&self, n_stages: usize) -> ThresholdPolicy {
        let mut p = self.clone();
        if p.mode == ThresholdMode::Increasing {
            p.increasing_thetas.truncate(n_stages);
        }
        if let Some(w) = &mut p.weak_thresholds {
            w.truncate(n_stages);
        }
        if let Some(m) = &mut p.feature_masks {
            m.truncate(n_stages);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub params: ForestParams,
    pub policy: ThresholdPolicy,
    pub n_stages: usize,
    pub trim_percentile: f64,
    pub min_stage_size: usize,
    /// Features of stages without a mask.
    pub features: Vec<Feature>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            params: ForestParams::cascade(),
            policy: ThresholdPolicy::default(),
            n_stages: DEFAULT_N_STAGES,
            trim_percentile: DEFAULT_TRIM_PERCENTILE,
            min_stage_size: DEFAULT_MIN_STAGE_SIZE,
            features: Feature::BASE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    /// 1-based.
    pub index: usize,
    pub train_lower_bound: Option<f64>,
    pub n_train: usize,
    pub median: f64,
    pub p25: f64,
    pub theta: f64,
    pub weak: Option<f64>,
    pub features: Vec<Feature>,
    pub forest: Forest,
}

impl StageSpec {
    pub fn proba(&self, m: &Measurement) -> Result<f64> {
        self.forest
            .predict_proba(&feature_vector(m, &self.features))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub stages: Vec<StageSpec>,
    pub params: ForestParams,
    pub policy: ThresholdPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExitRule {
    Strong,
    DoubleWeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    /// `stage` is 1-based.
    Excellent {
        stage: usize,
        rule: ExitRule,
    },
    Suspect,
}

impl Verdict {
    pub fn is_excellent(&self) -> bool {
        matches!(self, Verdict::Excellent { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePrediction {
    pub verdict: Verdict,
    /// One entry per visited stage.
    pub probabilities: Vec<f64>,
}

/// Strong and weak threshold of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRule {
    pub theta: f64,
    pub weak: Option<f64>,
}

/// Walks the stages in order with `proba(k)` giving stage `k`'s (0-based)
/// probability of lying below its median, and stops at the first exit.
///
/// At each stage the strong rule is checked first. The double-weak rule is
/// considered from the second stage on, and only when both the current and
/// the paired previous weak threshold are met.
pub fn apply_rules(
    rules: &[StageRule],
    pairing: WeakPairing,
    comparison: Comparison,
    mut proba: impl FnMut(usize) -> Result<f64>,
) -> Result<CascadePrediction> {
    let mut probabilities = Vec::with_capacity(rules.len());
    for (k, rule) in rules.iter().enumerate() {
        let p = proba(k)?;
        probabilities.push(p);
        if comparison.passes(p, rule.theta) {
            return Ok(CascadePrediction {
                verdict: Verdict::Excellent {
                    stage: k + 1,
                    rule: ExitRule::Strong,
                },
                probabilities,
            });
        }
        if k == 0 {
            continue;
        }
        if let Some(w) = rule.weak {
            let w_prev = match pairing {
                WeakPairing::PreviousStage => rules[k - 1].weak.unwrap_or(w),
                WeakPairing::CurrentStage => w,
            };
            if comparison.passes(p, w) && comparison.passes(probabilities[k - 1], w_prev) {
                return Ok(CascadePrediction {
                    verdict: Verdict::Excellent {
                        stage: k + 1,
                        rule: ExitRule::DoubleWeak,
                    },
                    probabilities,
                });
            }
        }
    }
    Ok(CascadePrediction {
        verdict: Verdict::Suspect,
        probabilities,
    })
}

#[derive(Serialize, Deserialize)]
struct CascadeDocument<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: T,
}

/// Builds the stages and trains one forest per stage. Stage `k` uses seed
/// `derive_seed(params.seed, k)`.
pub fn fit_cascade(train: &Dataset, config: &CascadeConfig) -> Result<CascadeModel> {
    config.policy.validate(config.n_stages)?;
    if config.features.is_empty() {
        return Err(Error::config("cascade needs at least one feature"));
    }
    let subsets = build_stages(
        train,
        config.n_stages,
        config.trim_percentile,
        config.min_stage_size,
    )?;
    let policy = config.policy.truncated(subsets.len());
    let mut stages = Vec::with_capacity(subsets.len());
    for (k, subset) in subsets.into_iter().enumerate() {
        let features = policy
            .feature_masks
            .as_ref()
            .map_or_else(|| config.features.clone(), |m| m[k].clone());
        let labeled = label(&subset.records, subset.median, &features)?;
        let params = config
            .params
            .clone()
            .with_seed(derive_seed(config.params.seed, (k + 1) as u64));
        let forest = Forest::fit(&labeled, &params)?;
        log::debug!(
            "stage {}: {} records, median {}, p25 {}",
            k + 1,
            subset.records.len(),
            subset.median,
            subset.p25
        );
        stages.push(StageSpec {
            index: k + 1,
            train_lower_bound: subset.lower_bound,
            n_train: subset.records.len(),
            median: subset.median,
            p25: subset.p25,
            theta: policy.theta(k),
            weak: policy.weak(k),
            features,
            forest,
        });
    }
    Ok(CascadeModel {
        stages,
        params: config.params.clone(),
        policy,
    })
}

impl CascadeModel {
    pub fn rules(&self) -> Vec<StageRule> {
        self.stages
            .iter()
            .map(|s| StageRule {
                theta: s.theta,
                weak: s.weak,
            })
            .collect()
    }

    pub fn classify(&self, m: &Measurement) -> Result<CascadePrediction> {
        apply_rules(
            &self.rules(),
            self.policy.weak_pairing,
            self.policy.comparison,
            |k| self.stages[k].proba(m),
        )
    }

    pub fn classify_all(&self, d: &Dataset) -> Result<Vec<CascadePrediction>> {
        let rules = self.rules();
        d.records
            .par_iter()
            .map(|m| {
                apply_rules(
                    &rules,
                    self.policy.weak_pairing,
                    self.policy.comparison,
                    |k| self.stages[k].proba(m),
                )
            })
            .collect()
    }

    /// The same trained stages under different thresholds. Feature masks of
    /// `policy` are ignored; the stages keep the features they were trained on.
    pub fn with_thresholds(&self, policy: &ThresholdPolicy) -> Result<CascadeModel> {
        let n = self.stages.len();
        let mut policy = policy.clone();
        policy.feature_masks = None;
        let policy = policy.truncated(n);
        policy.validate(n)?;
        let mut model = self.clone();
        for (k, stage) in model.stages.iter_mut().enumerate() {
            stage.theta = policy.theta(k);
            stage.weak = policy.weak(k);
        }
        model.policy = ThresholdPolicy {
            feature_masks: self.policy.feature_masks.clone(),
            ..policy
        };
        Ok(model)
    }

    pub fn stage_importances(&self) -> Vec<ImportanceVector> {
        self.stages
            .iter()
            .map(|s| s.forest.feature_importance())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CascadeDocument {
            format: CASCADE_FORMAT.into(),
            version: CASCADE_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<CascadeModel> {
        let doc: CascadeDocument<CascadeModel> = serde_json::from_str(s)?;
        if doc.format != CASCADE_FORMAT || doc.version != CASCADE_VERSION {
            return Err(Error::Format(format!(
                "expected {CASCADE_FORMAT} v{CASCADE_VERSION}, found {} v{}",
                doc.format, doc.version
            )));
        }
        for stage in &doc.model.stages {
            stage.forest.validate()?;
            if stage.forest.n_features() != stage.features.len() {
                return Err(Error::Format(format!(
                    "stage {} forest arity does not match its features",
                    stage.index
                )));
            }
        }
        Ok(doc.model)
    }
}

/// Filter quality of a cascade on a test set under an E. coli limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub limit: f64,
    pub n_test: usize,
    pub n_above_limit: usize,
    /// Records at or below the limit classified EXCELLENT.
    pub true_positive: usize,
    /// Over records at or below the limit; `None` when there are none.
    pub tp_rate: Option<f64>,
    /// Records above the limit classified EXCELLENT.
    pub false_negative: usize,
    /// Over records above the limit; `None` when there are none.
    pub fn_rate: Option<f64>,
    pub suspects: usize,
    /// EXCELLENT exits per stage, index 0 is stage 1.
    pub per_stage_exits: Vec<usize>,
    pub double_weak_exits: usize,
}

/// Scores predictions against the truth. `limit` only enters the scoring.
pub fn score_predictions(
    test: &Dataset,
    predictions: &[CascadePrediction],
    n_stages: usize,
    limit: f64,
) -> CascadeReport {
    let mut report = CascadeReport {
        limit,
        n_test: test.len(),
        n_above_limit: 0,
        true_positive: 0,
        tp_rate: None,
        false_negative: 0,
        fn_rate: None,
        suspects: 0,
        per_stage_exits: vec![0; n_stages],
        double_weak_exits: 0,
    };
    for (m, p) in test.records.iter().zip(predictions) {
        let above = Class::of(m.ecoli, limit) == Class::Above;
        if above {
            report.n_above_limit += 1;
        }
        match p.verdict {
            Verdict::Excellent { stage, rule } => {
                report.per_stage_exits[stage - 1] += 1;
                if rule == ExitRule::DoubleWeak {
                    report.double_weak_exits += 1;
                }
                if above {
                    report.false_negative += 1;
                } else {
                    report.true_positive += 1;
                }
            }
            Verdict::Suspect => report.suspects += 1,
        }
    }
    let below = report.n_test - report.n_above_limit;
    report.tp_rate = (below > 0).then(|| report.true_positive as f64 / below as f64);
    report.fn_rate = (report.n_above_limit > 0)
        .then(|| report.false_negative as f64 / report.n_above_limit as f64);
    report
}

pub fn evaluate_cascade(model: &CascadeModel, test: &Dataset, limit: f64) -> Result<CascadeReport> {
    if test.is_empty() {
        return Err(Error::Empty("cascade test set is empty".into()));
    }
    let predictions = model.classify_all(test)?;
    Ok(score_predictions(
        test,
        &predictions,
        model.stages.len(),
        limit,
    ))
}
