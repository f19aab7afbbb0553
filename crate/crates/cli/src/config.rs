use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seawater_cascade::cascade::{
    Comparison, WeakPairing, DEFAULT_MIN_STAGE_SIZE, DEFAULT_N_STAGES,
};
use seawater_cascade::cascade::{DEFAULT_TRIM_PERCENTILE, DEFAULT_UNIFORM_THETA};
use seawater_cascade::eval::ReportFormat;
use seawater_cascade::splits::{GroupName, StationGroups};
use seawater_cascade::{
    CascadeConfig, Feature, ForestParams, SplitSpec, SynthConfig, ThresholdPolicy,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Single,
    #[default]
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyPreset {
    #[default]
    Uniform,
    Increasing,
    DoubleWeak,
    FeatureChange,
    Adjusted,
}

/// Forest hyper-parameters; unset fields take the model kind's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSection {
    pub n_estimators: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: Option<usize>,
    pub max_features: Option<usize>,
}

/// Threshold policy as a preset plus optional overrides.
///
/// `weak_thresholds` lists one value per stage; the stage-1 value is only
/// used as the partner of stage 2 under previous-stage pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub preset: PolicyPreset,
    pub theta: f64,
    pub increasing_thetas: Option<Vec<f64>>,
    pub weak_thresholds: Option<Vec<f64>>,
    pub weak_pairing: WeakPairing,
    pub comparison: Comparison,
    pub feature_masks: Option<Vec<Vec<Feature>>>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            preset: PolicyPreset::Uniform,
            theta: DEFAULT_UNIFORM_THETA,
            increasing_thetas: None,
            weak_thresholds: None,
            weak_pairing: WeakPairing::default(),
            comparison: Comparison::default(),
            feature_masks: None,
        }
    }
}

impl PolicySection {
    pub fn policy(&self) -> ThresholdPolicy {
        let base = ThresholdPolicy::uniform(self.theta);
        let mut p = match self.preset {
            PolicyPreset::Uniform => base,
            PolicyPreset::Increasing => base.with_increasing_thresholds(),
            PolicyPreset::DoubleWeak => base.with_double_weak(),
            PolicyPreset::FeatureChange => base.with_feature_change(),
            PolicyPreset::Adjusted => ThresholdPolicy {
                uniform_theta: self.theta,
                ..ThresholdPolicy::adjusted()
            },
        };
        if let Some(t) = &self.increasing_thetas {
            p.increasing_thetas = t.clone();
        }
        if let Some(w) = &self.weak_thresholds {
            p.weak_thresholds = Some(w.iter().map(|&v| Some(v)).collect());
        }
        if let Some(m) = &self.feature_masks {
            p.feature_masks = Some(m.clone());
        }
        p.weak_pairing = self.weak_pairing;
        p.comparison = self.comparison;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeSection {
    pub n_stages: usize,
    pub trim_percentile: f64,
    pub min_stage_size: usize,
    pub policy: PolicySection,
}

impl Default for CascadeSection {
    fn default() -> Self {
        CascadeSection {
            n_stages: DEFAULT_N_STAGES,
            trim_percentile: DEFAULT_TRIM_PERCENTILE,
            min_stage_size: DEFAULT_MIN_STAGE_SIZE,
            policy: PolicySection::default(),
        }
    }
}

/// Everything a run depends on. Plain values come before tables so the
/// resolved config serializes back to TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub remove_outliers: bool,
    pub station_group: GroupName,
    pub thin_to: Option<usize>,
    pub model: ModelKind,
    pub features: Vec<Feature>,
    pub limits: Vec<f64>,
    pub n_runs: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub synth: Option<SynthConfig>,
    pub stations: StationGroups,
    pub split: SplitSpec,
    pub forest: ForestSection,
    pub cascade: CascadeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            remove_outliers: false,
            station_group: GroupName::All,
            thin_to: None,
            model: ModelKind::default(),
            features: Feature::BASE.to_vec(),
            limits: vec![250.0],
            n_runs: 1,
            seed: 0,
            output_dir: PathBuf::from("out"),
            formats: vec![
                ReportFormat::Csv,
                ReportFormat::Json,
                ReportFormat::Markdown,
            ],
            synth: None,
            stations: StationGroups::default(),
            split: SplitSpec::set1(),
            forest: ForestSection::default(),
            cascade: CascadeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn forest_params(&self, kind: ModelKind) -> ForestParams {
        let base = match kind {
            ModelKind::Single => ForestParams::single_model(),
            ModelKind::Cascade => ForestParams::cascade(),
        };
        let f = &self.forest;
        ForestParams {
            n_estimators: f.n_estimators.unwrap_or(base.n_estimators),
            max_depth: f.max_depth.unwrap_or(base.max_depth),
            min_samples_split: f.min_samples_split.unwrap_or(base.min_samples_split),
            max_features: f.max_features.or(base.max_features),
            seed: self.seed,
            bootstrap: base.bootstrap,
        }
    }

    pub fn cascade_config(&self) -> CascadeConfig {
        CascadeConfig {
            params: self.forest_params(ModelKind::Cascade),
            policy: self.cascade.policy.policy(),
            n_stages: self.cascade.n_stages,
            trim_percentile: self.cascade.trim_percentile,
            min_stage_size: self.cascade.min_stage_size,
            features: self.features.clone(),
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self, needs_data: bool) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if needs_data && self.dataset.is_some() == self.synth.is_some() {
            return bad("exactly one of `dataset` and `[synth]` must be configured".into());
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(CliError::from)?;
        }
        if self.n_runs == 0 {
            return bad("n_runs must be >= 1".into());
        }
        if self.limits.is_empty() || self.limits.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("limits must be a non-empty list of non-negative numbers".into());
        }
        if self.formats.is_empty() {
            return bad("at least one report format is required".into());
        }
        if self.features.is_empty() {
            return bad("at least one feature is required".into());
        }
        if (1..self.features.len()).any(|i| self.features[..i].contains(&self.features[i])) {
            return bad("features must not repeat".into());
        }
        if self.thin_to == Some(0) {
            return bad("thin_to must be >= 1".into());
        }
        if self.i64_overflow() {
            return bad("seeds must fit in a signed 64-bit integer".into());
        }
        self.split.validate()?;
        self.stations.validate()?;
        self.forest_params(self.model)
            .validate(self.features.len())?;
        let cascade = self.cascade_config();
        cascade.params.validate(self.features.len())?;
        cascade.policy.validate(self.cascade.n_stages)?;
        Ok(())
    }

    fn i64_overflow(&self) -> bool {
        let limit = i64::MAX as u64;
        self.seed > limit || self.synth.as_ref().is_some_and(|s| s.seed > limit)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let mut c = RunConfig {
            synth: Some(SynthConfig::default()),
            ..RunConfig::default()
        };
        c.cascade.policy.preset = PolicyPreset::Adjusted;
        c.cascade.policy.weak_thresholds = Some(vec![0.7; 6]);
        let text = c.to_toml().unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn presets_expand() {
        let mut s = PolicySection {
            preset: PolicyPreset::Adjusted,
            ..PolicySection::default()
        };
        assert_eq!(s.policy(), ThresholdPolicy::adjusted());
        s.preset = PolicyPreset::Uniform;
        s.theta = 1.01;
        assert_eq!(s.policy(), ThresholdPolicy::uniform(1.01));
    }

    #[test]
    fn data_source_must_be_unique() {
        let mut c = RunConfig::default();
        assert!(c.validate(true).is_err());
        assert!(c.validate(false).is_ok());
        c.synth = Some(SynthConfig::default());
        assert!(c.validate(true).is_ok());
        c.dataset = Some("x.csv".into());
        assert!(c.validate(true).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("n_run = 3").is_err());
        let c: RunConfig =
            toml::from_str("n_runs = 3\n[split]\nkind = \"temporal\"\nyear = 2019\n").unwrap();
        assert_eq!(c.split, SplitSpec::Temporal { year: 2019 });
    }
}
