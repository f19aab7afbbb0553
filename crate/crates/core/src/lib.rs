//! Cascade random-forest filtering of bathing-water quality measurements.
//!
//! A single random forest trained on heavily imbalanced E. coli data
//! classifies nearly everything as excellent. The cascade instead trains a
//! series of balanced median-split forests on progressively trimmed
//! training sets and lets a measurement exit as EXCELLENT only when a stage
//! is confident; everything else stays SUSPECT for laboratory analysis.
//!
//! Modules:
//! - [`dataio`]: measurement model, CSV format, outlier removal, station statistics, labeling
//! - [`splits`]: uniform/temporal/spatial train-test splits, thinning, station groups
//! - [`forest`]: CART random forest with Gini splits and MDI importance
//! - [`cascade`]: stage construction, threshold rules, cascade evaluation
//! - [`eval`]: multi-run experiments, limit sweeps, report and SVG emission
//! - [`synth`]: calibrated synthetic data generator

pub mod cascade;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod forest;
pub mod seed;
pub mod splits;
pub mod stats;
pub mod synth;

pub use cascade::{
    build_stages, evaluate_cascade, fit_cascade, CascadeConfig, CascadeModel, CascadePrediction,
    CascadeReport, ThresholdPolicy, Verdict,
};
pub use dataio::{
    label, parse_dataset, remove_outliers, station_stats, Class, Dataset, Feature, LabeledDataset,
    Measurement, StationStats,
};
pub use error::{Error, Result};
pub use forest::{Forest, ForestParams, ImportanceVector};
pub use splits::{thin, SplitSpec, StationGroups};
pub use synth::{generate_dataset, SynthConfig};
