//! `seawater-cascade`: command-line front end for ingesting measurement
//! CSVs, generating synthetic data, training single forests and cascades,
//! classifying records and running the evaluation experiments.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seawater_cascade::eval::ReportFormat;
use seawater_cascade::splits::GroupName;
use seawater_cascade::{Feature, SplitSpec};

use config::{ModelKind, PolicyPreset, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad input data, flags or configuration (exit 1).
    Config(String),
    /// Filesystem failure (exit 2).
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<seawater_cascade::Error> for CliError {
    fn from(e: seawater_cascade::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "seawater-cascade",
    version,
    about = "Cascade random-forest filter for bathing-water E. coli classification"
)]
struct Cli {
    /// Worker threads for training and classification (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Flags overriding the run configuration.
#[derive(Args, Debug, Default, Clone)]
struct Overrides {
    /// Measurement CSV (replaces any configured dataset or synth section).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for training.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the synthetic generator.
    #[arg(long)]
    synth_seed: Option<u64>,
    /// Train/test split: `set1`, `set2`, `uniform:k=5,offset=4`, `temporal:year=2019`, `spatial:station=KE`.
    #[arg(long)]
    split: Option<SplitSpec>,
    /// Station group: low, high or all.
    #[arg(long)]
    station_group: Option<GroupName>,
    /// Thin the dataset to this many records before splitting.
    #[arg(long)]
    thin_to: Option<usize>,
    /// Drop records flagged as outliers.
    #[arg(long)]
    remove_outliers: bool,
    /// Comma-separated E. coli limits (CFU/100 mL).
    #[arg(long, value_delimiter = ',')]
    limits: Option<Vec<f64>>,
    #[arg(long)]
    n_runs: Option<usize>,
    /// Comma-separated feature columns.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<Feature>>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Threshold policy preset.
    #[arg(long, value_enum)]
    policy: Option<PolicyPreset>,
    /// Uniform certainty threshold; values above 1 disable every exit.
    #[arg(long)]
    theta: Option<f64>,
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Comma-separated report formats: csv, json, markdown.
    #[arg(long, value_delimiter = ',')]
    formats: Option<Vec<ReportFormat>>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.data {
            cfg.dataset = Some(d.clone());
            cfg.synth = None;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.synth_seed {
            cfg.synth.get_or_insert_with(Default::default).seed = s;
        }
        if let Some(s) = &self.split {
            cfg.split = s.clone();
        }
        if let Some(g) = self.station_group {
            cfg.station_group = g;
        }
        if let Some(t) = self.thin_to {
            cfg.thin_to = Some(t);
        }
        if self.remove_outliers {
            cfg.remove_outliers = true;
        }
        if let Some(l) = &self.limits {
            cfg.limits = l.clone();
        }
        if let Some(n) = self.n_runs {
            cfg.n_runs = n;
        }
        if let Some(f) = &self.features {
            cfg.features = f.clone();
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(p) = self.policy {
            cfg.cascade.policy.preset = p;
        }
        if let Some(t) = self.theta {
            cfg.cascade.policy.theta = t;
        }
        if let Some(t) = self.trees {
            cfg.forest.n_estimators = Some(t);
        }
        if let Some(f) = &self.formats {
            cfg.formats = f.clone();
        }
    }

    fn changes_policy(&self) -> bool {
        self.policy.is_some() || self.theta.is_some()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a measurement CSV and report per-station statistics.
    Ingest(Overrides),
    /// Generate a synthetic measurement CSV.
    Synth(Overrides),
    /// Write the train and test CSVs of the configured split.
    Split(Overrides),
    /// Train one forest at the first configured limit and save it as JSON.
    TrainSingle(Overrides),
    /// Train a cascade and save it as JSON.
    TrainCascade(Overrides),
    /// Classify every record of a CSV with a saved model.
    Classify {
        /// Forest or cascade JSON written by a train command.
        #[arg(long)]
        model_file: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the repeated single-model or cascade experiment and write reports.
    Evaluate(Overrides),
    /// Single-model limit sweep with reports and an SVG chart.
    Sweep(Overrides),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = match &cli.command {
        Command::Ingest(o)
        | Command::Synth(o)
        | Command::Split(o)
        | Command::TrainSingle(o)
        | Command::TrainCascade(o)
        | Command::Evaluate(o)
        | Command::Sweep(o)
        | Command::Classify { overrides: o, .. } => o.clone(),
    };
    overrides.apply(&mut cfg);
    match &cli.command {
        Command::Ingest(_) => commands::ingest(&cfg),
        Command::Synth(_) => commands::synth(cfg),
        Command::Split(_) => commands::split(&cfg),
        Command::TrainSingle(_) => commands::train_single(&cfg),
        Command::TrainCascade(_) => commands::train_cascade(&cfg),
        Command::Classify { model_file, .. } => {
            commands::classify(&cfg, model_file, overrides.changes_policy())
        }
        Command::Evaluate(_) => commands::evaluate(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
