use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use log::{info, warn};
use serde::Deserialize;

use seawater_cascade::cascade::{ExitRule, CASCADE_FORMAT};
use seawater_cascade::dataio::{parse_dataset_with_warnings, Dataset};
use seawater_cascade::eval::{
    cascade_experiment, emit_plot, limit_sweep, majority_baseline, single_model_experiment,
};
use seawater_cascade::forest::{class_from_proba, FOREST_FORMAT};
use seawater_cascade::{
    fit_cascade, generate_dataset, label, remove_outliers, station_stats, thin, CascadeModel,
    Class, Forest, Verdict,
};

use crate::config::{ModelKind, RunConfig};
use crate::output::Outputs;
use crate::CliError;

/// Logs the effective config and opens the output directory.
fn start(
    cfg: &RunConfig,
    command: &'static str,
    needs_data: bool,
    seed: u64,
) -> Result<Outputs, CliError> {
    cfg.validate(needs_data)?;
    let resolved = cfg.to_toml()?;
    info!("{command}: effective config\n{resolved}");
    info!("{command}: seed {seed}");
    Outputs::create(&cfg.output_dir, command, &resolved, seed)
}

fn read_csv(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let (d, warnings) = parse_dataset_with_warnings(BufReader::new(file))?;
    for w in &warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(d)
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match (&cfg.dataset, &cfg.synth) {
        (Some(path), _) => read_csv(path),
        (None, Some(s)) => Ok(generate_dataset(s)?),
        (None, None) => Err(CliError::Config(
            "no dataset or synth section configured".into(),
        )),
    }
}

/// Outlier removal, station group and thinning, in that order.
fn prepare(cfg: &RunConfig, d: Dataset) -> Result<Dataset, CliError> {
    let mut d = d;
    if cfg.remove_outliers {
        let before = d.len();
        d = remove_outliers(&d);
        info!("removed {} outliers", before - d.len());
    }
    d = cfg.stations.group(cfg.station_group)?.select(&d);
    if let Some(n) = cfg.thin_to {
        d = thin(&d, n)?;
    }
    info!("{} records after preparation", d.len());
    Ok(d)
}

fn split_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let d = prepare(cfg, load(cfg)?)?;
    let (train, test) = cfg.split.apply(&d)?;
    info!(
        "split {}: {} train, {} test",
        cfg.split,
        train.len(),
        test.len()
    );
    Ok((train, test))
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let path = cfg.dataset.clone().ok_or_else(|| {
        CliError::Config("ingest needs a CSV: pass --data or set `dataset`".into())
    })?;
    let mut out = start(cfg, "ingest", false, cfg.seed)?;
    let file = File::open(&path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let (d, warnings) = parse_dataset_with_warnings(BufReader::new(file))?;
    for w in &warnings {
        warn!("{}: {w}", path.display());
    }
    let outliers = d.records.iter().filter(|r| r.outlier).count();
    let stats = station_stats(&d);
    println!(
        "{}: {} records, {} stations, {} outliers, {} warnings",
        path.display(),
        d.len(),
        stats.len(),
        outliers,
        warnings.len()
    );
    if !stats.is_empty() {
        out.report("stations", &stats, &cfg.formats)?;
    }
    out.finish()
}

pub fn synth(mut cfg: RunConfig) -> Result<(), CliError> {
    let s = cfg.synth.get_or_insert_with(Default::default).clone();
    cfg.dataset = None;
    let mut out = start(&cfg, "synth", true, s.seed)?;
    let d = generate_dataset(&s)?;
    println!("generated {} records", d.len());
    out.write("synthetic.csv", d.to_csv_string().as_bytes())?;
    out.finish()
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = start(cfg, "split", true, cfg.seed)?;
    let (train, test) = split_data(cfg)?;
    out.write("train.csv", train.to_csv_string().as_bytes())?;
    out.write("test.csv", test.to_csv_string().as_bytes())?;
    out.finish()
}

pub fn train_single(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = start(cfg, "train-single", true, cfg.seed)?;
    let (train, _) = split_data(cfg)?;
    let limit = cfg.limits[0];
    if cfg.limits.len() > 1 {
        warn!("train-single uses only the first limit, {limit}");
    }
    let labeled = label(&train, limit, &cfg.features)?;
    let forest = Forest::fit(&labeled, &cfg.forest_params(ModelKind::Single))?;
    let above = labeled.count(Class::Above);
    println!(
        "trained {} trees on {} records ({above} above {limit})",
        forest.trees.len(),
        labeled.len()
    );
    out.model("forest.json", &forest.to_json()?)?;
    out.report(
        "importance",
        &importance_rows(&forest.feature_importance(), None),
        &cfg.formats,
    )?;
    out.finish()
}

pub fn train_cascade(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = start(cfg, "train-cascade", true, cfg.seed)?;
    let (train, _) = split_data(cfg)?;
    let model = fit_cascade(&train, &cfg.cascade_config())?;
    for s in &model.stages {
        println!(
            "stage {}: {} records, median {}, theta {}, weak {}",
            s.index,
            s.n_train,
            s.median,
            s.theta,
            s.weak.map_or("-".to_string(), |w| w.to_string())
        );
    }
    out.model("cascade.json", &model.to_json()?)?;
    let rows: Vec<ImportanceRow> = model
        .stage_importances()
        .iter()
        .zip(&model.stages)
        .flat_map(|(imp, s)| importance_rows(imp, Some(s.index)))
        .collect();
    out.report("importance", &rows, &cfg.formats)?;
    out.finish()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ImportanceRow {
    stage: Option<usize>,
    feature: String,
    weight: f64,
}

impl seawater_cascade::eval::Tabular for ImportanceRow {
    fn header(&self) -> Vec<String> {
        ["stage", "feature", "weight"].map(String::from).to_vec()
    }

    fn row(&self) -> Vec<seawater_cascade::eval::Cell> {
        use seawater_cascade::eval::Cell;
        vec![
            self.stage.map_or(Cell::Missing, Cell::from),
            Cell::from(self.feature.as_str()),
            Cell::from(self.weight),
        ]
    }
}

fn importance_rows(
    imp: &seawater_cascade::ImportanceVector,
    stage: Option<usize>,
) -> Vec<ImportanceRow> {
    imp.feature_names
        .iter()
        .zip(&imp.weights)
        .map(|(f, &w)| ImportanceRow {
            stage,
            feature: f.clone(),
            weight: w,
        })
        .collect()
}

#[derive(Deserialize)]
struct DocumentHead {
    format: String,
}

pub fn classify(cfg: &RunConfig, model_file: &Path, policy_override: bool) -> Result<(), CliError> {
    let mut out = start(cfg, "classify", true, cfg.seed)?;
    let json = std::fs::read_to_string(model_file)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", model_file.display())))?;
    let head: DocumentHead = serde_json::from_str(&json)
        .map_err(|e| CliError::Config(format!("{}: {e}", model_file.display())))?;
    let d = load(cfg)?;
    let p = &out.provenance;
    let (hash, seed) = (p.config_hash.clone(), p.seed.to_string());
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    if head.format == CASCADE_FORMAT {
        let mut model = CascadeModel::from_json(&json)?;
        if policy_override {
            model = model.with_thresholds(&cfg.cascade.policy.policy())?;
        }
        let n = model.stages.len();
        let mut header: Vec<String> = ["id", "station", "ecoli", "verdict", "stage", "rule"]
            .map(String::from)
            .to_vec();
        header.extend((1..=n).map(|k| format!("p{k}")));
        header.extend(["config_hash".to_string(), "seed".to_string()]);
        wtr.write_record(&header).map_err(csv_err)?;
        let preds = model.classify_all(&d)?;
        let mut excellent = 0;
        for (m, pred) in d.records.iter().zip(&preds) {
            let (verdict, stage, rule) = match pred.verdict {
                Verdict::Excellent { stage, rule } => {
                    excellent += 1;
                    let rule = match rule {
                        ExitRule::Strong => "strong",
                        ExitRule::DoubleWeak => "double_weak",
                    };
                    ("EXCELLENT", stage.to_string(), rule.to_string())
                }
                Verdict::Suspect => ("SUSPECT", String::new(), String::new()),
            };
            let mut row = vec![
                m.id.to_string(),
                m.station.clone(),
                m.ecoli.to_string(),
                verdict.into(),
                stage,
                rule,
            ];
            row.extend((0..n).map(|k| {
                pred.probabilities
                    .get(k)
                    .map_or(String::new(), |p| p.to_string())
            }));
            row.extend([hash.clone(), seed.clone()]);
            wtr.write_record(&row).map_err(csv_err)?;
        }
        println!("{excellent} of {} records EXCELLENT", d.len());
    } else if head.format == FOREST_FORMAT {
        let forest = Forest::from_json(&json)?;
        let features = seawater_cascade::Feature::parse_list(&forest.feature_names)?;
        wtr.write_record([
            "id",
            "station",
            "ecoli",
            "p_below",
            "class",
            "config_hash",
            "seed",
        ])
        .map_err(csv_err)?;
        for m in &d.records {
            let p =
                forest.predict_proba(&seawater_cascade::dataio::feature_vector(m, &features))?;
            let class = match class_from_proba(p) {
                Class::Below => "BELOW",
                Class::Above => "ABOVE",
            };
            wtr.write_record([
                m.id.to_string(),
                m.station.clone(),
                m.ecoli.to_string(),
                p.to_string(),
                class.into(),
                hash.clone(),
                seed.clone(),
            ])
            .map_err(csv_err)?;
        }
        println!("classified {} records", d.len());
    } else {
        return Err(CliError::Config(format!(
            "{}: unknown model format `{}`",
            model_file.display(),
            head.format
        )));
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    out.write("verdicts.csv", &bytes)?;
    out.finish()
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = start(cfg, "evaluate", true, cfg.seed)?;
    let (train, test) = split_data(cfg)?;
    match cfg.model {
        ModelKind::Single => {
            let params = cfg.forest_params(ModelKind::Single);
            let mut rows = Vec::new();
            for &limit in &cfg.limits {
                let r = single_model_experiment(
                    &train,
                    &test,
                    limit,
                    &cfg.features,
                    &params,
                    cfg.n_runs,
                    cfg.seed,
                )?;
                println!(
                    "limit {limit}: accuracy {:.4} (majority baseline {:.4}), tp_rate {}",
                    r.accuracy.mean,
                    majority_baseline(&train, &test, limit),
                    r.tp_rate
                        .map_or("n/a".to_string(), |t| format!("{:.4}", t.mean))
                );
                rows.push(r);
            }
            out.report("single_model", &rows, &cfg.formats)?;
        }
        ModelKind::Cascade => {
            let cascade = cfg.cascade_config();
            let mut rows = Vec::new();
            for &limit in &cfg.limits {
                let s = cascade_experiment(&train, &test, &cascade, cfg.n_runs, cfg.seed, limit)?;
                println!(
                    "limit {limit}: tp {:.2} ({}), fn {:.2} ({}), suspects {:.2} of {}",
                    s.true_positive.mean,
                    s.tp_rate
                        .map_or("n/a".to_string(), |t| format!("{:.1}%", t.mean * 100.0)),
                    s.false_negative.mean,
                    s.fn_rate
                        .map_or("n/a".to_string(), |t| format!("{:.1}%", t.mean * 100.0)),
                    s.suspects.mean,
                    s.n_test
                );
                rows.push(s);
            }
            out.report("cascade_stages", &rows[0].stages, &cfg.formats)?;
            out.report("cascade_summary", &rows, &cfg.formats)?;
        }
    }
    out.finish()
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = start(cfg, "sweep", true, cfg.seed)?;
    let (train, test) = split_data(cfg)?;
    let curve = limit_sweep(
        &train,
        &test,
        &cfg.limits,
        &cfg.features,
        &cfg.forest_params(ModelKind::Single),
        cfg.n_runs,
        cfg.seed,
    )?;
    for p in &curve.points {
        println!(
            "limit {}: accuracy {:.4}, tp_rate {}",
            p.limit,
            p.accuracy,
            p.tp_rate.map_or("n/a".to_string(), |t| format!("{t:.4}"))
        );
    }
    out.report("sweep", &curve.points, &cfg.formats)?;
    let svg = emit_plot(&curve, Some(&out.provenance))?;
    out.write("sweep.svg", svg.as_bytes())?;
    out.finish()
}
