//! The `dspace` command line: `prep`, `train`, `eval`, `bench`, `gradcheck`
//! and `synth`. Every command that writes artifacts also writes a
//! `manifest.json` whose `config` field can be fed back via `--config`.

mod config;
mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

pub use config::{load_config, BenchCmdConfig, GridKind, PrepConfig, SynthCmdConfig, TrainCmdConfig};
pub use manifest::RunManifest;

use crate::error::Error;
use crate::evaluation::{self, BenchData, BenchOptions, ReportFormat, TrainSize};
use crate::exec::{self, Exec};
use crate::fewshot::Prototypes;
use crate::flowdata::{self, LabeledDataset};
use crate::gradcheck::{self, GradCheckConfig};
use crate::nn::ModelDocument;
use crate::preprocess::{self, ForestConfig};
use crate::rng;
use crate::synth;
use crate::training::{self, ModelKind, Regime, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Error,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> StageExt<T> for crate::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

fn ensure_valid(problems: Vec<String>) -> CliResult<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(problems))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e)).stage("output")
}

#[derive(Debug, Parser)]
#[command(name = "dspace", version, about = "Few-shot DDoS detection with dual-space prototypical networks")]
pub struct Cli {
    /// Default root for processed data and run artifacts.
    #[arg(long, global = true, env = "DSPACE_DATA_DIR", default_value = "dspace-data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, split, select features and scale a raw flow CSV.
    Prep(PrepArgs),
    /// Train one model under one regime.
    Train(TrainArgs),
    /// Score a trained run on a processed CSV.
    Eval(EvalArgs),
    /// Repeated-seed benchmark over models, regimes and training sizes.
    Bench(BenchArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
    /// Write a Gaussian-blob dataset in the processed CSV format.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Raw flow CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory (defaults to the data dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config or a previous prep manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long)]
    pub benign_token: Option<String>,
    /// Comma-separated identifier columns to drop, replacing the default list.
    #[arg(long, value_delimiter = ',')]
    pub drop: Option<Vec<String>>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Bootstrap rows per tree.
    #[arg(long)]
    pub max_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding train.csv and val.csv (defaults to the data dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (defaults to <data>/runs/<regime>-<model>-<size>-s<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config or a previous train manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// offline | online | proto | dspace
    #[arg(long)]
    pub regime: Option<Regime>,
    /// mlp | mlp-attn
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Balanced training subsample size.
    #[arg(long)]
    pub train_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub k_support: Option<usize>,
    #[arg(long)]
    pub k_query: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Processed CSV to score (defaults to <data dir>/test.csv).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Also write the metrics as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report directory (defaults to <data>/bench).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_enum)]
    pub grid: Option<GridKind>,
    /// Worker threads for concurrent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Give every run of a cell the base seed.
    #[arg(long)]
    pub same_seed: bool,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub reduced_n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (defaults to the data dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let data_dir = cli.data_dir;
    match cli.command {
        Command::Prep(a) => cmd_prep(&data_dir, a),
        Command::Train(a) => cmd_train(&data_dir, a),
        Command::Eval(a) => cmd_eval(&data_dir, a),
        Command::Bench(a) => cmd_bench(&data_dir, a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(&data_dir, a),
    }
}

fn load_split(dir: &Path, name: &str) -> CliResult<(PathBuf, LabeledDataset)> {
    let path = dir.join(format!("{name}.csv"));
    let ds = LabeledDataset::load_processed(&path).stage("load")?;
    Ok((path, ds))
}

fn write_splits(out: &Path, manifest: &mut RunManifest, splits: [(&str, &LabeledDataset); 3]) -> CliResult<()> {
    for (name, ds) in splits {
        let path = out.join(format!("{name}.csv"));
        ds.save_csv(&path).stage("write")?;
        manifest.artifact(name, &path);
    }
    Ok(())
}

pub fn cmd_prep(data_dir: &Path, a: PrepArgs) -> CliResult<()> {
    let mut cfg: PrepConfig = load_config(a.config.as_deref()).stage("config")?;
    if a.input.is_some() {
        cfg.input = a.input;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    set(&mut cfg.top_k, a.top_k);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.label_column, a.label_column);
    set(&mut cfg.benign_token, a.benign_token);
    set(&mut cfg.drop_list, a.drop);
    let mut problems = Vec::new();
    if cfg.input.is_none() {
        problems.push("--input is required".to_string());
    }
    if cfg.top_k == 0 {
        problems.push("top_k must be positive".into());
    }
    if let Err(e) = cfg.split.validate() {
        problems.push(e.detail());
    }
    ensure_valid(problems)?;
    let input = cfg.input.clone().expect("checked above");
    let out = cfg.out.clone().unwrap_or_else(|| data_dir.to_path_buf());
    cfg.out = Some(out.clone());
    let mut manifest = RunManifest::begin("prep", a.config.as_deref(), &cfg).stage("config")?;
    manifest.input("raw", &input);

    info!("loading {}", input.display());
    let mut table = flowdata::load_csv(&input).stage("load")?;
    let missing = table.drop_columns(&cfg.drop_list);
    if !missing.is_empty() {
        manifest.notes.push(format!("drop-list columns not present: {}", missing.join(", ")));
    }
    let ds = flowdata::clean_and_binarize(&table, &cfg.label_column, &cfg.benign_token).stage("clean")?;
    drop(table);
    info!("{} rows x {} features after cleaning", ds.n_rows(), ds.n_features());

    cfg.split.seed = rng::derive(cfg.seed, "split", 0);
    let (train, val, test) = flowdata::stratified_split(&ds, &cfg.split).stage("split")?;
    manifest.notes.extend(ds.provenance.iter().cloned());
    drop(ds);

    let mut forest = cfg.forest.clone().unwrap_or_else(|| ForestConfig::for_features(train.n_features()));
    set(&mut forest.n_trees, a.trees);
    if a.max_samples.is_some() {
        forest.max_samples = a.max_samples;
    }
    forest.seed = rng::derive(cfg.seed, "forest", 0);
    cfg.forest = Some(forest.clone());
    info!("fitting {} trees on {} rows", forest.n_trees, train.n_rows());
    let importance = preprocess::fit_random_forest_importance_with(&train, &forest, Exec::default()).stage("forest")?;
    let mut mask = preprocess::select_top_k(&importance, cfg.top_k).stage("select")?;
    mask.feature_names = mask.selected_indices.iter().map(|&i| train.feature_names[i].clone()).collect();
    let importance_doc = serde_json::json!({
        "feature_names": train.feature_names,
        "importances": importance.importances,
        "ranking": importance.ranking,
    });
    let [train, val, test] = [&train, &val, &test].map(|d| mask.apply(d));
    let (train, val, test) = (train.stage("select")?, val.stage("select")?, test.stage("select")?);
    let scaler = preprocess::fit_robust_scaler(&train).stage("scale")?;
    let scaled: Vec<LabeledDataset> = [&train, &val, &test]
        .into_iter()
        .map(|d| preprocess::apply_robust_scaler(d, &scaler))
        .collect::<crate::Result<_>>()
        .stage("scale")?;

    create_dir(&out)?;
    write_splits(&out, &mut manifest, [("train", &scaled[0]), ("val", &scaled[1]), ("test", &scaled[2])])?;
    let files = [
        ("scaler", out.join("scaler.json")),
        ("selection", out.join("selection.json")),
        ("importance", out.join("importance.json")),
    ];
    scaler.save(&files[0].1).stage("write")?;
    mask.save(&files[1].1).stage("write")?;
    crate::preprocess::save_json(&importance_doc, &files[2].1).stage("write")?;
    for (name, path) in &files {
        manifest.artifact(name, path);
    }
    manifest.config = serde_json::to_value(&cfg).map_err(Error::from).stage("config")?;
    manifest.finish(&out.join("manifest.json")).stage("write")?;
    println!(
        "prep: {} train / {} val / {} test rows, {} features -> {}",
        scaled[0].n_rows(),
        scaled[1].n_rows(),
        scaled[2].n_rows(),
        scaled[0].n_features(),
        out.display()
    );
    Ok(())
}

fn resolve_train(data_dir: &Path, a: TrainArgs) -> CliResult<TrainCmdConfig> {
    let mut cfg: TrainCmdConfig = load_config(a.config.as_deref()).stage("config")?;
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    if a.train_n.is_some() {
        cfg.train_n = a.train_n;
    }
    let t = &mut cfg.train;
    set(&mut t.regime, a.regime);
    set(&mut t.model, a.model);
    set(&mut t.dual_space.alpha, a.alpha);
    set(&mut t.seed, a.seed);
    set(&mut t.epochs, a.epochs);
    set(&mut t.lr, a.lr);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.episodes_per_epoch, a.episodes_per_epoch);
    set(&mut t.k_support, a.k_support);
    set(&mut t.k_query, a.k_query);
    ensure_valid(cfg.problems())?;
    let data = cfg.data.clone().unwrap_or_else(|| data_dir.to_path_buf());
    cfg.out.get_or_insert_with(|| {
        let size = cfg.train_n.map_or("full".to_string(), |n| n.to_string());
        data.join("runs").join(format!(
            "{}-{}-{size}-s{}",
            cfg.train.regime.name(),
            cfg.train.model.name(),
            cfg.train.seed
        ))
    });
    cfg.data = Some(data);
    Ok(cfg)
}

pub fn cmd_train(data_dir: &Path, a: TrainArgs) -> CliResult<()> {
    let config_path = a.config.clone();
    let cfg = resolve_train(data_dir, a)?;
    let (data, out) = (cfg.data.clone().expect("resolved"), cfg.out.clone().expect("resolved"));
    let mut manifest = RunManifest::begin("train", config_path.as_deref(), &cfg).stage("config")?;
    let (train_path, train) = load_split(&data, "train")?;
    let (val_path, val) = load_split(&data, "val")?;
    manifest.input("train", &train_path);
    manifest.input("val", &val_path);
    let train = match cfg.train_n {
        Some(n) => {
            flowdata::subsample_reduced(&train, n, rng::derive(cfg.train.seed, "subsample", 0)).stage("subsample")?
        }
        None => train,
    };
    info!("training {}/{} on {} rows", cfg.train.regime.name(), cfg.train.model.name(), train.n_rows());
    let run = training::train(&train, &val, &cfg.train).stage("train")?;

    create_dir(&out)?;
    let model_path = out.join("model.json");
    ModelDocument::new(&run.net_config, &run.params, Some(&run.optimizer)).save(&model_path).stage("write")?;
    manifest.artifact("model", &model_path);
    let proto_name = run.prototypes.as_ref().map(|_| "prototypes.json");
    if let (Some(p), Some(name)) = (&run.prototypes, proto_name) {
        let path = out.join(name);
        p.save(&path).stage("write")?;
        manifest.artifact("prototypes", &path);
    }
    let record = RunRecord::new(&run, cfg.train_n, train.n_rows(), "model.json", proto_name);
    let run_path = out.join("run.json");
    record.save(&run_path).stage("write")?;
    manifest.artifact("run", &run_path);
    let curve_path = out.join("loss_curve.csv");
    write_loss_curve(&curve_path, &record).stage("write")?;
    manifest.artifact("loss_curve", &curve_path);
    manifest.notes.push(format!("wall_time_seconds={:.3}", run.wall_time));
    manifest.finish(&out.join("manifest.json")).stage("write")?;

    let last = record.loss_curve.last();
    println!(
        "train: {}/{} on {} rows, {} updates, final train loss {:.6}{} -> {}",
        record.regime.name(),
        record.model.name(),
        record.train_rows,
        record.updates,
        last.map_or(f64::NAN, |p| p.train_loss),
        last.and_then(|p| p.val_loss).map_or(String::new(), |v| format!(", val loss {v:.6}")),
        out.display()
    );
    Ok(())
}

fn write_loss_curve(path: &Path, record: &RunRecord) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "train_loss", "val_loss"])?;
    for p in &record.loss_curve {
        w.write_record([
            p.step.to_string(),
            p.train_loss.to_string(),
            p.val_loss.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_eval(data_dir: &Path, a: EvalArgs) -> CliResult<()> {
    let record = RunRecord::load(&a.run.join("run.json")).stage("load")?;
    let (net, params, _) =
        ModelDocument::load(&a.run.join(&record.model_file)).and_then(|d| d.decode()).stage("load")?;
    let protos = record.prototypes_file.as_ref().map(|f| Prototypes::load(&a.run.join(f))).transpose().stage("load")?;
    let test_path = a.test.unwrap_or_else(|| data_dir.join("test.csv"));
    let test = LabeledDataset::load_processed(&test_path).stage("load")?;
    if test.n_features() != net.input_dim {
        return Err(CliError::Stage {
            stage: "eval",
            source: Error::Shape(format!(
                "{} has {} features, model expects {}",
                test_path.display(),
                test.n_features(),
                net.input_dim
            )),
        });
    }
    let pred = training::predict_with(&net, &params, protos.as_ref(), &record.config.estimate_config(), &test.features)
        .stage("eval")?;
    let counts = evaluation::confusion(&pred, &test.labels).stage("eval")?;
    let report = evaluation::metrics(&counts).stage("eval")?;
    println!("{report}");
    println!("tp {} fp {} tn {} fn {} over {} rows", counts.tp, counts.fp, counts.tn, counts.fn_, counts.total());
    if let Some(out) = a.out {
        let doc = serde_json::json!({ "test": test_path, "confusion": counts, "metrics": report });
        crate::preprocess::save_json(&doc, &out).stage("write")?;
    }
    Ok(())
}

pub fn cmd_bench(data_dir: &Path, a: BenchArgs) -> CliResult<()> {
    let mut cfg: BenchCmdConfig = load_config(a.config.as_deref()).stage("config")?;
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    set(&mut cfg.runs, a.runs);
    set(&mut cfg.grid, a.grid);
    set(&mut cfg.base_seed, a.base_seed);
    set(&mut cfg.reduced_n, a.reduced_n);
    set(&mut cfg.template.dual_space.alpha, a.alpha);
    set(&mut cfg.template.epochs, a.epochs);
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    cfg.same_seed |= a.same_seed;
    ensure_valid(cfg.problems())?;
    let data = cfg.data.clone().unwrap_or_else(|| data_dir.to_path_buf());
    let out = cfg.out.clone().unwrap_or_else(|| data.join("bench"));
    cfg.data = Some(data.clone());
    cfg.out = Some(out.clone());
    let mut manifest = RunManifest::begin("bench", a.config.as_deref(), &cfg).stage("config")?;

    let mut splits = Vec::new();
    for name in ["train", "val", "test"] {
        let (path, ds) = load_split(&data, name)?;
        manifest.input(name, &path);
        splits.push(ds);
    }
    let sizes = match cfg.grid {
        GridKind::Small => vec![TrainSize::Reduced(cfg.reduced_n)],
        GridKind::Full => vec![TrainSize::Full, TrainSize::Reduced(cfg.reduced_n)],
    };
    let grid = evaluation::build_grid(&cfg.template, &cfg.models, &sizes);
    let opts = BenchOptions {
        n_runs: cfg.runs,
        base_seed: cfg.base_seed,
        seed_stride: u64::from(!cfg.same_seed),
        exec: Exec::default(),
    };
    info!("benchmark: {} cells x {} runs", grid.len(), cfg.runs);
    let data_refs = BenchData { train: &splits[0], val: &splits[1], test: &splits[2] };
    let matrix = exec::with_jobs(cfg.jobs, || evaluation::run_benchmark(data_refs, &grid, &opts)).stage("bench")?;

    create_dir(&out)?;
    let mut markdown = String::new();
    for format in ReportFormat::ALL {
        let text = evaluation::emit_report(&matrix, format).stage("report")?;
        let path = out.join(format!("report.{}", format.extension()));
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e)).stage("write")?;
        manifest.artifact(format.extension(), &path);
        if format == ReportFormat::Markdown {
            markdown = text;
        }
    }
    manifest.finish(&out.join("manifest.json")).stage("write")?;
    print!("{markdown}");
    Ok(())
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let mut cfg = GradCheckConfig::default();
    set(&mut cfg.tolerance, a.tolerance);
    set(&mut cfg.seed, a.seed);
    let report = gradcheck::run_gradcheck(&cfg).stage("gradcheck")?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed: max relative error {:.3e} >= {:.0e}",
            report.max_rel_error(),
            report.tolerance
        )))
    }
}

pub fn cmd_synth(data_dir: &Path, a: SynthArgs) -> CliResult<()> {
    let mut cfg: SynthCmdConfig = load_config(a.config.as_deref()).stage("config")?;
    if a.out.is_some() {
        cfg.out = a.out;
    }
    set(&mut cfg.blobs.dim, a.dim);
    set(&mut cfg.blobs.n_per_class, a.n_per_class);
    set(&mut cfg.blobs.mean_separation, a.separation);
    set(&mut cfg.blobs.label_noise, a.noise);
    set(&mut cfg.blobs.seed, a.seed);
    let mut problems = Vec::new();
    for check in [cfg.blobs.validate(), cfg.split.validate()] {
        if let Err(e) = check {
            problems.push(e.detail());
        }
    }
    ensure_valid(problems)?;
    let out = cfg.out.clone().unwrap_or_else(|| data_dir.to_path_buf());
    cfg.out = Some(out.clone());
    cfg.split.seed = rng::derive(cfg.blobs.seed, "split", 0);
    let mut manifest = RunManifest::begin("synth", a.config.as_deref(), &cfg).stage("config")?;

    let ds = synth::gen_gaussian_blobs(&cfg.blobs).stage("synth")?;
    let (train, val, test) = flowdata::stratified_split(&ds, &cfg.split).stage("split")?;
    create_dir(&out)?;
    let full = out.join("dataset.csv");
    ds.save_csv(&full).stage("write")?;
    manifest.artifact("dataset", &full);
    write_splits(&out, &mut manifest, [("train", &train), ("val", &val), ("test", &test)])?;
    manifest.notes.push(format!("bayes_accuracy={}", cfg.blobs.bayes_accuracy()));
    manifest.finish(&out.join("manifest.json")).stage("write")?;
    println!(
        "synth: {} rows ({} train / {} val / {} test), dim {}, separation {} -> {}",
        ds.n_rows(),
        train.n_rows(),
        val.n_rows(),
        test.n_rows(),
        ds.n_features(),
        cfg.blobs.mean_separation,
        out.display()
    );
    Ok(())
}
