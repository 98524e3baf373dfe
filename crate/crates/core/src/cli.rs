//! Command-line entry point. Exit codes: 0 success, 1 invalid input or usage, 2 I/O.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalstat::{compare, evaluate, EvalReport};
use crate::gnn::init_model;
use crate::numkit::Rng;
use crate::pipeline::{
    cross_validate, load_slides, mean_best_val_ce, tune, write_epoch_log, Ensemble, ModelConfig, Slide, TunePlan,
};
use crate::slideio::{
    build_patch_grid, read_manifest, read_mask_pgm, read_ppm, segment_tissue, synth_dataset, write_grid_file,
    write_mask_pgm, Magnification, SynthConfig,
};

#[derive(Debug, Parser)]
#[command(name = "patchgraph", version, about = "Multi-resolution patch-graph slide classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled feature dataset.
    Synth(SynthArgs),
    /// Saturation-threshold tissue segmentation of a PPM image.
    Segment(SegmentArgs),
    /// Tile a tissue mask into a patch grid at a target magnification.
    Grid(GridArgs),
    /// Cross-validated training; writes one checkpoint and log per fold.
    Train(TrainArgs),
    /// Coordinate-descent grid search over hyperparameters.
    Tune(TuneArgs),
    /// Evaluate the fold ensemble with bootstrap confidence intervals.
    Eval(EvalArgs),
    /// Paired t-tests of per-fold metrics against a baseline report.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    patients: usize,
    #[arg(long, default_value_t = 1)]
    slides_per_patient: usize,
    /// Comma-separated magnifications, e.g. `5,10`.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    mags: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    grid_rows: u32,
    #[arg(long, default_value_t = 4)]
    grid_cols: u32,
    /// Distance between class means in noise standard deviations.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 40.0)]
    native_mag: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.06)]
    sat_thresh: f64,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    native_mag: f64,
    #[arg(long)]
    target_mag: f64,
    #[arg(long, default_value_t = 0.5)]
    min_tissue: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Overrides the initial config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding `fold{K}.ckpt` files.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    others: Vec<PathBuf>,
    /// Multiple-testing adjustment; only `bh` is available.
    #[arg(long, default_value = "bh")]
    adjust: String,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment(a),
        Command::Grid(a) => grid(a),
        Command::Train(a) => train(a),
        Command::Tune(a) => tune_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
    }
}

/// Writes via a temporary sibling and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_patients: a.patients,
        slides_per_patient: a.slides_per_patient,
        mags: a.mags.iter().map(|&m| Magnification::new(m)).collect::<Result<_>>()?,
        dim: a.dim,
        grid_rows: a.grid_rows,
        grid_cols: a.grid_cols,
        separation: a.separation,
        noise_sd: a.noise_sd,
        native_mag: a.native_mag,
        seed: a.seed,
    };
    let out = synth_dataset(&cfg, &a.out)?;
    info!("wrote {} slides to {}", out.records.len(), out.manifest_path.display());
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let image = read_ppm(&a.image)?;
    let mask = segment_tissue(&image, a.sat_thresh)?;
    info!("{} of {} pixels are tissue", mask.tissue_pixels(), mask.width * mask.height);
    write_mask_pgm(&mask, &a.out)
}

fn grid(a: GridArgs) -> Result<()> {
    let mask = read_mask_pgm(&a.mask)?;
    let grid = build_patch_grid(&mask, a.native_mag, a.target_mag, a.min_tissue)?;
    info!("{} patches of {} native pixels", grid.entries.len(), grid.patch_native);
    write_grid_file(&grid, &a.out)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(manifest: &Path, config: &ModelConfig) -> Result<Vec<Slide>> {
    let records = read_manifest(manifest)?;
    load_slides(&records, &config.mags()?)
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    best_epoch: usize,
    best_val_balanced_ce: f64,
    epochs_run: usize,
    val_patients: Vec<String>,
}

#[derive(Serialize)]
struct TrainSummary {
    mean_best_val_balanced_ce: f64,
    folds: Vec<FoldSummary>,
}

/// Cross-validates `config` on `manifest` and writes checkpoints, logs and a summary
/// under `out`.
pub fn train_to_dir(manifest: &Path, config: &ModelConfig, folds: usize, out: &Path) -> Result<()> {
    config.validate()?;
    let slides = load_dataset(manifest, config)?;
    let results = cross_validate(&slides, config, folds)?;
    create_dir(out)?;
    for r in &results {
        let k = r.split.fold_id;
        write_atomic(&out.join(format!("fold{k}.ckpt")), crate::gnn::format_checkpoint(r.outcome.model.params()).as_bytes())?;
        let mut log = Vec::new();
        write_epoch_log(&r.outcome.log, &mut log).expect("in-memory write");
        write_atomic(&out.join(format!("fold{k}_log.csv")), &log)?;
    }
    let summary = TrainSummary {
        mean_best_val_balanced_ce: mean_best_val_ce(&results),
        folds: results
            .iter()
            .map(|r| FoldSummary {
                fold: r.split.fold_id,
                best_epoch: r.outcome.best_epoch,
                best_val_balanced_ce: r.outcome.best_val_ce,
                epochs_run: r.outcome.log.len(),
                val_patients: r.split.val_patients.iter().cloned().collect(),
            })
            .collect(),
    };
    write_atomic(&out.join("config.json"), &to_json(config))?;
    write_atomic(&out.join("summary.json"), &to_json(&summary))?;
    info!("mean best validation CE {:.4}", summary.mean_best_val_balanced_ce);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.config, a.seed)?;
    train_to_dir(&a.manifest, &config, a.folds, &a.out)
}

fn tune_cmd(a: TuneArgs) -> Result<()> {
    let mut plan = TunePlan::load(&a.plan)?;
    if let Some(s) = a.seed {
        plan.initial.seed = s;
    }
    let slides = load_dataset(&a.manifest, &plan.initial)?;
    let outcome = tune(&plan, a.budget, |cfg| {
        let folds = cross_validate(&slides, cfg, a.folds)?;
        Ok(mean_best_val_ce(&folds))
    })?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("trials.json"), &to_json(&outcome.trials))?;
    write_atomic(&a.out.join("best_config.json"), &to_json(&outcome.best))?;
    info!(
        "{} configurations evaluated, best mean validation CE {:.4}",
        outcome.trials.len(),
        outcome.best_score
    );
    Ok(())
}

/// Loads `fold{K}.ckpt` for K = 0, 1, ... until the first missing index.
pub fn load_ensemble(dir: &Path, config: &ModelConfig, feature_dim: usize) -> Result<Ensemble> {
    let mut models = Vec::new();
    loop {
        let path = dir.join(format!("fold{}.ckpt", models.len()));
        if !path.exists() {
            break;
        }
        // weights are overwritten by the checkpoint; the stream only sizes the tensors
        let mut model = init_model(config, feature_dim, &mut Rng::substream(0, "load"))?;
        model.load(&path)?;
        models.push(model);
    }
    if models.is_empty() {
        return Err(Error::io(
            dir.join("fold0.ckpt"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no fold checkpoints"),
        ));
    }
    Ensemble::new(models)
}

/// Evaluates the checkpoints in `models` on `manifest`.
pub fn eval_report(manifest: &Path, models: &Path, config: &ModelConfig, iters: usize, seed: u64) -> Result<EvalReport> {
    config.validate()?;
    let slides = load_dataset(manifest, config)?;
    let dim = slides.first().map_or(0, Slide::feature_dim);
    let ensemble = load_ensemble(models, config, dim)?;
    let evaluation = evaluate(&slides, &ensemble, config, iters, seed)?;
    Ok(evaluation.report)
}

fn eval(a: EvalArgs) -> Result<()> {
    let config = load_config(&a.config, None)?;
    let report = eval_report(&a.manifest, &a.models, &config, a.bootstrap, a.seed)?;
    let m = &report.metrics;
    let mut line = String::new();
    let _ = write!(
        line,
        "balanced accuracy {:.4} [{:.4}, {:.4}], AUROC {:.4}, F1 {:.4}",
        m.balanced_accuracy.mean, m.balanced_accuracy.ci_low, m.balanced_accuracy.ci_high, m.auroc.mean, m.f1.mean
    );
    info!("{line}");
    write_atomic(&a.out, &to_json(&report))
}

fn stats(a: StatsArgs) -> Result<()> {
    if a.adjust != "bh" {
        return Err(Error::invalid("adjust", format!("'{}'; only 'bh' is supported", a.adjust)));
    }
    let name = |p: &Path| p.display().to_string();
    let baseline = EvalReport::load(&a.baseline)?;
    let others = a
        .others
        .iter()
        .map(|p| Ok((name(p), EvalReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = compare((&name(&a.baseline), &baseline), &others)?;
    write_atomic(&a.out, &to_json(&table))
}
