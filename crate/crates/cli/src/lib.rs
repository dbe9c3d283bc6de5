//! Command implementations behind the `rulforge` binary.

pub mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rulforge::checkpoint::{load_checkpoint, save_checkpoint};
use rulforge::dataset::{generate_synthetic, load_subset, save_subset, DatasetBundle, SubsetId, SynthConfig};
use rulforge::evaluate::{evaluate_test, predict_curve, EvalOptions, InputMode, MetricsReport, ScoreVariant};
use rulforge::model::Preset;
use rulforge::pipeline::{run_ablation, run_once, AblationRow, AggregateReport, PreprocessingMode, RunConfig, RunOutcome};
use rulforge::preprocess::{fit_normalizer, NormStats};
use rulforge::train::EpochRecord;
use rulforge::Error;

pub const DATA_ENV: &str = "RULFORGE_DATA";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;

/// Bad flags or an unreadable config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_integrity_error() {
                EXIT_INTEGRITY
            } else if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            };
        }
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}

#[derive(Parser, Debug)]
#[command(name = "rulforge", version, about = "Remaining-useful-life prediction on C-MAPSS style data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print engine counts, lengths and constant features of a subset.
    Inspect(InspectArgs),
    /// Train from a JSON run config and evaluate on the test engines.
    Train(RunArgs),
    /// Evaluate a checkpoint on a subset's test engines.
    Eval(EvalArgs),
    /// Train full-sequence and windowed variants under the same budget.
    Ablate(RunArgs),
    /// Render curve CSV exports as an SVG.
    Plot(PlotArgs),
    /// Write a synthetic bundle in C-MAPSS text format.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub subset: SubsetId,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub subset: Option<SubsetId>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub preset: Option<Preset>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Normalization stats; defaults to norm_stats.json next to the checkpoint.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub subset: Option<SubsetId>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Feed the model fixed windows of this length (for windowed-mode checkpoints).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum, default_value = "plain")]
    pub score_variant: ScoreVariantArg,
    /// Score against uncapped test RUL.
    #[arg(long)]
    pub uncapped: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ScoreVariantArg {
    Plain,
    OffsetMinusOne,
}

impl From<ScoreVariantArg> for ScoreVariant {
    fn from(v: ScoreVariantArg) -> Self {
        match v {
            ScoreVariantArg::Plain => ScoreVariant::Plain,
            ScoreVariantArg::OffsetMinusOne => ScoreVariant::OffsetMinusOne,
        }
    }
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Curve CSV files (cycle,predicted,actual), one panel each.
    #[arg(required = true)]
    pub curves: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub n_train: usize,
    #[arg(long, default_value_t = 20)]
    pub n_test: usize,
    #[arg(long, default_value_t = 120)]
    pub min_len: usize,
    #[arg(long, default_value_t = 260)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 8)]
    pub informative: usize,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn resolve_data_root(flag: Option<&Path>, config: Option<&Path>) -> Option<PathBuf> {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
}

/// Reads a run config, reporting the offending field path on failure.
pub fn load_run_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." {
            usage(format!("{}: invalid config: {}", path.display(), e.inner()))
        } else {
            usage(format!("{}: invalid config at `{field}`: {}", path.display(), e.inner()))
        }
    })
}

/// Config file plus command-line overrides.
pub fn resolve_run_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(s) = args.subset {
        cfg.subset_id = s;
    }
    if cfg.synth.is_none() {
        cfg.data_root = resolve_data_root(args.data_root.as_deref(), cfg.data_root.as_deref());
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.n_runs = runs;
    }
    if let Some(p) = args.preset {
        cfg.preset = Some(p);
        cfg.model = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_bundle(cfg: &RunConfig) -> anyhow::Result<DatasetBundle> {
    let bundle = cfg.load_bundle()?;
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    Ok(bundle)
}

pub fn cmd_inspect(args: &InspectArgs) -> anyhow::Result<()> {
    let root = resolve_data_root(args.data_root.as_deref(), None)
        .ok_or_else(|| usage(format!("no data root: pass --data-root or set {DATA_ENV}")))?;
    let bundle = load_subset(&root, args.subset)?;
    emit(&inspect_report(&bundle)?);
    Ok(())
}

/// Human-readable summary used by `inspect`.
pub fn inspect_report(bundle: &DatasetBundle) -> anyhow::Result<String> {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "{}: {} train / {} test", bundle.subset_id, bundle.train.len(), bundle.test.len())?;
    for (name, trajs) in [("train", &bundle.train), ("test", &bundle.test)] {
        let lens: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
        let total: usize = lens.iter().sum();
        writeln!(
            out,
            "{name} lengths: min {} / mean {:.1} / max {} ({total} cycles)",
            lens.iter().min().unwrap_or(&0),
            total as f64 / lens.len().max(1) as f64,
            lens.iter().max().unwrap_or(&0),
        )?;
    }
    let stats = fit_normalizer(&bundle.train, true)?;
    let constant: Vec<String> = stats
        .retained_mask
        .iter()
        .enumerate()
        .filter(|(_, &keep)| !keep)
        .map(|(i, _)| rulforge::dataset::feature_name(i))
        .collect();
    writeln!(
        out,
        "constant features ({}): {}",
        constant.len(),
        if constant.is_empty() { "none".to_string() } else { constant.join(", ") }
    )?;
    writeln!(out, "retained features: {}", stats.n_retained())?;
    for w in &bundle.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(out)
}

fn epochs_csv(records: &[EpochRecord]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in records {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

/// Writes every artifact of one run under `dir`.
pub fn write_run_artifacts(
    dir: &Path,
    cfg: &RunConfig,
    bundle: &DatasetBundle,
    out: &RunOutcome,
) -> anyhow::Result<()> {
    create_dir(dir)?;
    save_checkpoint(&out.model, &dir.join("model.ckpt"))?;
    out.stats.save(&dir.join("norm_stats.json"))?;
    write_json(&dir.join("run_config.json"), cfg)?;
    let log_path = dir.join("epochs.csv");
    fs::write(&log_path, epochs_csv(&out.epochs)?).map_err(|e| Error::io(&log_path, e))?;
    write_json(&dir.join("train_report.json"), &out.report)?;
    write_json(&dir.join("metrics.json"), &out.metrics)?;
    let curves = dir.join("curves");
    create_dir(&curves)?;
    for (traj, &rul) in bundle.test.iter().zip(&bundle.test_rul) {
        let curve = predict_curve(&out.model, traj, &out.stats, rul, cfg.input_mode())?;
        let path = curves.join(format!("unit_{:03}.csv", traj.unit_id));
        fs::write(&path, curve.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Trains `n_runs` models with seeds `seed, seed+1, ...`. A single run writes
/// straight into the output directory; several runs get `run_NNN/`
/// subdirectories and an `aggregate.json`.
pub fn train_runs(cfg: &RunConfig) -> anyhow::Result<Option<AggregateReport>> {
    let bundle = load_bundle(cfg)?;
    create_dir(&cfg.output_dir)?;
    let mut metrics = Vec::with_capacity(cfg.n_runs);
    let mut seeds = Vec::with_capacity(cfg.n_runs);
    for i in 0..cfg.n_runs {
        let run_cfg = cfg.for_run(i);
        let dir = if cfg.n_runs == 1 {
            cfg.output_dir.clone()
        } else {
            cfg.output_dir.join(format!("run_{i:03}"))
        };
        log::info!("run {}/{} (seed {})", i + 1, cfg.n_runs, run_cfg.train.seed);
        let out = run_once(&bundle, &run_cfg, |r| {
            log::info!("epoch {}: train {:.3} val {:.3} ({:.2}s)", r.epoch, r.train_loss, r.val_loss, r.seconds)
        })?;
        write_run_artifacts(&dir, &run_cfg, &bundle, &out)?;
        println!(
            "run {}: rmse {:.4} score {:.4} (best epoch {} of {})",
            i + 1,
            out.metrics.rmse,
            out.metrics.score,
            out.report.best_epoch,
            out.report.epochs_run
        );
        seeds.push(run_cfg.train.seed);
        metrics.push(out.metrics);
    }
    if cfg.n_runs == 1 {
        return Ok(None);
    }
    let agg = AggregateReport::from_runs(cfg.subset_id, seeds, &metrics)?;
    write_json(&cfg.output_dir.join("aggregate.json"), &agg)?;
    println!(
        "aggregate over {} runs: rmse {:.4} ± {:.4}, score {:.4} ± {:.4}",
        agg.n_runs, agg.rmse.mean, agg.rmse.sd, agg.score.mean, agg.score.sd
    );
    Ok(Some(agg))
}

pub fn cmd_train(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = resolve_run_config(args)?;
    train_runs(&cfg)?;
    Ok(())
}

fn load_stats_for(checkpoint: &Path, explicit: Option<&Path>) -> anyhow::Result<NormStats> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name("norm_stats.json"),
    };
    Ok(NormStats::load(&path)?)
}

/// Run config saved next to a checkpoint by `train`, if any.
fn sibling_run_config(checkpoint: &Path) -> anyhow::Result<Option<RunConfig>> {
    let path = checkpoint.with_file_name("run_config.json");
    if !path.is_file() {
        return Ok(None);
    }
    load_run_config(&path).map(Some)
}

pub fn evaluate_checkpoint(args: &EvalArgs) -> anyhow::Result<MetricsReport> {
    let model = load_checkpoint(&args.checkpoint)?;
    let stats = load_stats_for(&args.checkpoint, args.stats.as_deref())?;
    let saved = sibling_run_config(&args.checkpoint)?;
    let subset = args
        .subset
        .or(saved.as_ref().map(|c| c.subset_id))
        .ok_or_else(|| usage("--subset is required"))?;
    let synth = saved.as_ref().and_then(|c| c.synth.clone());
    let bundle = match (&synth, args.data_root.is_some()) {
        (Some(s), false) if subset == SubsetId::Synth => generate_synthetic(s)?,
        _ => {
            let root = resolve_data_root(args.data_root.as_deref(), saved.as_ref().and_then(|c| c.data_root.as_deref()))
                .ok_or_else(|| usage(format!("no data root: pass --data-root or set {DATA_ENV}")))?;
            load_subset(&root, subset)?
        }
    };
    let input = match (args.window, &saved) {
        (Some(window), _) => InputMode::Windowed { window },
        (None, Some(c)) if c.preprocessing_mode == PreprocessingMode::Windowed => c.input_mode(),
        _ => InputMode::FullSequence,
    };
    let opts = EvalOptions {
        cap_truth: !args.uncapped,
        score_variant: args.score_variant.into(),
        input,
    };
    Ok(evaluate_test(&model, &bundle, &stats, &opts)?)
}

pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let report = evaluate_checkpoint(args)?;
    match &args.out {
        Some(path) => {
            write_json(path, &report)?;
            println!("rmse {:.4} score {:.4} over {} engines", report.rmse, report.score, report.n_engines);
        }
        None => emit(&format!("{}\n", serde_json::to_string_pretty(&report)?)),
    }
    Ok(())
}

/// Two-row text table of an ablation.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<14} {:>7} {:>9} {:>7} {:>10} {:>10}\n", "mode", "window", "samples", "epochs", "rmse", "score");
    for r in rows {
        out.push_str(&format!(
            "{:<14} {:>7} {:>9} {:>7} {:>10.4} {:>10.4}\n",
            r.mode.as_str(),
            r.window.map_or("-".to_string(), |w| w.to_string()),
            r.n_samples,
            r.epochs_run,
            r.rmse,
            r.score
        ));
    }
    out
}

pub fn cmd_ablate(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = resolve_run_config(args)?;
    let bundle = load_bundle(&cfg)?;
    let rows = run_ablation(&bundle, &cfg)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("ablation.json"), &rows)?;
    emit(&ablation_table(&rows));
    Ok(())
}

fn unit_from_stem(path: &Path, fallback: u32) -> u32 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().ok())
        .unwrap_or(fallback)
}

pub fn cmd_plot(args: &PlotArgs) -> anyhow::Result<()> {
    let mut panels = Vec::with_capacity(args.curves.len());
    for (i, path) in args.curves.iter().enumerate() {
        let unit = unit_from_stem(path, i as u32 + 1);
        let curve = plot::read_curve_csv(path, unit)?;
        panels.push((format!("unit {unit}"), curve));
    }
    let svg = plot::render_svg(&panels)?;
    fs::write(&args.out, svg).map_err(|e| Error::io(&args.out, e))?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_train: args.n_train,
        n_test: args.n_test,
        min_len: args.min_len,
        max_len: args.max_len,
        noise_std: args.noise_std,
        n_informative_sensors: args.informative,
        seed: args.seed,
    };
    let bundle = generate_synthetic(&cfg)?;
    create_dir(&args.out)?;
    save_subset(&args.out, &bundle).with_context(|| format!("writing bundle to {}", args.out.display()))?;
    println!(
        "wrote {} train / {} test engines to {}",
        bundle.train.len(),
        bundle.test.len(),
        args.out.display()
    );
    Ok(())
}
