use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use magic_ground::checks::{gradient_suite, DEFAULT_H, DEFAULT_TOL};
use magic_ground::data::{bayes_single_object_ceiling, generate_synthetic, write_dataset, Dataset, Split, SynthConfig};
use magic_ground::model::{ModelConfig, VariantKind};
use magic_ground::nn::ReduceMode;
use magic_ground::report::{build_report, render_table, Report};
use magic_ground::train::{evaluate_split, read_checkpoint, train_run, RunOptions, TrainConfig};
use magic_ground::deterministic_from_env;

/// Multi-view referring-expression grounding: data, training, evaluation and reports.
#[derive(Parser, Debug)]
#[command(name = "magic-ground", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic relational reference game.
    Synth(SynthArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Finite-difference check of every op and the full model loss.
    Gradcheck(GradcheckArgs),
    /// Summarize runs and compare groups.
    Report(ReportArgs),
    /// Train at several view counts.
    FewerViews(FewerViewsArgs),
    /// Sweep view and language masking probabilities.
    MaskingGrid(MaskingGridArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Attributes per object.
    #[arg(long, default_value_t = 2)]
    attrs: usize,
    /// Values per attribute.
    #[arg(long, default_value_t = 4)]
    values: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 2000)]
    count_train: usize,
    #[arg(long, default_value_t = 500)]
    count_val: usize,
    #[arg(long, default_value_t = 0)]
    count_test: usize,
    /// Scale of the per-object appearance code shared across views.
    #[arg(long, default_value_t = 0.0)]
    appearance_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

/// Flags shared by every command that trains.
#[derive(Args, Debug, Clone)]
struct CommonTrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "magic", value_parser = parse_variant)]
    variant: VariantKind,
    #[arg(long, default_value_t = 75)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    /// Label smoothing.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    p_view: f64,
    #[arg(long, default_value_t = 0.2)]
    p_lang: f64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    distractors: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    positions: Toggle,
    #[arg(long, default_value_t = 0.0)]
    contrastive_weight: f64,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 1024)]
    ffn: usize,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    /// Order-invariant reductions; also forced by MAGIC_GROUND_DETERMINISTIC=1.
    #[arg(long)]
    deterministic: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Views per object (at most 8).
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=8))]
    views: u64,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a `last.ckpt`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=8))]
    views: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    distractors: u64,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    split: Split,
    /// Seed of the extra-distractor stream; defaults to the run seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_H)]
    h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Glob of run directories (or their log.jsonl files).
    #[arg(long)]
    runs: String,
    /// Groups to compare pairwise with Welch's t-test.
    #[arg(long, num_args = 2..)]
    compare: Vec<String>,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
struct SweepOut {
    #[arg(long)]
    out: PathBuf,
    /// Seeds to run; defaults to --seed alone.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args, Debug)]
struct FewerViewsArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    #[command(flatten)]
    sweep: SweepOut,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 4, 8], value_parser = clap::value_parser!(u64).range(1..=8))]
    views_list: Vec<u64>,
}

#[derive(Args, Debug)]
struct MaskingGridArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    #[command(flatten)]
    sweep: SweepOut,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..=8))]
    views: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.4])]
    grid: Vec<f64>,
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    s.parse().map_err(|e: magic_ground::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: magic_ground::error::AnnotationError| e.to_string())
}

fn deterministic(flag: bool) -> bool {
    flag || deterministic_from_env()
}

fn train_config(c: &CommonTrainArgs, dim: usize, views: usize) -> TrainConfig {
    TrainConfig {
        epochs: c.epochs,
        batch_size: c.batch,
        base_lr: c.lr,
        warmup_steps: c.warmup,
        weight_decay: c.weight_decay,
        p_view: c.p_view,
        p_lang: c.p_lang,
        seed: c.seed,
        views,
        distractors: c.distractors as usize,
        deterministic: deterministic(c.deterministic),
        model: ModelConfig {
            feature_dim: dim,
            hidden: c.hidden,
            layers: c.layers,
            heads: c.heads,
            ffn_dim: c.ffn,
            variant: c.variant,
            use_view_positions: c.positions == Toggle::On,
            smoothing: c.eps,
            contrastive_weight: c.contrastive_weight,
            ..ModelConfig::default()
        },
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        attributes: a.attrs,
        values: a.values,
        dim: a.dim,
        views: a.views,
        count_train: a.count_train,
        count_val: a.count_val,
        count_test: a.count_test,
        appearance_scale: a.appearance_scale,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    let ceiling = bayes_single_object_ceiling(&cfg, 20_000, a.seed)?;
    write_dataset(&a.out, &data, &cfg, serde_json::json!({ "single_object_ceiling": ceiling }))?;
    println!(
        "wrote {} annotations to {} (single-object ceiling {:.4})",
        data.annotations.len(),
        a.out.display(),
        ceiling
    );
    Ok(())
}

fn train_one(data: &Dataset, cfg: &TrainConfig, out: &Path, resume: Option<PathBuf>, quiet: bool) -> Result<f64> {
    let opts = RunOptions { out_dir: Some(out.to_path_buf()), resume, progress: !quiet };
    let r = train_run(data, cfg, &opts)?;
    println!(
        "{} seed {} views {}: best val all {:.4} at epoch {} ({:.1}s) -> {}",
        cfg.model.variant,
        cfg.seed,
        cfg.views,
        r.best_val.all(),
        r.best_epoch,
        r.wall_clock_secs,
        out.display()
    );
    Ok(r.best_val.all())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let data = load_data(&a.common.data)?;
    let cfg = train_config(&a.common, data.dim(), a.views as usize);
    if a.dry_run {
        cfg.validate()?;
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    train_one(&data, &cfg, &a.out, a.resume.clone(), a.common.quiet).map(|_| ())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let data = load_data(&a.data)?;
    let mode = ReduceMode::from_deterministic(deterministic(a.deterministic) || ckpt.train.deterministic);
    let seed = a.seed.unwrap_or(ckpt.train.seed);
    let m = evaluate_split(&ckpt.params, &data, a.split, a.views as usize, a.distractors as usize, seed, mode)?;
    let out = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "split": a.split.to_string(),
        "views": a.views,
        "distractors": a.distractors,
        "counts": m,
        "visual": m.visual(),
        "blind": m.blind(),
        "all": m.all(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let mut ok = true;
    for c in gradient_suite(a.h, a.tol)? {
        let status = if c.report.passed { "pass" } else { "FAIL" };
        println!("{status}  {:<32} max rel error {:.3e}", c.name, c.report.max_rel_error);
        ok &= c.report.passed;
    }
    println!("{}", if ok { "all gradient checks passed" } else { "gradient check failed" });
    Ok(ok)
}

fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob {pattern:?}"))? {
        paths.push(entry?);
    }
    paths.sort();
    Ok(paths)
}

fn emit_report(report: &Report, json: Option<&Path>, format: Format) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    if let Some(p) = json {
        std::fs::write(p, format!("{text}\n"))?;
    }
    match format {
        Format::Table => print!("{}", render_table(report)),
        Format::Json => println!("{text}"),
    }
    Ok(())
}

fn run_report(a: &ReportArgs) -> Result<()> {
    let paths = expand_glob(&a.runs)?;
    let report = build_report(&paths, &a.compare)?;
    emit_report(&report, a.json.as_deref(), a.format)
}

fn seeds(s: &SweepOut, c: &CommonTrainArgs) -> Vec<u64> {
    if s.seeds.is_empty() {
        vec![c.seed]
    } else {
        s.seeds.clone()
    }
}

fn sweep_report(out: &Path) -> Result<()> {
    let paths = expand_glob(&format!("{}/*/seed*", glob::Pattern::escape(&out.display().to_string())))?;
    let report = build_report(&paths, &[])?;
    emit_report(&report, Some(&out.join("report.json")), Format::Table)
}

fn run_fewer_views(a: &FewerViewsArgs) -> Result<()> {
    let data = load_data(&a.common.data)?;
    for &j in &a.views_list {
        for seed in seeds(&a.sweep, &a.common) {
            let mut cfg = train_config(&a.common, data.dim(), j as usize);
            cfg.seed = seed;
            train_one(&data, &cfg, &a.sweep.out.join(format!("views{j}")).join(format!("seed{seed}")), None, a.common.quiet)?;
        }
    }
    sweep_report(&a.sweep.out)
}

fn run_masking_grid(a: &MaskingGridArgs) -> Result<()> {
    if a.grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        bail!("grid probabilities must lie in [0, 1]");
    }
    let data = load_data(&a.common.data)?;
    for &pv in &a.grid {
        for &pl in &a.grid {
            for seed in seeds(&a.sweep, &a.common) {
                let mut cfg = train_config(&a.common, data.dim(), a.views as usize);
                cfg.seed = seed;
                cfg.p_view = pv;
                cfg.p_lang = pl;
                let dir = a.sweep.out.join(format!("pv{pv}_pl{pl}")).join(format!("seed{seed}"));
                train_one(&data, &cfg, &dir, None, a.common.quiet)?;
            }
        }
    }
    sweep_report(&a.sweep.out)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => run_synth(a)?,
        Command::Train(a) => run_train(a)?,
        Command::Eval(a) => run_eval(a)?,
        Command::Gradcheck(a) => return run_gradcheck(a),
        Command::Report(a) => run_report(a)?,
        Command::FewerViews(a) => run_fewer_views(a)?,
        Command::MaskingGrid(a) => run_masking_grid(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
