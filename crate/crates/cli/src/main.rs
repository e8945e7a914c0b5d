use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aqa_core::data::{plan_frames, synth_dataset, write_dataset, SamplerConfig, Split, Strategy, SynthSpec};
use aqa_core::harness::{evaluate, preset, run_grad_suite, run_sweep, EvalConfig, ExperimentConfig, Suite, SweepSpec, PRESETS};
use aqa_core::model::{Model, Variant};
use aqa_core::train::{train_from, TrainOptions, TrainState};

/// Action-quality assessment: train and evaluate score regressors on video clips.
#[derive(Parser)]
#[command(name = "aqa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (frame shards plus manifest.tsv).
    SynthData(SynthArgs),
    /// Train a model and write checkpoints and the training log.
    Train(TrainArgs),
    /// Held-out Spearman correlation of a checkpoint.
    Eval(EvalArgs),
    /// Train one model per axis value and print a results table.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Print the frame indices a sampler picks.
    PlanFrames(PlanArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults to the toy setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant for the default config.
    #[arg(long)]
    variant: Option<Variant>,
    /// Override a field, e.g. `--set train.loss.beta=0`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.variant) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(v)) => ExperimentConfig::toy(v),
            (None, None) => ExperimentConfig::default(),
        };
        if let (Some(_), Some(v)) = (&self.config, self.variant) {
            cfg.model.variant = v;
        }
        for o in &self.overrides {
            let (path, value) = o
                .split_once('=')
                .with_context(|| format!("--set {o:?}: expected PATH=VALUE"))?;
            cfg.set_str(path.trim(), value.trim())?;
        }
        if let Some(t) = self.threads {
            cfg.train.threads = t;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().n_clips)]
    n_clips: usize,
    #[arg(long, default_value_t = SynthSpec::default().frames)]
    frames: usize,
    /// Frame height and width.
    #[arg(long, default_value_t = SynthSpec::default().height)]
    size: u32,
    #[arg(long, default_value_t = SynthSpec::default().test_fraction)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for checkpoints, train_log.csv and config.toml.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Built-in ablation; overrides --config and --variant as the base.
    #[arg(long, conflicts_with = "axis", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Dotted config path for a custom sweep.
    #[arg(long, requires = "values")]
    axis: Option<String>,
    /// Comma-separated values for --axis.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Directory for results.csv, table.txt and per-row training logs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value = "all", value_parser = ["diffcore", "ranking", "model", "all"])]
    suite: String,
}

#[derive(Args)]
struct PlanArgs {
    /// Clip length in frames.
    #[arg(long)]
    t: usize,
    /// Frames to sample.
    #[arg(long)]
    n: usize,
    /// random, fixed (fixed-offset) or varied (varied-offset).
    #[arg(long, default_value = "varied")]
    strategy: Strategy,
    /// Offset within each subclip for the fixed strategy.
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (train, test)")),
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_clips: a.n_clips,
        frames: a.frames,
        height: a.size,
        width: a.size,
        seed: a.seed,
        test_fraction: a.test_fraction,
    };
    let ds = synth_dataset(&spec)?;
    let manifest = write_dataset(&ds, &a.out)?;
    println!(
        "wrote {} clips ({} train, {} test) to {}",
        ds.len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Test).len(),
        manifest.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml_string())?;
    let data = cfg.dataset()?;
    let state = match &a.resume {
        Some(p) => TrainState::load(p).with_context(|| format!("resuming from {}", p.display()))?,
        None => TrainState::new(Model::new(cfg.model.clone(), cfg.train.seed)?),
    };
    if state.model.config() != &cfg.model {
        bail!("the checkpoint's model config differs from the experiment's [model] section");
    }
    let opts = TrainOptions {
        checkpoint_dir: Some(a.out.clone()),
    };
    let state = train_from(state, &data, &cfg.train, &opts)?;
    let log_path = a.out.join("train_log.csv");
    state.log.save(&log_path)?;
    if let Some(last) = state.log.last() {
        println!(
            "epoch {}: train_loss {:.4} eval_spearman {:.4}",
            last.epoch, last.train_loss, last.eval_spearman
        );
    }
    println!("wrote {} and {}", log_path.display(), a.out.join("last.ckpt").display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let model = Model::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data = cfg.dataset()?;
    let mut ec = EvalConfig::from_train(&cfg.train);
    ec.split = a.split;
    ec.n_frames = model.config().frames;
    let rho = evaluate(&model, &data, &ec)?;
    println!("spearman {rho:.6}");
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let mut spec = match (&a.preset, &a.axis) {
        (Some(name), _) => {
            let mut s = preset(name)?;
            for o in &a.config.overrides {
                let (path, value) = o
                    .split_once('=')
                    .with_context(|| format!("--set {o:?}: expected PATH=VALUE"))?;
                s.base.set_str(path.trim(), value.trim())?;
            }
            if let Some(t) = a.config.threads {
                s.base.train.threads = t;
            }
            s
        }
        (None, Some(axis)) => SweepSpec::custom(a.config.resolve()?, axis, &a.values),
        (None, None) => bail!("give --preset or --axis with --values"),
    };
    spec.epochs_override = a.epochs;
    spec.output_path = a.out;
    let outcome = run_sweep(&spec)?;
    print!("{}", outcome.table);
    for (row, why) in &outcome.failures {
        eprintln!("row {row} failed: {why}");
    }
    if let Some(dir) = &spec.output_path {
        println!("\nwrote {}", dir.join("results.csv").display());
    }
    if outcome.failures.len() == outcome.rows.len() {
        bail!("every sweep row failed");
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<()> {
    let suite: Suite = a.suite.parse()?;
    let reports = run_grad_suite(suite)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.report.passed).count();
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", reports.len());
    }
    Ok(())
}

fn plan_cmd(a: PlanArgs) -> Result<()> {
    let cfg = SamplerConfig {
        strategy: a.strategy,
        n_frames: a.n,
        fixed_offset_k: a.k,
        rng_seed: a.seed,
    };
    println!("{}", plan_frames(a.t, &cfg)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
        Command::PlanFrames(a) => plan_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
