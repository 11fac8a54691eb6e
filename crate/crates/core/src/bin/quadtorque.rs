//! Command-line front end: train, eval, validate, serve, export-heightfield.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use quadtorque::checkpoint::PolicyCheckpoint;
use quadtorque::error::Error;
use quadtorque::model::{load_experiment, ExperimentConfig, EFFECTIVE_CONFIG_FILE};
use quadtorque::telemetry::{serve, ServeOptions};
use quadtorque::terrain::Heightfield;
use quadtorque::train::{run_training, TrainOptions};
use quadtorque::validate::{
    cross_validate, run_episodes, write_episodes_csv, CommandProfile, ConfigMetrics,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "quadtorque",
    version,
    about = "Torque-level quadruped locomotion learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Roll out a checkpoint under a scripted command profile.
    Eval(EvalArgs),
    /// Compare a checkpoint under two physics configurations.
    Validate(ValidateArgs),
    /// Run a checkpoint live and stream telemetry over TCP.
    Serve(ServeArgs),
    /// Write a configuration's terrain as CSV.
    ExportHeightfield(ExportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of parallel environments.
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    out_dir: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Load a checkpoint even if its configuration fingerprint differs.
    #[arg(long)]
    force: bool,
    /// Print the effective configuration summary and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Configuration; defaults to the effective configuration saved with the run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Load a checkpoint even if its configuration fingerprint differs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Command profile CSV with header t,vx,vy,wz.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step cap per episode (default: the configured horizon).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value = "eval.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config_a: PathBuf,
    #[arg(long)]
    config_b: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "validation.csv")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Run unpaced instead of in real time.
    #[arg(long)]
    fast: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: PathBuf,
    /// Environment index (matters with per-environment terrain).
    #[arg(long, default_value_t = 0)]
    env_index: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Failure tagged with the exit status it should produce.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Validation { .. } | Error::Parse { .. }) => EXIT_CONFIG,
            Some(Error::NonFinite(_)) => EXIT_DIVERGED,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn config_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    load_experiment(path)
        .with_context(|| format!("loading configuration {}", path.display()))
        .map_err(config_failure)
}

/// The configuration saved next to a checkpoint (its directory or parent).
fn config_for_checkpoint(ckpt: &Path) -> Option<PathBuf> {
    let dir = ckpt.parent()?;
    [
        dir.join(EFFECTIVE_CONFIG_FILE),
        dir.parent()?.join(EFFECTIVE_CONFIG_FILE),
    ]
    .into_iter()
    .find(|p| p.exists())
}

fn load_policy(args: &CheckpointArgs) -> Result<(PolicyCheckpoint, ExperimentConfig), Failure> {
    let ckpt = PolicyCheckpoint::load(&args.checkpoint)?;
    let cfg_path = match &args.config {
        Some(p) => p.clone(),
        None => config_for_checkpoint(&args.checkpoint).ok_or_else(|| {
            config_failure(anyhow::anyhow!(
                "no --config given and no {EFFECTIVE_CONFIG_FILE} next to {}",
                args.checkpoint.display()
            ))
        })?,
    };
    let cfg = load_config(&cfg_path)?;
    ckpt.check_fingerprint(&cfg.fingerprint(), args.force)?;
    Ok((ckpt, cfg))
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.ppo.seed = s;
    }
    if let Some(n) = args.envs {
        cfg.ppo.n_envs = n;
    }
    if let Some(n) = args.iterations {
        cfg.ppo.iterations = n;
    }
    cfg.validate().map_err(config_failure)?;
    println!(
        "task {:?}: {} envs x {} steps = batch {}, {} minibatches of {}, {} epochs, {} iterations, seed {}",
        cfg.task,
        cfg.ppo.n_envs,
        cfg.ppo.steps_per_env,
        cfg.ppo.batch_size(),
        cfg.ppo.num_minibatches,
        cfg.ppo.minibatch_size(),
        cfg.ppo.epochs,
        cfg.ppo.iterations,
        cfg.ppo.seed
    );
    if args.dry_run {
        return Ok(());
    }
    let opts = TrainOptions {
        out_dir: args.out_dir,
        resume: args.resume,
        force: args.force,
    };
    let out = run_training(&cfg, &opts)?;
    println!(
        "finished at iteration {}; final checkpoint {}",
        out.iterations,
        out.final_checkpoint.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let (ckpt, cfg) = load_policy(&args.ckpt)?;
    let profile = CommandProfile::load(&args.profile)?;
    let steps = args.steps.unwrap_or(cfg.env.horizon_steps);
    let records = run_episodes(
        &ckpt.policy,
        &cfg,
        args.episodes,
        args.seed,
        steps,
        Some(&profile),
    )?;
    write_episodes_csv(&args.out, &records)?;
    let m = ConfigMetrics::from_records(&records);
    let n = records.len().max(1) as f64;
    let mean =
        |f: fn(&quadtorque::validate::EpisodeRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let falls = records.iter().filter(|r| r.fell()).count();
    println!("episodes            {}", m.episodes);
    println!("falls               {falls}");
    println!("mean episode length {:.1} steps", m.episode_length);
    println!("mean v_x            {:.4} m/s", mean(|r| r.mean_vx));
    println!("mean v_y            {:.4} m/s", mean(|r| r.mean_vy));
    println!(
        "mean |v_xy|         {:.4} m/s",
        mean(|r| r.mean_vx.hypot(r.mean_vy))
    );
    println!("mean w_z            {:.4} rad/s", mean(|r| r.mean_wz));
    println!("tracking error      {:.4} m/s", m.tracking_error);
    println!("mean total reward   {:.5}", mean(|r| r.total_reward));
    println!("per-episode results written to {}", args.out.display());
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let a = load_config(&args.config_a)?;
    let b = load_config(&args.config_b)?;
    let ckpt = PolicyCheckpoint::load(&args.checkpoint)?;
    ckpt.check_fingerprint(&a.fingerprint(), args.force)?;
    let report = cross_validate(&ckpt, &a, &b, args.episodes, args.seed)?;
    report.write_csv(&args.out)?;
    println!("{report}");
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<(), Failure> {
    let (ckpt, cfg) = load_policy(&args.ckpt)?;
    let opts = ServeOptions {
        addr: format!("{}:{}", args.host, args.port),
        fast: args.fast,
        seed: args.seed,
        ..ServeOptions::default()
    };
    let summary = serve(
        &ckpt.policy,
        &cfg,
        (ckpt.iteration, ckpt.fingerprint),
        &opts,
        |addr| {
            println!("listening on {addr}");
        },
    )?;
    println!("stopped after {} steps", summary.steps);
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let mut t = cfg.terrain.clone();
    if t.per_env {
        t.seed = t.seed.wrapping_add(args.env_index as u64);
    }
    let field = Heightfield::generate(&t)?;
    field.write_csv(&args.out)?;
    let (nx, ny) = field.dims();
    println!(
        "wrote {nx} x {ny} cells of {} m to {}",
        field.cell_size(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Validate(a) => validate(a),
        Command::Serve(a) => serve_cmd(a),
        Command::ExportHeightfield(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
