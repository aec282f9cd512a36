//! `noisynet`: train, evaluate and compare NoisyNet agents on toy environments.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for failures
//! while running.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use noisynet::checkpoint::Checkpoint;
use noisynet::env::EnvConfig;
use noisynet::error::Error;
use noisynet::harness::{self, AgentKind, ExperimentConfig, NoisePolicy, Snapshot};
use noisynet::metrics;
use noisynet::noisy::NoiseKind;
use noisynet::par::Execution;

#[derive(Parser)]
#[command(
    name = "noisynet",
    version,
    about = "NoisyNet agents on toy exploration tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write its run directory.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Compare baseline and noisy runs as a table row.
    Compare(CompareArgs),
    /// Print the Σ̄ trace of a run as CSV.
    SigmaTrace(SigmaArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Train the noisy variant.
    #[arg(long, conflicts_with = "baseline")]
    noisy: bool,
    /// Train the baseline (ε-greedy or entropy-regularised) variant.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    noise_kind: Option<NoiseKind>,
    #[arg(long)]
    sigma0: Option<f64>,
    /// Noisify the trunk as well as the heads.
    #[arg(long)]
    all_layers: bool,
    /// e.g. `chain:20:40`, `grid:5x5`, `bandit:0.1,0.9`.
    #[arg(long)]
    env: Option<EnvConfig>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    eval_period: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// resample-per-action, frozen or zero.
    #[arg(long)]
    eval_noise: Option<NoisePolicy>,
    /// Run seeds one after another.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    no_checkpoints: bool,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    env: EnvConfig,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Defaults to resample-per-action for value networks, frozen for A3C.
    #[arg(long)]
    noise: Option<NoisePolicy>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline run directories (or metrics.csv files).
    #[arg(long, num_args = 1.., required = true)]
    baseline: Vec<PathBuf>,
    /// Noisy run directories (or metrics.csv files).
    #[arg(long, num_args = 1.., required = true)]
    noisy: Vec<PathBuf>,
}

#[derive(Args)]
struct SigmaArgs {
    /// Run directory or metrics.csv.
    run: PathBuf,
    /// Only this seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(agent) = args.agent {
        config.agent = agent;
    }
    if args.noisy {
        config.noisy = true;
    }
    if args.baseline {
        config.noisy = false;
    }
    if let Some(kind) = args.noise_kind {
        config.noise_kind = Some(kind);
    }
    if let Some(s) = args.sigma0 {
        config.sigma0 = s;
    }
    if args.all_layers {
        config.noisy_all_layers = true;
    }
    if let Some(env) = args.env {
        config.env = env;
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Some(f) = args.frames {
        config.frames = f;
    }
    if let Some(p) = args.eval_period {
        config.eval_period = p;
    }
    if let Some(e) = args.eval_episodes {
        config.eval_episodes = e;
    }
    if args.eval_noise.is_some() {
        config.eval_noise = args.eval_noise;
    }
    if args.sequential {
        config.execution = Execution::Sequential;
    }
    if args.no_checkpoints {
        config.checkpoints = false;
    }
    let summary = harness::train(&config, &args.out)?;
    println!(
        "{} on {}: config {}",
        summary.agent,
        summary.env,
        &summary.config_hash[..12]
    );
    for s in &summary.seeds {
        println!(
            "  seed {}: final {:.4}, best {:.4}, first success {}, {:.1}s",
            s.seed,
            s.final_raw_score,
            s.max_raw_score,
            s.episodes_to_first_success
                .map_or("never".to_string(), |e| format!("episode {e}")),
            s.wall_clock_secs
        );
    }
    println!(
        "  normalised score: mean {:.1}, median {:.1}",
        summary.mean_norm_score, summary.median_norm_score
    );
    if let Some(obs) = &summary.sigma_observation {
        println!("  {obs}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let snapshot = Snapshot::from_checkpoint(Checkpoint::load(&args.checkpoint)?);
    let policy = args.noise.unwrap_or(match snapshot {
        Snapshot::Value { .. } => NoisePolicy::ResamplePerAction,
        Snapshot::ActorCritic { .. } => NoisePolicy::Frozen,
    });
    let score = harness::evaluate(&snapshot, &args.env, args.episodes, policy, args.seed, 0)?;
    println!("{score}");
    Ok(())
}

fn load_all(paths: &[PathBuf]) -> anyhow::Result<Vec<harness::RunRecord>> {
    let mut records = Vec::new();
    for p in paths {
        records
            .extend(harness::load_records(p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(records)
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let row = harness::compare(&load_all(&args.baseline)?, &load_all(&args.noisy)?)?;
    print!("{}", metrics::format_table(&[row]));
    Ok(())
}

fn sigma_trace(args: SigmaArgs) -> anyhow::Result<()> {
    let records = harness::load_records(&args.run)?;
    let mut out = String::new();
    let layers = records
        .first()
        .map_or(0, |r| r.points.first().map_or(0, |p| p.sigma_bar.len()));
    out.push_str("seed,frame");
    for i in 0..layers {
        out.push_str(&format!(",sigma_bar_layer_{i}"));
    }
    for i in 0..layers {
        out.push_str(&format!(",sigma_bar_bias_layer_{i}"));
    }
    out.push('\n');
    for r in records
        .iter()
        .filter(|r| args.seed.is_none_or(|s| s == r.seed))
    {
        for p in &r.points {
            out.push_str(&format!("{},{}", r.seed, p.frame));
            for v in p.sigma_bar.iter().chain(&p.sigma_bar_bias) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    print!("{out}");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::SigmaTrace(a) => sigma_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
