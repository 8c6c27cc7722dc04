//! `quadlab`: train, evaluate, track, benchmark and ablate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use quadlab::bench;
use quadlab::checkpoint::Checkpoint;
use quadlab::config::ExperimentConfig;
use quadlab::env::{Ablation, EnvConfig, ACTION_DIM};
use quadlab::pid::PidGains;
use quadlab::tasks::{self, LissajousSpec, TrackingResult};
use quadlab::td3::{self, EvalSummary, TrainOutcome};
use quadlab::{CheckpointError, ConfigError, TrainError};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_NAN: u8 = 4;
const EXIT_CHECKPOINT: u8 = 5;

const THREADS_ENV: &str = "QUADLAB_THREADS";
const DEFAULT_SEEDS: &str = "0..10";

#[derive(Parser)]
#[command(name = "quadlab", version, about = "Quadrotor rotor-speed control: simulation and training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write learning curves, checkpoints and a manifest.
    Train {
        /// Experiment JSON; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the configured number of environment steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Run directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the position task, one episode per seed.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma list and/or half-open ranges, e.g. `0..10` or `1,4,7`.
        #[arg(long, default_value = DEFAULT_SEEDS)]
        seeds: String,
        /// Per-episode CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly the figure-eight with a checkpoint or the PID baseline.
    Track {
        /// Actor checkpoint; the PID baseline is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Environment for the PID baseline.
        #[arg(long, conflicts_with = "checkpoint")]
        config: Option<PathBuf>,
        /// Cycle time in seconds (15, 5.5 and 3.5 are slow, medium, fast).
        #[arg(long, default_value_t = 15.0)]
        interval: f64,
        #[arg(long, default_value = DEFAULT_SEEDS)]
        seeds: String,
        /// Directory for per-seed traces and the summary CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure batch-stepping throughput.
    Bench {
        /// Experiment JSON; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_BATCH_SIZES)]
        batch_sizes: Vec<usize>,
        /// Measurement time per batch size, milliseconds.
        #[arg(long, default_value_t = 2000)]
        duration_ms: u64,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every (row, seed) of an ablation table.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated row names; all rows when absent.
        #[arg(long)]
        rows: Option<String>,
        #[arg(long, default_value = "0..5")]
        seeds: String,
        /// Overrides the configured number of environment steps per run.
        #[arg(long)]
        steps: Option<u64>,
        /// Output directory for per-run directories and the summary tables.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors that map to a specific exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    NonFinite(String),
    Checkpoint(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Config(m) | Failure::NonFinite(m) | Failure::Checkpoint(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Failure>() {
                Some(Failure::Usage(_)) => EXIT_USAGE,
                Some(Failure::Config(_)) => EXIT_CONFIG,
                Some(Failure::NonFinite(_)) => EXIT_NAN,
                Some(Failure::Checkpoint(_)) => EXIT_CHECKPOINT,
                None => EXIT_FAILURE,
            };
            ExitCode::from(code)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Train {
            config,
            seed,
            steps,
            out,
        } => cmd_train(config.as_deref(), seed, steps, &out),
        Command::Eval { checkpoint, seeds, out } => cmd_eval(&checkpoint, &parse_seeds(&seeds)?, out.as_deref()),
        Command::Track {
            checkpoint,
            config,
            interval,
            seeds,
            out,
        } => cmd_track(checkpoint.as_deref(), config.as_deref(), interval, &parse_seeds(&seeds)?, out.as_deref()),
        Command::Bench {
            config,
            batch_sizes,
            duration_ms,
            out,
        } => cmd_bench(config.as_deref(), &batch_sizes, duration_ms, out.as_deref()),
        Command::Ablate {
            config,
            rows,
            seeds,
            steps,
            out,
        } => cmd_ablate(config.as_deref(), rows.as_deref(), &parse_seeds(&seeds)?, steps, &out),
    }
}

/// `"0..3,7"` → `[0, 1, 2, 7]`. Duplicates are rejected.
fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let bad = |part: &str| Failure::Usage(format!("invalid seed list entry {part:?}"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(part))?;
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if seeds.is_empty() {
        return Err(Failure::Usage("no seeds given".into()).into());
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::Usage(format!("duplicate seed {}", w[0])).into());
    }
    Ok(seeds)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    ExperimentConfig::load(path).map_err(|e| match e {
        ConfigError::Io(io) => Failure::Usage(format!("cannot read config {}: {io}", path.display())).into(),
        other => Failure::Config(format!("{}: {other}", path.display())).into(),
    })
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let c = Checkpoint::load(path).map_err(|e| match e {
        CheckpointError::Io(io) => Failure::Usage(format!("cannot read checkpoint {}: {io}", path.display())),
        other => Failure::Checkpoint(format!("{}: {other}", path.display())),
    })?;
    c.header
        .env
        .validate()
        .map_err(|e| Failure::Checkpoint(format!("{}: stored config invalid: {e}", path.display())))?;
    c.check_dims(c.header.env.actor_obs_dim(), ACTION_DIM)
        .map_err(|e| Failure::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(c)
}

fn train_error(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::NonFiniteLoss { .. } => Failure::NonFinite(e.to_string()).into(),
        TrainError::Config(_) => Failure::Config(e.to_string()).into(),
        other => other.into(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Serialize)]
struct RunManifest {
    config_hash: String,
    seed: u64,
    start_time_unix_s: u64,
    revision: String,
    outputs: Vec<String>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Trains once into `out` and returns the outcome for callers that need it.
fn train_run(cfg: &ExperimentConfig, seed: u64, out: &Path) -> anyhow::Result<TrainOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let start_time = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let config_json = cfg.to_json();
    let outcome = td3::train(&cfg.env, &cfg.td3, seed).map_err(train_error)?;

    let mut outputs = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> anyhow::Result<()> {
        write(&out.join(&name), bytes)?;
        outputs.push(name);
        Ok(())
    };
    emit("config.json".into(), config_json.clone().into_bytes())?;
    emit("stats.csv".into(), outcome.stats.to_csv().into_bytes())?;
    emit("timing.csv".into(), outcome.stats.timing_csv().into_bytes())?;
    for snap in &outcome.snapshots {
        let ck = Checkpoint::new(snap.actor.clone(), cfg.env.clone(), snap.step, seed);
        emit(format!("checkpoint_{}.qlck", snap.step), ck.to_bytes())?;
    }
    let final_step = outcome.stats.records.last().map_or(0, |r| r.step).max(cfg.td3.total_steps);
    let ck = Checkpoint::new(outcome.agent.actor.clone(), cfg.env.clone(), final_step, seed);
    emit("checkpoint_final.qlck".into(), ck.to_bytes())?;

    let manifest = RunManifest {
        config_hash: sha256_hex(config_json.as_bytes()),
        seed,
        start_time_unix_s: start_time,
        revision: revision(),
        outputs,
    };
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(outcome)
}

fn cmd_train(config: Option<&Path>, seed: u64, steps: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = steps {
        cfg.td3.total_steps = s;
    }
    let outcome = train_run(&cfg, seed, out)?;
    match outcome.stats.records.last() {
        Some(r) => println!(
            "trained {} steps: return {:.2} (ma {:.2}), length {:.1} (ma {:.1}), {:.1}s",
            r.step, r.return_mean, r.return_ma10, r.length_mean, r.length_ma10, r.wallclock_s
        ),
        None => println!("no evaluation ran; initial checkpoint written"),
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn describe(label: &str, xs: &[f64]) -> String {
    let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    format!("{label}: mean {mean:.4} median {:.4} min {min:.4}", median(xs))
}

/// One episode per seed, with the weights the checkpoint was trained under.
fn evaluate_seeds(ck: &Checkpoint, seeds: &[u64]) -> Vec<(u64, EvalSummary)> {
    let env = &ck.header.env;
    let weights = env.curriculum.weights_at(ck.header.global_step, env.components.curriculum);
    seeds
        .iter()
        .map(|&s| (s, td3::evaluate_actor(&ck.actor, env, &weights, 1, s)))
        .collect()
}

fn cmd_eval(checkpoint: &Path, seeds: &[u64], out: Option<&Path>) -> anyhow::Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let results = evaluate_seeds(&ck, seeds);
    let mut csv = String::from("seed,return,length,terminated\n");
    for (s, r) in &results {
        let e = &r.episodes[0];
        csv.push_str(&format!("{s},{:.6},{},{}\n", e.episode_return, e.length, e.terminated));
    }
    let lengths: Vec<f64> = results.iter().map(|(_, r)| r.mean_length).collect();
    let returns: Vec<f64> = results.iter().map(|(_, r)| r.mean_return).collect();
    let successes: usize = results.iter().map(|(_, r)| r.successes()).sum();
    println!("{}", describe("episode length", &lengths));
    println!("{}", describe("return", &returns));
    println!("success {successes}/{}", seeds.len());
    if let Some(out) = out {
        write(out, csv)?;
    }
    Ok(())
}

fn cmd_track(
    checkpoint: Option<&Path>,
    config: Option<&Path>,
    interval: f64,
    seeds: &[u64],
    out: Option<&Path>,
) -> anyhow::Result<()> {
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(Failure::Usage(format!("--interval must be positive, got {interval}")).into());
    }
    let spec = LissajousSpec::new(interval);
    let ck = checkpoint.map(load_checkpoint).transpose()?;
    let env: EnvConfig = match &ck {
        Some(c) => c.header.env.clone(),
        None => load_config(config)?.env,
    };
    let mut results: Vec<(u64, TrackingResult)> = Vec::new();
    for &seed in seeds {
        let r = match &ck {
            Some(c) => tasks::run_tracking(&c.actor, &env, &spec, seed)?,
            None => tasks::run_tracking_pid(PidGains::default(), &env, &spec, seed)?,
        };
        results.push((seed, r));
    }
    let controller = if ck.is_some() { "policy" } else { "pid" };
    let rmse: Vec<f64> = results.iter().map(|(_, r)| r.rmse).collect();
    let rmse_xy: Vec<f64> = results.iter().map(|(_, r)| r.rmse_xy).collect();
    let successes = results.iter().filter(|(_, r)| r.success).count();
    println!("{controller}, cycle time {interval} s");
    println!("{}", describe("rmse [m]", &rmse));
    println!("{}", describe("rmse_xy [m]", &rmse_xy));
    println!("success {successes}/{}", seeds.len());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut summary = String::from("seed,success,rmse_m,rmse_xy_m,duration_s\n");
        for (seed, r) in &results {
            summary.push_str(&format!(
                "{seed},{},{:.6},{:.6},{:.2}\n",
                r.success,
                r.rmse,
                r.rmse_xy,
                r.times.last().copied().unwrap_or(0.0)
            ));
            write(&dir.join(format!("trace_{seed}.csv")), r.to_csv())?;
        }
        write(&dir.join("tracking.csv"), summary)?;
    }
    Ok(())
}

fn cmd_bench(config: Option<&Path>, sizes: &[usize], duration_ms: u64, out: Option<&Path>) -> anyhow::Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Failure::Usage("batch sizes must be positive".into()).into());
    }
    let cfg = load_config(config)?;
    let report = bench::run(&cfg.env, sizes, Duration::from_millis(duration_ms), 0)?;
    println!("threads {}, dt {} s", report.threads, report.dt_s);
    println!("{:>10} {:>16} {:>18} {:>12}", "batch", "steps/s", "sim s / wall s", "equivalent");
    for r in &report.rows {
        println!(
            "{:>10} {:>16.0} {:>18.0} {:>12}",
            r.batch_size, r.steps_per_s, r.sim_time_ratio, r.equivalent
        );
    }
    if let Some(out) = out {
        write(out, report.to_csv())?;
    }
    if report.rows.iter().any(|r| !r.equivalent) {
        bail!("batched stepping differs from sequential stepping");
    }
    Ok(())
}

fn parse_rows(text: Option<&str>) -> anyhow::Result<Vec<Ablation>> {
    let Some(text) = text else {
        return Ok(Ablation::ALL.to_vec());
    };
    let mut rows = Vec::new();
    for name in text.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let row = Ablation::from_name(name).ok_or_else(|| {
            let valid: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
            Failure::Usage(format!("unknown ablation row {name:?}; valid rows: {}", valid.join(", ")))
        })?;
        if rows.contains(&row) {
            return Err(Failure::Usage(format!("duplicate ablation row {:?}", row.name())).into());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Failure::Usage("no ablation rows given".into()).into());
    }
    Ok(rows)
}

fn slug(name: &str) -> String {
    name.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

fn cmd_ablate(
    config: Option<&Path>,
    rows: Option<&str>,
    seeds: &[u64],
    steps: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let rows = parse_rows(rows)?;
    let mut base = load_config(config)?;
    if let Some(s) = steps {
        base.td3.total_steps = s;
    }
    fs::create_dir_all(out)?;
    let eval_seeds: Vec<u64> = (0..10).collect();

    let mut runs = String::from("row,seed,checkpoint_step,mean_length,mean_return,successes,episodes\n");
    let mut table = String::from("row,checkpoint_step,seeds,mean_length,mean_return,successes,episodes\n");
    for row in &rows {
        let mut cfg = base.clone();
        cfg.env = cfg.env.with_ablation(*row);
        let mut per_step: Vec<(u64, Vec<EvalSummary>)> = Vec::new();
        for &seed in seeds {
            let dir = out.join(slug(row.name())).join(format!("seed_{seed}"));
            log::info!("ablation {:?} seed {seed}", row.name());
            let outcome = train_run(&cfg, seed, &dir)?;
            let mut actors: Vec<(u64, _)> = outcome.snapshots.iter().map(|s| (s.step, s.actor.clone())).collect();
            if !actors.iter().any(|(s, _)| *s == cfg.td3.total_steps) {
                actors.push((cfg.td3.total_steps, outcome.agent.actor.clone()));
            }
            for (step, actor) in actors {
                let ck = Checkpoint::new(actor, cfg.env.clone(), step, seed);
                let merged = EvalSummary::from_episodes(
                    evaluate_seeds(&ck, &eval_seeds)
                        .into_iter()
                        .flat_map(|(_, r)| r.episodes)
                        .collect(),
                );
                runs.push_str(&format!(
                    "{},{seed},{step},{:.3},{:.6},{},{}\n",
                    row.name(),
                    merged.mean_length,
                    merged.mean_return,
                    merged.successes(),
                    merged.episodes.len()
                ));
                match per_step.iter_mut().find(|(s, _)| *s == step) {
                    Some((_, v)) => v.push(merged),
                    None => per_step.push((step, vec![merged])),
                }
            }
        }
        for (step, summaries) in &per_step {
            let all = EvalSummary::from_episodes(summaries.iter().flat_map(|s| s.episodes.clone()).collect());
            table.push_str(&format!(
                "{},{step},{},{:.3},{:.6},{},{}\n",
                row.name(),
                summaries.len(),
                all.mean_length,
                all.mean_return,
                all.successes(),
                all.episodes.len()
            ));
        }
    }
    write(&out.join("ablation_runs.csv"), &runs)?;
    write(&out.join("ablation_table.csv"), &table)?;
    print!("{table}");
    Ok(())
}
