use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use beliefplay::commands::{self, CmdOutcome};
use beliefplay::config::{self, RunMode};
use beliefplay::dynamics::ScheduleSpec;
use beliefplay::error::Error;
use beliefplay::runner;

/// Simulate coupled belief/strategy learning dynamics in repeated games and
/// analyze their fixed points, stability, and convergence rates.
#[derive(Parser)]
#[command(name = "beliefplay", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded batch of learning dynamics from a config file.
    Simulate(SimulateArgs),
    /// Verification and report tools.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// List game ids and config presets.
    List,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config (may reference a preset via {"preset": "example1"}).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory for per-run CSVs and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Enumerate the fixed-point set on a belief grid.
    FixedPoints(FixedPointsArgs),
    /// Stability thresholds and the sampled local-stability condition.
    Stability(StabilityArgs),
    /// Fit belief decay rates from a trajectory CSV against analytic values.
    Rate(RateArgs),
    /// Integrate the continuous-time best-response flow at a fixed belief.
    Flow(FlowArgs),
    /// Belief-ratio martingale and submartingale-drift diagnostics.
    Martingale(MartingaleArgs),
    /// Stepsize-assumption report for a named schedule.
    Schedule(ScheduleArgs),
    /// Analytic vs Monte Carlo KL divergence at a profile.
    Kl(KlArgs),
}

#[derive(Args)]
struct GameArgs {
    /// Registered game id (see `beliefplay list`).
    #[arg(long)]
    game: String,
    /// JSON object overriding game constants.
    #[arg(long, default_value = "null")]
    overrides: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GameArgs {
    fn overrides(&self) -> Result<Value, Error> {
        serde_json::from_str(&self.overrides)
            .map_err(|e| Error::Config(format!("bad --overrides: {e}")))
    }
}

#[derive(Args)]
struct FixedPointsArgs {
    #[command(flatten)]
    game: GameArgs,
    /// Belief-simplex grid step.
    #[arg(long, default_value_t = 0.01)]
    grid: f64,
    /// Cluster radius for deduplication.
    #[arg(long, default_value_t = 0.05)]
    dedup: f64,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    game: GameArgs,
    /// Fixed-point belief, comma-separated probabilities.
    #[arg(long)]
    theta: String,
    /// Neighborhood size ε̂ entering the thresholds.
    #[arg(long)]
    eps: f64,
    /// Confidence level γ in (0,1).
    #[arg(long)]
    gamma: f64,
    /// Radius of the equilibrium neighborhood sampled for condition (b).
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    /// eq or br (br additionally checks best-response containment).
    #[arg(long, default_value = "eq")]
    mode: String,
    /// Belief-perturbation radius for the br-mode check.
    #[arg(long, default_value_t = 0.01)]
    eps_belief: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    game: GameArgs,
    /// Trajectory CSV produced by `simulate`.
    #[arg(long)]
    trajectory: PathBuf,
    /// Fraction of the trajectory discarded before fitting.
    #[arg(long, default_value_t = 0.5)]
    burn_in: f64,
    /// Relative tolerance on slope vs analytic KL.
    #[arg(long, default_value_t = 0.2)]
    tol: f64,
}

#[derive(Args)]
struct FlowArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long)]
    theta: String,
    /// Start profile, comma-separated flat strategy values.
    #[arg(long)]
    q0: String,
    /// Per-player weights in (0,1]; defaults to 1 for every player.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 40.0)]
    horizon: f64,
    /// Also write the integrated path as CSV.
    #[arg(long)]
    path_csv: Option<PathBuf>,
}

#[derive(Args)]
struct MartingaleArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long)]
    theta: String,
    #[arg(long)]
    q: String,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Schedule spec as JSON, e.g. {"kind":"harmonic"}.
    #[arg(long)]
    schedule: String,
    #[arg(long, default_value_t = 2)]
    players: usize,
    #[arg(long, default_value_t = 10_000)]
    horizon: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KlArgs {
    #[command(flatten)]
    game: GameArgs,
    /// Index of the compared parameter (the true one is implied).
    #[arg(long)]
    s: usize,
    #[arg(long)]
    q: String,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run() -> Result<CmdOutcome, Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => {
            let mut cfg = config::load_config(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.master_seed = seed;
            }
            if let Some(runs) = args.runs {
                cfg.runs = runs;
            }
            let out_dir = args
                .out
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let output = runner::cmd_simulate(&cfg, &out_dir)?;
            eprintln!(
                "{} runs of {}/{}: {:.1}% converged; wrote {} and {} trajectory files",
                output.report.runs,
                output.report.game,
                output.report.mode,
                100.0 * output.report.converged_fraction,
                output.summary_path.display(),
                output.csv_paths.len(),
            );
            Ok(CmdOutcome::Pass)
        }
        Command::Analyze(cmd) => match cmd {
            AnalyzeCmd::FixedPoints(a) => commands::analyze_fixed_points(
                &a.game.game,
                &a.game.overrides()?,
                a.grid,
                a.dedup,
                a.game.out.as_deref(),
            ),
            AnalyzeCmd::Stability(a) => {
                let theta = commands::parse_scalar_list(&a.theta)?;
                let mode = match a.mode.as_str() {
                    "eq" => RunMode::Eq,
                    "br" => RunMode::Br,
                    other => return Err(Error::Config(format!("bad --mode `{other}`"))),
                };
                commands::analyze_stability(
                    &a.game.game,
                    &a.game.overrides()?,
                    &theta,
                    a.eps,
                    a.gamma,
                    a.delta,
                    a.samples,
                    mode,
                    a.eps_belief,
                    a.seed,
                    a.game.out.as_deref(),
                )
            }
            AnalyzeCmd::Rate(a) => commands::analyze_rate(
                &a.trajectory,
                &a.game.game,
                &a.game.overrides()?,
                a.burn_in,
                a.tol,
                a.game.out.as_deref(),
            ),
            AnalyzeCmd::Flow(a) => {
                let theta = commands::parse_scalar_list(&a.theta)?;
                let q0 = commands::parse_scalar_list(&a.q0)?;
                let alpha = a.alpha.as_deref().map(commands::parse_scalar_list).transpose()?;
                commands::analyze_flow(
                    &a.game.game,
                    &a.game.overrides()?,
                    &theta,
                    &q0,
                    alpha,
                    a.dt,
                    a.horizon,
                    a.path_csv.as_deref(),
                    a.game.out.as_deref(),
                )
            }
            AnalyzeCmd::Martingale(a) => {
                let theta = commands::parse_scalar_list(&a.theta)?;
                let q = commands::parse_scalar_list(&a.q)?;
                commands::analyze_martingale(
                    &a.game.game,
                    &a.game.overrides()?,
                    &theta,
                    &q,
                    a.samples,
                    a.seed,
                    a.game.out.as_deref(),
                )
            }
            AnalyzeCmd::Schedule(a) => {
                let spec: ScheduleSpec = serde_json::from_str(&a.schedule)
                    .map_err(|e| Error::Config(format!("bad --schedule: {e}")))?;
                commands::analyze_schedule(spec, a.players, a.horizon, a.out.as_deref())
            }
            AnalyzeCmd::Kl(a) => {
                let q = commands::parse_scalar_list(&a.q)?;
                commands::analyze_kl(
                    &a.game.game,
                    &a.game.overrides()?,
                    a.s,
                    &q,
                    a.samples,
                    a.seed,
                    a.game.out.as_deref(),
                )
            }
        },
        Command::List => {
            println!("games:");
            for id in beliefplay::games::game_ids() {
                println!("  {id}");
            }
            println!("presets:");
            for name in config::preset_names() {
                println!("  {name}");
            }
            Ok(CmdOutcome::Pass)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(CmdOutcome::Pass) => ExitCode::SUCCESS,
        Ok(CmdOutcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
