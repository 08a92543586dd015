//! Command-line front end for the cooperative branching-coalescent
//! simulator. One subcommand per experiment; deterministic CSV/JSON/PBM/SVG
//! artifacts; flat key=value config files with flag precedence.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;
mod output;
mod render;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{resolve_seed, CliResult, Failure, FileConfig};
use output::Artifacts;

#[derive(Parser)]
#[command(
    name = "coopbranch",
    version = output::BUILD_ID,
    about = "Simulations of the cooperative branching-coalescent on a ring"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed. Falls back to COOPBRANCH_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Defaults to available parallelism. Results do not
    /// depend on the thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the per-point CSV here.
    #[arg(long, global = true, value_name = "PATH")]
    out_csv: Option<PathBuf>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out_json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// One trajectory; CSV of density and pair density over time.
    Simulate(SimulateArgs),
    /// Sweep branching rates; locate both critical-point crossings.
    Scan(ScanArgs),
    /// Survival probability from a two-particle seed, two sizes, two horizons.
    Survival(SurvivalArgs),
    /// Power-law fit of a decaying observable at a subcritical rate.
    Decay(DecayArgs),
    /// Meeting time of two or three coalescing walkers on the line.
    Meeting(MeetingArgs),
    /// Interval-witness profiles of the three-path dual; monotonicity counts.
    Dual(DualArgs),
    /// Pathwise coupling suites plus the renormalization block detector.
    CoupleCheck(CoupleCheckArgs),
    /// Monte Carlo residuals of the density derivative identity.
    OdeCheck(OdeCheckArgs),
    /// Space-time diagram (PBM or SVG), space horizontal, time downward.
    Diagram(DiagramArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Branching rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Ring size.
    #[arg(long)]
    sites: Option<u32>,
    /// End time of the run.
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of uniformly spaced sample times (default 200).
    #[arg(long)]
    samples: Option<u64>,
    /// Start state: full, pair, or half (default full).
    #[arg(long)]
    initial: Option<String>,
}

#[derive(Args)]
struct ScanArgs {
    /// Rate grid as lo:hi:step, e.g. 2.0:3.0:0.1.
    #[arg(long)]
    grid: Option<String>,
    /// Ring size.
    #[arg(long)]
    sites: Option<u32>,
    /// Horizon for each point.
    #[arg(long)]
    horizon: Option<f64>,
    /// Replicas per grid point.
    #[arg(long)]
    replicas: Option<u64>,
    /// Density crossing rule: `2se` or a fixed cut (default 2se).
    #[arg(long)]
    density_threshold: Option<String>,
    /// Survival crossing rule: `2se` or a fixed cut (default 0.3).
    #[arg(long)]
    survival_threshold: Option<String>,
}

#[derive(Args)]
struct SurvivalArgs {
    /// Branching rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Ring size (the run also reports size sites/2).
    #[arg(long)]
    sites: Option<u32>,
    /// Full horizon (the run also reports the half horizon).
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of seeded runs.
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Args)]
struct DecayArgs {
    /// Branching rate (decay laws hold below 1/2).
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Ring size.
    #[arg(long)]
    sites: Option<u32>,
    /// Comma-separated measurement times, e.g. 50,100,200,350,500.
    #[arg(long)]
    times: Option<String>,
    /// Replicas per time point.
    #[arg(long)]
    replicas: Option<u64>,
    /// Observable: density, pairs, or survival.
    #[arg(long)]
    observable: Option<String>,
}

#[derive(Args)]
struct MeetingArgs {
    /// Number of walkers: 2 or 3 (default 3).
    #[arg(long)]
    walkers: Option<u32>,
    /// Comma-separated strictly increasing starts (default 0,1 or 0,1,2).
    #[arg(long, allow_hyphen_values = true)]
    starts: Option<String>,
    /// Number of independent runs.
    #[arg(long)]
    replicas: Option<u64>,
    /// Censoring time for runs that have not met (default 1e4).
    #[arg(long)]
    cap: Option<f64>,
}

#[derive(Args)]
struct DualArgs {
    /// Branching rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Ring size.
    #[arg(long)]
    sites: Option<u32>,
    /// Table horizon; profiles run from time horizon back to 0.
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of seeded replicas.
    #[arg(long)]
    replicas: Option<u64>,
    /// Cap on tracked dual pairs (default 1000000).
    #[arg(long)]
    cap: Option<u64>,
}

#[derive(Args)]
struct CoupleCheckArgs {
    /// Ring size.
    #[arg(long)]
    sites: Option<u32>,
    /// Horizon for each coupled run.
    #[arg(long)]
    horizon: Option<f64>,
    /// Seeded replicas per suite.
    #[arg(long)]
    replicas: Option<u64>,
    /// Base branching rate (default 1).
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Larger branching rate for the monotone suite (default 2).
    #[arg(long, allow_negative_numbers = true)]
    lambda_prime: Option<f64>,
    /// Lower open probability for the percolation nesting suite (default 0.45).
    #[arg(long)]
    p_low: Option<f64>,
    /// Higher open probability (default 0.75).
    #[arg(long)]
    p_high: Option<f64>,
    /// Block length for the good-block detector (default 1).
    #[arg(long)]
    block: Option<f64>,
    /// Replicas for the good-block Monte Carlo (default 100000).
    #[arg(long)]
    block_replicas: Option<u64>,
}

#[derive(Args)]
struct OdeCheckArgs {
    /// Branching rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Ring size.
    #[arg(long)]
    sites: Option<u32>,
    /// Comma-separated grid times (interior points get the residual check).
    #[arg(long)]
    times: Option<String>,
    /// Replicas per run.
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Args)]
struct DiagramArgs {
    /// Branching rate.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Ring size; the image is this many pixels wide.
    #[arg(long)]
    sites: Option<u32>,
    /// End time; rows sample [0, horizon] uniformly.
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of rows (default 400).
    #[arg(long)]
    samples: Option<u64>,
    /// Start state: full, pair, or half (default full).
    #[arg(long)]
    initial: Option<String>,
    /// Image format: pbm or svg (default pbm).
    #[arg(long)]
    format: Option<String>,
    /// Image output path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut file = FileConfig::load(cli.common.config.as_deref())?;
    let seed = resolve_seed(&mut file, cli.common.seed)?;
    let threads = file.take("threads", cli.common.threads)?;
    let out_csv = file.take::<PathBuf>("out-csv", cli.common.out_csv)?;
    let out_json = file.take::<PathBuf>("out-json", cli.common.out_json)?;

    // Resolve before running so an unknown config key fails fast.
    let resolved = Resolved::new(cli.command, &mut file)?;
    file.finish()?;

    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }

    let started = Instant::now();
    let name = resolved.name();
    let artifacts = resolved.run(seed)?;
    artifacts.emit(out_csv.as_deref(), out_json.as_deref())?;
    eprintln!(
        "[coopbranch] {name} finished in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Fully validated invocation, ready to execute.
enum Resolved {
    Simulate(commands::SimulateParams),
    Scan(commands::ScanParams),
    Survival(commands::SurvivalParams),
    Decay(commands::DecayParams),
    Meeting(commands::MeetingParams),
    Dual(commands::DualParams),
    CoupleCheck(commands::CoupleCheckParams),
    OdeCheck(commands::OdeCheckParams),
    Diagram(commands::DiagramParams),
}

impl Resolved {
    fn new(cmd: Cmd, file: &mut FileConfig) -> CliResult<Self> {
        Ok(match cmd {
            Cmd::Simulate(a) => Resolved::Simulate(commands::resolve_simulate(
                file, a.lambda, a.sites, a.horizon, a.samples, a.initial,
            )?),
            Cmd::Scan(a) => Resolved::Scan(commands::resolve_scan(
                file,
                a.grid,
                a.sites,
                a.horizon,
                a.replicas,
                a.density_threshold,
                a.survival_threshold,
            )?),
            Cmd::Survival(a) => Resolved::Survival(commands::resolve_survival(
                file, a.lambda, a.sites, a.horizon, a.replicas,
            )?),
            Cmd::Decay(a) => Resolved::Decay(commands::resolve_decay(
                file,
                a.lambda,
                a.sites,
                a.times,
                a.replicas,
                a.observable,
            )?),
            Cmd::Meeting(a) => Resolved::Meeting(commands::resolve_meeting(
                file, a.walkers, a.starts, a.replicas, a.cap,
            )?),
            Cmd::Dual(a) => Resolved::Dual(commands::resolve_dual(
                file, a.lambda, a.sites, a.horizon, a.replicas, a.cap,
            )?),
            Cmd::CoupleCheck(a) => Resolved::CoupleCheck(commands::resolve_couple_check(
                file,
                a.sites,
                a.horizon,
                a.replicas,
                a.lambda,
                a.lambda_prime,
                a.p_low,
                a.p_high,
                a.block,
                a.block_replicas,
            )?),
            Cmd::OdeCheck(a) => Resolved::OdeCheck(commands::resolve_ode_check(
                file, a.lambda, a.sites, a.times, a.replicas,
            )?),
            Cmd::Diagram(a) => Resolved::Diagram(commands::resolve_diagram(
                file, a.lambda, a.sites, a.horizon, a.samples, a.initial, a.format, a.out,
            )?),
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Resolved::Simulate(_) => "simulate",
            Resolved::Scan(_) => "scan",
            Resolved::Survival(_) => "survival",
            Resolved::Decay(_) => "decay",
            Resolved::Meeting(_) => "meeting",
            Resolved::Dual(_) => "dual",
            Resolved::CoupleCheck(_) => "couple-check",
            Resolved::OdeCheck(_) => "ode-check",
            Resolved::Diagram(_) => "diagram",
        }
    }

    fn run(&self, seed: u64) -> CliResult<Artifacts> {
        match self {
            Resolved::Simulate(p) => commands::run_simulate(p, seed),
            Resolved::Scan(p) => commands::run_scan(p, seed),
            Resolved::Survival(p) => commands::run_survival(p, seed),
            Resolved::Decay(p) => commands::run_decay(p, seed),
            Resolved::Meeting(p) => commands::run_meeting(p, seed),
            Resolved::Dual(p) => commands::run_dual(p, seed),
            Resolved::CoupleCheck(p) => commands::run_couple_check(p, seed),
            Resolved::OdeCheck(p) => commands::run_ode_check(p, seed),
            Resolved::Diagram(p) => commands::run_diagram(p, seed),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    };
    if let Err(failure) = run(cli) {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.exit_code());
    }
}
