use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hfel::sim::{emit_outputs, report, run, summarize};
use hfel::{Error, Method, ScenarioConfig};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_INVALID_CONFIG: u8 = 3;

/// Simulate hierarchical federated edge learning with adaptive resource
/// allocation and backhaul topology design.
#[derive(Parser)]
#[command(name = "hfel-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trace, summary and plots.
    Run(RunArgs),
    /// Run every method and seed combination as separate processes.
    Sweep(SweepArgs),
    /// Rebuild summary tables and plots from the CSV traces in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the built-in canonical scenario as TOML.
    Config,
}

#[derive(Args)]
struct Scenario {
    /// TOML scenario file; the canonical scenario is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: Scenario,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    out: PathBuf,
    /// Only write the trace CSV.
    #[arg(long)]
    no_report: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: Scenario,
    /// Comma-separated methods; all five by default.
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    /// Number of seeds, starting at the config's seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent child processes; defaults to available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(s: &Scenario) -> hfel::Result<ScenarioConfig> {
    match &s.config {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::canonical()),
    }
}

fn run_one(args: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = load(&args.scenario)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    let traces = run(&cfg)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if args.no_report {
        report::write_run(&args.out, &traces)?;
    } else {
        emit_outputs(std::slice::from_ref(&traces), &args.out)?;
    }
    let s = summarize(&traces)?;
    println!(
        "{} seed {}: time {:.3} s, energy {:.4} J, best accuracy {:.4}",
        s.method, s.seed, s.total_time, s.total_energy, s.best_accuracy
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let cfg = load(&args.scenario)?;
    let methods = if args.method.is_empty() { Method::ALL.to_vec() } else { args.method.clone() };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let exe = std::env::current_exe()?;
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let grid: Vec<(Method, u64)> =
        methods.iter().flat_map(|m| (0..args.seeds).map(move |k| (*m, cfg.seed + k))).collect();
    let mut failed = Vec::new();
    for batch in grid.chunks(jobs) {
        let children = batch
            .iter()
            .map(|(m, seed)| {
                let mut cmd = Command::new(&exe);
                cmd.arg("run").arg("--method").arg(m.as_str()).arg("--seed").arg(seed.to_string());
                cmd.arg("--out").arg(&args.out).arg("--no-report");
                if let Some(p) = &args.scenario.config {
                    cmd.arg("--config").arg(p);
                }
                Ok(((*m, *seed), cmd.spawn()?))
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        for (key, mut child) in children {
            let status = child.wait()?;
            if !status.success() {
                failed.push((key, status.code()));
            }
        }
    }
    let runs = report::load_runs(&args.out)?;
    report::write_report(&runs, &args.out)?;
    if let Some(((m, seed), code)) = failed.first() {
        if failed.iter().all(|(_, c)| *c == Some(EXIT_INFEASIBLE.into())) {
            return Err(Error::Infeasible {
                device: 0,
                reason: format!("{} runs infeasible, first {m} seed {seed}", failed.len()),
            }
            .into());
        }
        bail!("{} runs failed, first {m} seed {seed} with exit code {code:?}", failed.len());
    }
    Ok(())
}

fn regenerate(out: &Path) -> anyhow::Result<()> {
    let runs = report::load_runs(out)?;
    if runs.is_empty() {
        bail!("no trace CSVs in {}", out.display());
    }
    for p in report::write_report(&runs, out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible { .. }) => EXIT_INFEASIBLE,
        Some(Error::Config(_)) => EXIT_INVALID_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Run(args) => run_one(args),
        Cmd::Sweep(args) => sweep(args),
        Cmd::Report { out } => regenerate(out),
        Cmd::Config => ScenarioConfig::canonical().to_toml_string().map(|s| print!("{s}")).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
