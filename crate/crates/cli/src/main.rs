use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use densteer::complexity::{complexity_report, ManifoldSpec};
use densteer::scenario::{run_scenario, validate_config, RunOptions};

/// Exit status when a run completes but a hard check fails.
const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for unreadable or invalid configs and runtime errors.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "densteer", version, about = "Steer ensembles of linear systems along diffeomorphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json (and trajectories.csv).
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for particle simulation.
        #[arg(long, env = "DENSTEER_THREADS")]
        threads: Option<usize>,
    },
    /// Check a config and list every problem with its field path.
    Validate { config: PathBuf },
    /// Print covering and switching bounds for a catalog manifold.
    Bounds {
        /// circle, sphere, S<n> or torus.
        #[arg(long)]
        manifold: String,
        #[arg(long)]
        r: f64,
        /// Flows per fragment; defaults to the intrinsic dimension.
        #[arg(long)]
        k: Option<usize>,
    },
}

fn read_config(path: &PathBuf) -> Result<densteer::scenario::ScenarioConfig, String> {
    let raw = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    validate_config(&raw).map_err(|e| format!("invalid config {}:\n{e}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run_scenario(&cfg, &RunOptions { out_dir: out, threads }).map_err(|e| e.to_string())?;
            let report = &outcome.report;
            for c in &report.hard_checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                println!("{tag} {} = {:e} ({} {:e})", c.name, c.value, c.relation, c.limit);
            }
            for w in &report.warnings {
                println!("warn {w}");
            }
            println!("report: {}", outcome.report_path.display());
            if let Some(p) = &outcome.trajectories_path {
                println!("trajectories: {}", p.display());
            }
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            })
        }
        Command::Validate { config } => {
            let cfg = read_config(&config)?;
            println!("ok: {} scenario", serde_json::to_value(cfg.scenario).map_err(|e| e.to_string())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { manifold, r, k } => {
            let m = ManifoldSpec::by_name(&manifold).map_err(|e| e.to_string())?;
            let k = k.unwrap_or(m.intrinsic_dim);
            let rep = complexity_report(&m, r, k).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&rep).map_err(|e| e.to_string())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
