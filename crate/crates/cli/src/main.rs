use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use rescbf_cli::{
    dump_qp, run_scenario, run_suite, summary_table, validate, ScenarioConfig, ValidateOptions,
};

#[derive(Parser)]
#[command(
    name = "rescbf",
    version,
    about = "Robust CLF/CBF quadratic-program controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its CSV and metrics.
    Run { config: PathBuf },
    /// Run every scenario in a directory; exits 1 if any assertion fails.
    Suite { dir: PathBuf },
    /// Check the numerical kernels against independent oracles.
    Validate {
        /// Scale factor on every threshold (below 1 tightens).
        #[arg(long, default_value_t = 1.0)]
        tol: f64,
        /// Offset added to the Lyapunov solution before checking it.
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb_lyapunov: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write the QP assembled at a given tick.
    DumpQp {
        config: PathBuf,
        #[arg(long)]
        tick: usize,
        /// Defaults to the scenario's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let (out, dir) = run_scenario(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
            for a in &out.assertions {
                println!(
                    "{} {}: {}",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.name,
                    a.detail
                );
            }
            println!("outputs in {}", dir.display());
            Ok(out.passed())
        }
        Command::Suite { dir } => {
            let entries = run_suite(&dir)?;
            print!("{}", summary_table(&entries));
            Ok(entries.iter().all(|e| e.passed()))
        }
        Command::Validate {
            tol,
            perturb_lyapunov,
            seed,
        } => {
            let results = validate(&ValidateOptions {
                tol_scale: tol,
                perturb_lyapunov,
                seed,
            });
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::DumpQp { config, tick, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.resolve_output_dir());
            for p in dump_qp(&cfg, tick, &dir).context("dumping the QP")? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}
