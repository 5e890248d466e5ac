use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gossip_pga::cli::{self, CheckGroup, ExperimentConfig, RunOptions};

/// Gossip SGD with periodic global averaging: simulator and theory tables.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Override the number of trials per run.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum number of trials executed concurrently (default: all cores).
    #[arg(long)]
    parallel: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            trials: self.trials,
            seed: self.seed,
            output_dir: self.out.clone(),
            parallel: self.parallel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured run and trial, writing trajectory, ensemble and summary CSVs.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write transient-stage exponent tables and the per-size grid.
    Tables {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in invariant checks.
    Verify {
        /// Restrict to these check groups.
        #[arg(long, value_enum, value_delimiter = ',')]
        subset: Vec<CheckGroup>,
        /// Extra weight matrices (CSV, no header) to test for double stochasticity.
        #[arg(long)]
        weights: Vec<PathBuf>,
        /// Also print the report as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write the generated dataset of a config as CSV.
    ExportDataset {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn execute(command: Command) -> gossip_pga::Result<bool> {
    match command {
        Command::Run { config, common } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cli::run_experiment(&cfg, &common.options())?;
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            for s in &out.summary {
                let t = s.transient.map_or("none".to_string(), |k| k.to_string());
                println!("{}: transient {t}, final gap {:.4e}", s.run, s.final_gap);
            }
            for r in &out.runs {
                for (trial, msg) in &r.failures {
                    eprintln!("{} trial {trial} failed: {msg}", r.name);
                }
            }
            Ok(true)
        }
        Command::Tables { config, common } => {
            let cfg = ExperimentConfig::load(&config)?;
            for f in cli::emit_theory_tables(&cfg, &common.options())? {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Verify {
            subset,
            weights,
            json,
            common,
        } => {
            let report = cli::verify(&subset, &weights, common.parallel)?;
            print!("{}", report.render());
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
            }
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                cli::write_report_json(&report, &dir.join("verify_report.json"))?;
            }
            Ok(report.pass)
        }
        Command::ExportDataset { config, common } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cli::export_dataset(&cfg, &common.options())?;
            println!("wrote {}", dir.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
