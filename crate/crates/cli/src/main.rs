use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use coalitiond::config::{self, Overrides};
use coalitiond::runner;

#[derive(Parser)]
#[command(
    name = "coalitiond",
    version,
    about = "Distributed payoff tracking over dynamic coalitional games"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a tracking scenario and write its artifact directory.
    Run {
        /// Path to a run config (JSON).
        config: PathBuf,
        /// Override the step size from the config.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the master seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of samples from the config.
        #[arg(long)]
        horizon: Option<usize>,
        /// Output subdirectory name; defaults to a hash of the manifest.
        #[arg(long)]
        tag: Option<String>,
    },
    /// Print the exact Shapley value of a game file.
    ShapleyExact {
        /// Path to a game (JSON).
        game: PathBuf,
    },
    /// Check an allocation against every core constraint of a game.
    CoreCheck {
        /// Path to a game (JSON).
        game: PathBuf,
        /// Path to the allocation (flat numeric CSV).
        x: PathBuf,
        /// Constraint slack treated as satisfied.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Time one agent's online update against the exact computation.
    Benchmark {
        /// Path to a benchmark config (JSON).
        config: PathBuf,
    },
    /// Check a run config and list every problem found.
    Validate {
        /// Path to a run config (JSON).
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run {
            config,
            alpha,
            seed,
            horizon,
            tag,
        } => {
            let raw = runner::load_config(&config)?;
            let over = Overrides {
                alpha,
                seed,
                horizon,
            };
            let artifacts = runner::execute_run(config::resolve(&raw, &over), tag.as_deref())?;
            println!("wrote {}", artifacts.dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ShapleyExact { game } => {
            let game = runner::load_game(&game)?;
            println!("{}", runner::shapley_exact_line(&game)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::CoreCheck { game, x, tol } => {
            let game = runner::load_game(&game)?;
            let x = runner::read_allocation_csv(&x)?;
            let out = runner::core_check(&game, &x, tol)?;
            println!("{}", serde_json::to_string(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Benchmark { config } => {
            let cfg = runner::load_bench_config(&config)?;
            let rows = runner::run_benchmark(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading config file {}", config.display()))?;
            let violations = runner::validate_config_text(&text);
            if violations.is_empty() {
                println!("config ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
