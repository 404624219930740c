use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rqa::bench::{self, exit};
use rqa::RqaError;

#[derive(Parser)]
#[command(name = "rqa", version, about = "PINN solver with residual-quantile adaptive weighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single configuration and write history.csv.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Iterations whose interior weights are written to weights_iter<k>.csv.
        #[arg(long, value_delimiter = ',')]
        dump_weights: Option<Vec<usize>>,
    },
    /// Train every grid cell for every seed and write summary CSVs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a config and run the manufactured-solution self-test.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, RqaError> {
    match cli.command {
        Command::Solve {
            config,
            out,
            dump_weights,
        } => {
            let cfg = bench::load_config(&config)?;
            let run = bench::run_single(&cfg, &out, dump_weights.as_deref())?;
            let s = &run.record.summary;
            println!(
                "{} seed={} final_l2={:.6e} final_max={:.6e}",
                s.strategy, s.seed, s.final_l2, s.final_max
            );
            println!("wrote {}", run.history_path.display());
            for p in run.weight_paths.iter().chain(&run.checksum_path) {
                println!("wrote {}", p.display());
            }
            Ok(exit::OK)
        }
        Command::Sweep { config, seeds, out } => {
            let cfg = bench::load_config(&config)?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            let outcome = bench::run_sweep(&cfg, &seeds, &out)?;
            for a in &outcome.aggregate {
                println!(
                    "{} runs={} mean_l2={:.6e} std_l2={:.6e}",
                    a.strategy, a.runs, a.mean_l2, a.std_l2
                );
            }
            println!("wrote {}", outcome.summary_path.display());
            println!("wrote {}", outcome.aggregate_path.display());
            Ok(exit::OK)
        }
        Command::Check { config } => {
            let cfg = bench::load_config(&config)?;
            println!("config ok: {} cell(s), {} seed(s)", cfg.cells().len(), cfg.seeds.len());
            let report = bench::self_check(&cfg.base.pde()?, 100, cfg.base.seed)?;
            println!("{report}");
            Ok(if report.passed() { exit::OK } else { exit::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        bench::exit_code(&e)
    });
    ExitCode::from(code as u8)
}
