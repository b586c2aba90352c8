//! Command-line experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vvbo::benchmarks::{BenchmarkName, SyntheticProblem};
use vvbo::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "vvbo", version, about = "Vector-valued Bayesian optimization experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        /// Path to the experiment config document.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of concurrent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute aggregate.csv and plotdata.csv from per-run traces.
    Aggregate {
        /// Directory holding trace_run_*.csv and manifest.json.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print the brute-force optimum of a benchmark phase.
    Oracle {
        /// Benchmark name.
        #[arg(long)]
        benchmark: String,
        /// 1-based phase index.
        #[arg(long)]
        phase: usize,
        /// Frozen-randomness seed for the benchmark.
        #[arg(long, default_value_t = 2024)]
        benchmark_seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // single machine-readable error line
            let line = serde_json::json!({ "error": err.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> vvbo::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let resolved = cfg.resolve()?;
            let out_dir = out
                .or_else(|| resolved.output_dir.clone())
                .unwrap_or_else(|| {
                    PathBuf::from(format!(
                        "vvbo_runs/{}-{}",
                        resolved.benchmark.as_str(),
                        resolved.method.as_str()
                    ))
                });
            let outputs = harness::run_experiment(&resolved, &out_dir, workers.max(1))?;
            println!(
                "wrote {} runs to {} ({} failed)",
                resolved.n_runs,
                outputs.out_dir.display(),
                outputs.failures.len()
            );
            if outputs.failures.is_empty() {
                Ok(())
            } else {
                Err(vvbo::VvboError::Config(format!(
                    "{} of {} runs failed; partial results kept in {}",
                    outputs.failures.len(),
                    resolved.n_runs,
                    outputs.out_dir.display()
                )))
            }
        }
        Command::Aggregate { input } => {
            let rows = harness::reaggregate_dir(&input)?;
            println!(
                "aggregated {} iterations into {}",
                rows.len(),
                input.join("aggregate.csv").display()
            );
            Ok(())
        }
        Command::Oracle {
            benchmark,
            phase,
            benchmark_seed,
        } => {
            let name: BenchmarkName = benchmark.parse()?;
            let problem = SyntheticProblem::new(name, benchmark_seed)?;
            let (xstar, fstar) = problem.oracle_optimum(phase)?;
            let coords: Vec<String> = xstar.iter().map(|v| format!("{v}")).collect();
            println!("x* = [{}]", coords.join(", "));
            println!("F(x*) = {fstar}");
            Ok(())
        }
    }
}
