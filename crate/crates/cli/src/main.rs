use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otkit_cli::bench::{run_bench, BenchOptions, Suite, DEFAULT_REPETITIONS};
use otkit_cli::commands::{run, CliError, Command, Method, SolveOptions};

/// Discrete optimal transport: exact, entropic, Nystrom and projection solvers.
#[derive(Parser, Debug)]
#[command(name = "otkit", version)]
struct Cli {
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, env = "OTKIT_THREADS", default_value_t = 1)]
    threads: usize,

    /// Report every wall time as 0 so reports are byte-identical across runs.
    #[arg(long, global = true)]
    no_timing: bool,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Print the transport distance between two measure files.
    Distance {
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Write the optimal plan as `i,j,mass` rows.
    Plan {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the estimated Monge map: source then image coordinates.
    Map {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded scaling experiment.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Nystrom rank for the factored suite.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
        repetitions: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Source measure CSV.
    source: PathBuf,
    /// Target measure CSV.
    target: PathBuf,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Entropic strength; defaults to 10 / median cost.
    #[arg(long)]
    eta: Option<f64>,
    /// Sinkhorn marginal tolerance, or the absolute residual tolerance of
    /// the projection estimators.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Nystrom rank s.
    #[arg(long)]
    rank: Option<usize>,
    /// Directions per sliced update.
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use Sobol directions instead of random ones.
    #[arg(long)]
    low_discrepancy: bool,
}

impl SolveArgs {
    fn into_options(self, default: Method, out: Option<PathBuf>, threads: usize, timing: bool) -> SolveOptions {
        SolveOptions {
            source: self.source,
            target: self.target,
            method: self.method.unwrap_or(default),
            eta: self.eta,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            rank: self.rank,
            slices: self.slices,
            seed: self.seed,
            low_discrepancy: self.low_discrepancy,
            out,
            threads,
            timing,
        }
    }
}

fn fail(err: CliError) -> ExitCode {
    eprintln!("otkit: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        return fail(CliError::Input("--threads must be at least 1".into()));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return fail(CliError::Input(format!("thread pool: {e}")));
    }
    let timing = !cli.no_timing;

    let (command, opts) = match cli.command {
        Sub::Bench { suite, sizes, seed, rank, repetitions, out } => {
            let opts = BenchOptions { suite, sizes, seed, rank, repetitions, out, timing };
            return match run_bench(&opts) {
                Ok(summary) => {
                    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            };
        }
        Sub::Distance { solve } => (Command::Distance, solve.into_options(Method::Exact, None, cli.threads, timing)),
        Sub::Plan { solve, out } => (Command::Plan, solve.into_options(Method::Exact, Some(out), cli.threads, timing)),
        Sub::Map { solve, out } => (Command::Map, solve.into_options(Method::Ppmm, Some(out), cli.threads, timing)),
    };

    match run(command, &opts) {
        Ok(report) => {
            println!("{}", report.to_json());
            if report.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("otkit: {} did not converge within {} iterations", report.method, report.iterations);
                ExitCode::from(3)
            }
        }
        Err(e) => fail(e),
    }
}
