//! Command-line front end: solve one instance, sweep the efficient
//! frontier, bound the feasible budget, or run the property suites.
//! Exit codes are the machine contract: 0 success, 1 configuration
//! error, 2 degenerate instance, 3 solver failure or non-convergence,
//! 4 infeasibility-analysis failure; `verify` exits 0 iff every check
//! passes. Internal parallelism is capped by `--threads` and the output
//! files are identical for any thread count.

mod config;
mod report;

use clap::{Parser, Subcommand, ValueEnum};
use mvdual_core::dual::{frontier, min_investment, solve_multipliers};
use mvdual_core::verify as suites;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "mvdual",
    version,
    about = "Mean-variance portfolio selection under nonlinear wealth dynamics with a no-bankruptcy floor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write a JSON report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. --set numerics.n_paths=20000.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Shorthand for --set numerics.seed=N.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker-thread cap; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Report path; defaults to output.report from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the mean target and write the frontier CSV.
    Frontier {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long = "c-min")]
        c_min: f64,
        #[arg(long = "c-max")]
        c_max: f64,
        #[arg(long = "c-count")]
        c_count: usize,
        /// CSV path; defaults to output.frontier from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the minimal feasible budget and the strict-feasibility verdicts.
    Feasibility {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the property suites and print a pass/fail table.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Oracle,
    Duality,
    Kkt,
    Comparison,
    Variational,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    match Cli::parse().command {
        Command::Solve {
            config,
            set,
            seed,
            threads,
            out,
        } => with_threads(threads, || cmd_solve(&config, &set, seed, out)),
        Command::Frontier {
            config,
            set,
            seed,
            threads,
            c_min,
            c_max,
            c_count,
            out,
        } => with_threads(threads, || {
            cmd_frontier(&config, &set, seed, c_min, c_max, c_count, out)
        }),
        Command::Feasibility {
            config,
            set,
            seed,
            threads,
        } => with_threads(threads, || cmd_feasibility(&config, &set, seed)),
        Command::Verify { suite, threads } => with_threads(threads, || cmd_verify(suite)),
    }
}

/// Runs `body` inside a dedicated pool of `threads` workers when a cap is
/// given; reductions in the core are chunk-aligned, so the result does
/// not depend on the pool size.
fn with_threads(threads: Option<usize>, body: impl FnOnce() -> i32 + Send) -> i32 {
    match threads {
        Some(k) if k > 0 => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(body),
            Err(e) => {
                eprintln!("error: cannot build a {k}-thread pool: {e}");
                1
            }
        },
        Some(_) => {
            eprintln!("error: --threads must be at least 1");
            1
        }
        None => body(),
    }
}

fn cmd_solve(path: &PathBuf, sets: &[String], seed: Option<u64>, out: Option<PathBuf>) -> i32 {
    let cfg = match config::load(path, sets, seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let built = (|| -> Result<_, config::ConfigError> {
        Ok((cfg.problem_spec()?, cfg.simulate()?))
    })();
    let (spec, paths) = match built {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let out_path = out.unwrap_or_else(|| PathBuf::from(&cfg.output.report));
    let started = Instant::now();
    match solve_multipliers(&spec, &paths, &cfg.regression(), &cfg.picard()) {
        Ok(rep) => {
            let doc = report::ReportDoc::new(&rep, cfg, started.elapsed().as_secs_f64());
            if let Err(e) = report::write_json(&out_path, &doc) {
                eprintln!("error: {e}");
                return 1;
            }
            println!(
                "variance {} (degenerate {}, converged {}), report written to {}",
                rep.variance,
                rep.degenerate,
                rep.converged,
                out_path.display()
            );
            if rep.degenerate {
                2
            } else if !rep.converged {
                3
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: solve failed: {e}");
            3
        }
    }
}

fn cmd_frontier(
    path: &PathBuf,
    sets: &[String],
    seed: Option<u64>,
    c_min: f64,
    c_max: f64,
    c_count: usize,
    out: Option<PathBuf>,
) -> i32 {
    if !(c_min > 0.0) || !(c_min <= c_max) || c_count < 1 {
        eprintln!("error: frontier needs 0 < c-min <= c-max and c-count >= 1");
        return 1;
    }
    let cfg = match config::load(path, sets, seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let built = (|| -> Result<_, config::ConfigError> {
        Ok((cfg.problem_spec()?, cfg.simulate()?))
    })();
    let (spec, paths) = match built {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let targets: Vec<f64> = if c_count == 1 {
        vec![c_min]
    } else {
        (0..c_count)
            .map(|i| c_min + (c_max - c_min) * i as f64 / (c_count - 1) as f64)
            .collect()
    };
    let rows = frontier(&spec, &targets, &paths, &cfg.regression(), &cfg.picard());
    let out_path = out.unwrap_or_else(|| PathBuf::from(&cfg.output.frontier));
    if let Err(e) = std::fs::write(&out_path, report::frontier_csv(&rows)) {
        eprintln!("error: cannot write {}: {e}", out_path.display());
        return 1;
    }
    let solved = rows.iter().filter(|r| r.converged).count();
    println!(
        "{} of {} targets solved, frontier written to {}",
        solved,
        rows.len(),
        out_path.display()
    );
    if solved == 0 {
        3
    } else {
        0
    }
}

fn cmd_feasibility(path: &PathBuf, sets: &[String], seed: Option<u64>) -> i32 {
    let cfg = match config::load(path, sets, seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let built = (|| -> Result<_, config::ConfigError> {
        Ok((cfg.problem_spec()?, cfg.simulate()?))
    })();
    let (spec, paths) = match built {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match min_investment(&spec, &paths, &cfg.regression(), &cfg.picard()) {
        Ok(bound) => {
            let y = cfg.problem.y;
            let yes = |b: bool| if b { "yes" } else { "no" };
            println!("x_bar = {}", bound.minimal_investment);
            println!("upper_bound = {}", !bound.sharp);
            println!("lambda_star = {}", bound.lambda_star);
            println!("x_bar <= y: {}", yes(bound.minimal_investment <= y));
            println!(
                "x_bar < y (slater): {}",
                yes(bound.minimal_investment < y)
            );
            0
        }
        Err(e) => {
            eprintln!("error: feasibility analysis failed: {e}");
            4
        }
    }
}

/// Monte Carlo scales for the sampled suites; the identities they check
/// are scale-aware (bands shrink with the path count), so these only
/// trade runtime against resolution.
const VERIFY_SEED: u64 = 7;
const VERIFY_PATHS_DUALITY: usize = 100_000;
const VERIFY_PATHS_KKT: usize = 100_000;
const VERIFY_PATHS_COMPARISON: usize = 40_000;
const VERIFY_PATHS_VARIATIONAL: usize = 20_000;

fn cmd_verify(suite: Suite) -> i32 {
    let mut table: Vec<(&'static str, suites::CheckResult)> = Vec::new();
    let want = |s: Suite| suite == Suite::All || suite == s;
    if want(Suite::Oracle) {
        table.extend(suites::oracle_suite().into_iter().map(|r| ("oracle", r)));
    }
    if want(Suite::Duality) {
        table.extend(
            suites::duality_suite(VERIFY_PATHS_DUALITY, VERIFY_SEED)
                .into_iter()
                .map(|r| ("duality", r)),
        );
    }
    if want(Suite::Kkt) {
        table.extend(
            suites::kkt_suite(VERIFY_PATHS_KKT, VERIFY_SEED)
                .into_iter()
                .map(|r| ("kkt", r)),
        );
    }
    if want(Suite::Comparison) {
        table.extend(
            suites::comparison_suite(VERIFY_PATHS_COMPARISON, VERIFY_SEED)
                .into_iter()
                .map(|r| ("comparison", r)),
        );
    }
    if want(Suite::Variational) {
        table.extend(
            suites::variational_suite(VERIFY_PATHS_VARIATIONAL, VERIFY_SEED)
                .into_iter()
                .map(|r| ("variational", r)),
        );
    }
    let mut all_passed = true;
    for (suite_name, check) in &table {
        all_passed &= check.passed;
        println!(
            "{:<12} {:<32} {:<5} {}",
            suite_name,
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    println!(
        "{} of {} checks passed",
        table.iter().filter(|(_, c)| c.passed).count(),
        table.len()
    );
    if all_passed {
        0
    } else {
        1
    }
}
