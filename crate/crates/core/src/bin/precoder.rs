use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fp_precoding::harness::bench::{run_bench, write_bench_csv, BENCH_ITERATIONS};
use fp_precoding::harness::{bound_check, emit_report, run_experiment, Algorithm, ExperimentConfig, ExperimentReport};
use fp_precoding::Result;

#[derive(Parser)]
#[command(name = "precoder", version, about = "Stochastic MIMO precoding from channel moments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write CSV and JSON reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to these algorithms (fp, fast-fp, wmmse-static).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        algorithm: Vec<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Use the array sizes of the published experiments.
        #[arg(long)]
        paper_scale: bool,
        /// Record mean per-iteration wall time in the report.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the objective with its Monte-Carlo rate over a correlation grid.
    BoundCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time both solvers for several transmit array sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        mt_list: Vec<usize>,
        #[arg(long, default_value_t = BENCH_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Solve with full second-moment matrices instead of per-entry variances.
        #[arg(long)]
        dense: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_rows(report: &ExperimentReport) {
    println!("{:>12} {:>10} {:>14} {:>12} {:>12} {:>10} {:>6}", "param", "value", "algorithm", "fhat", "mc_rate", "ci99", "iters");
    for r in &report.rows {
        match &r.error {
            Some(e) => println!("{:>12} {:>10} {:>14} failed: {e}", r.sweep_param, r.sweep_value, r.algorithm.name()),
            None => println!(
                "{:>12} {:>10} {:>14} {:>12.5} {:>12.5} {:>10.5} {:>6}",
                r.sweep_param,
                r.sweep_value,
                r.algorithm.name(),
                r.fhat_nats.unwrap_or(f64::NAN),
                r.mc_rate_nats.unwrap_or(f64::NAN),
                r.mc_ci99_nats.unwrap_or(f64::NAN),
                r.iters.unwrap_or(0)
            ),
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            algorithm,
            seed,
            blocks,
            tol,
            max_iters,
            paper_scale,
            timing,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !algorithm.is_empty() {
                cfg.algorithms = algorithm;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = blocks {
                cfg.n_blocks = b;
            }
            if let Some(t) = tol {
                cfg.solver.tol = t;
            }
            if let Some(m) = max_iters {
                cfg.solver.max_iters = m;
            }
            cfg.paper_scale |= paper_scale;
            cfg.record_timing |= timing;
            let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            let report = run_experiment(&cfg)?;
            let (csv, json) = emit_report(&report, &out, "report")?;
            print_rows(&report);
            println!("wrote {} and {}", csv.display(), json.display());
            let ok = report.failed_rows().next().is_none();
            Ok(ok)
        }
        Command::BoundCheck { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = bound_check(&cfg)?;
            print_rows(&report);
            if let Some(dir) = out {
                let (csv, _) = emit_report(&report, &dir, "bound_check")?;
                println!("wrote {}", csv.display());
            }
            let violations = report.bound_violations().count();
            println!("bound violations: {violations}");
            let ok = violations == 0 && report.failed_rows().next().is_none();
            Ok(ok)
        }
        Command::Bench {
            mt_list,
            iterations,
            seed,
            dense,
            out,
        } => {
            let rows = run_bench(&mt_list, iterations, seed, dense)?;
            std::fs::create_dir_all(&out).map_err(|e| fp_precoding::PrecodingError::Io {
                path: out.clone(),
                source: e,
            })?;
            let path = out.join("bench.csv");
            write_bench_csv(&rows, &path)?;
            println!("{:>6} {:>14} {:>14} {:>8}", "mt", "fp_ms", "fast_fp_ms", "speedup");
            for r in &rows {
                println!("{:>6} {:>14.3} {:>14.3} {:>8.1}", r.mt, r.fp_median_ms, r.fast_fp_median_ms, r.speedup());
            }
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
