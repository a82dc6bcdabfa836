use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use linfvar::experiment::sweep::run_sweep;
use linfvar::experiment::verify::{format_table, run_verify};
use linfvar::experiment::{run_twin, write_twin, ExperimentConfig};
use linfvar::Error;

/// L^p continuation toward L^infinity variational data assimilation.
///
/// Thread count: LINFVAR_THREADS (defaults to all cores). Log level: RUST_LOG.
#[derive(Parser)]
#[command(name = "linfvar", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Twin experiment: truth, synthetic data, continuation, diagnostics.
    Twin {
        #[arg(long)]
        config: PathBuf,
        /// Overrides output.directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Property suites: norms, gradients, mms, counter-example, checksum.
    Verify {
        /// Validated when given; the suites themselves are fixed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated suite names.
        #[arg(long)]
        suite: Option<String>,
        /// Directory whose field files the checksum suite checks.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One twin run per value of a parameter, plus a combined table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `block.key`, or a key that is unique across blocks.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
}

fn threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("LINFVAR_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("LINFVAR_THREADS must be a positive integer (got {v:?})")))?;
        if n == 0 {
            return Err(Error::Config("LINFVAR_THREADS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    threads()?;
    match cli.cmd {
        Cmd::Twin { config, out, no_plots } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.directory.clone());
            let run = run_twin(&cfg)?;
            write_twin(&run, &dir, cfg.output.plots && !no_plots)?;
            println!("{:>6} {:>6} {:>14} {:>14} {:>10} {:>6}", "p", "iters", "E_p", "E_inf", "|g|", "conv");
            for s in &run.stages {
                println!(
                    "{:>6} {:>6} {:>14.8e} {:>14.8e} {:>10.2e} {:>6}",
                    s.p, s.result.iterations, s.result.report.e_p, s.e_inf.e_p, s.result.grad_norm, s.result.converged
                );
            }
            println!("wrote {}", dir.display());
            Ok(true)
        }
        Cmd::Verify { config, suite, out } => {
            if let Some(c) = config {
                ExperimentConfig::load(&c)?;
            }
            let reports = run_verify(suite.as_deref(), out.as_deref())?;
            print!("{}", format_table(&reports));
            Ok(reports.iter().all(|r| r.passed()))
        }
        Cmd::Sweep { config, param, values, out, no_plots } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.directory.join(format!("sweep_{param}")));
            let runs = run_sweep(&cfg, &param, &values, &dir, cfg.output.plots && !no_plots)?;
            for (v, r) in &runs {
                let last = r.stages.last().expect("nonempty schedule");
                println!("{param} = {v}: E_p({}) = {:.8e}", last.p, last.result.report.e_p);
            }
            println!("wrote {}", dir.join("sweep.csv").display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(2)
        }
    }
}
