//! Command-line front end of the FH-SC small area estimation pipeline.
//!
//! Commands:
//!
//! * `direct` — microdata → Hájek direct estimates and GVF-smoothed `D`;
//! * `cluster` — direct estimates + external covariates → spectral
//!   clustering and a within-cluster sum-of-squares sweep;
//! * `fit` — direct estimates (+ covariates, clustering, benchmark) → MCMC
//!   draws, per-area estimates and model-selection scores;
//! * `simulate` — Monte Carlo studies of the CPMSE and the estimators.
//!
//! Every command writes its tables plus `metadata.json` into `--out-dir`.
//! Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod metadata;

use config::{Cli, Command, FileConfig};
use error::{invalid, CliResult};
use metadata::Metadata;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SAE_THREADS";

/// Reads `SAE_THREADS` and sizes the global thread pool accordingly.
fn configure_threads() -> CliResult<Option<usize>> {
    let raw = match std::env::var(THREADS_ENV) {
        Ok(v) => v,
        Err(_) => return Ok(None),
    };
    let n = match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => n,
        _ => return invalid(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")),
    };
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::warn!("thread pool already initialised; {THREADS_ENV} ignored");
    }
    Ok(Some(n))
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let threads = configure_threads()?;
    let mut file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let name = cli.command.name();
    macro_rules! dispatch {
        ($args:expr, $section:ident, $run:path) => {{
            let args = $args.resolve(file.$section.take());
            let mut meta = Metadata::new(name, &args, threads);
            if let Some(path) = &cli.config {
                meta.config_file(path)?;
            }
            let out_dir = commands::out_dir_of(&args.out_dir)?;
            $run(&args, &mut meta)?;
            io::write_json(&out_dir.join(commands::METADATA_FILE), &meta)
        }};
    }
    match cli.command {
        Command::Direct(a) => dispatch!(a, direct, commands::run_direct),
        Command::Cluster(a) => dispatch!(a, cluster, commands::run_cluster),
        Command::Fit(a) => dispatch!(a, fit, commands::run_fit),
        Command::Simulate(a) => dispatch!(a, simulate, commands::run_simulate),
    }
}
