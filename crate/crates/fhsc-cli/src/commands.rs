//! The four pipeline commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fhsc::cluster::{cluster_areas, sweep_clusters, ClusterSettings, ExternalCovariates};
use fhsc::diagnostics::max_rhat;
use fhsc::estimators::{estimate_table, BenchmarkConstraint};
use fhsc::model_core::{ModelVariant, Partition, RhoMode};
use fhsc::sampler::{run_chains, DrawStore, McmcConfig, ModelData, Priors, RNG_ALGORITHM};
use fhsc::selection::{selection_report, SelectionRow};
use fhsc::sim::{run_fh_study, run_fhsc_study, FhStudy, FhscStudy, StudyResult};
use fhsc::survey::{fit_best_gvf, fit_gvf_floored, hajek_direct, smooth_variances, GvfModel};
use fhsc::derive_seed;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{ClusterArgs, DirectArgs, FitArgs, SimulateArgs, StudyChoice};
use crate::error::{invalid, CliError, CliResult};
use crate::io::{
    ensure_dir, fmt_f64, fmt_opt, read_clustering, read_direct, read_microdata, write_clustering, write_csv,
    write_direct, write_json, AreaColumns, DirectTable,
};
use crate::metadata::Metadata;

/// Output file names.
pub const DIRECT_FILE: &str = "direct_estimates.csv";
pub const GVF_FILE: &str = "gvf.json";
pub const CLUSTERING_FILE: &str = "clustering.csv";
pub const SWEEP_FILE: &str = "sweep.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const SELECTION_FILE: &str = "selection.json";
pub const SIM_REPORT_FILE: &str = "sim_report.csv";
pub const DIFF_SERIES_FILE: &str = "diff_series.csv";
pub const SIM_SUMMARY_FILE: &str = "sim_summary.json";
pub const METADATA_FILE: &str = "metadata.json";

/// Header of the per-area estimates table.
pub const ESTIMATES_HEADER: [&str; 16] = [
    "area_id",
    "cluster",
    "y",
    "D",
    "ergodic_mean",
    "ergodic_benchmarked",
    "rb_estimate",
    "rb_benchmarked",
    "cpmse",
    "cpmse_benchmarked",
    "pmse_benchmarked",
    "cv",
    "cv_benchmarked",
    "ci_lower",
    "ci_upper",
    "standardized_residual",
];

/// Header of the simulation report.
pub const SIM_REPORT_HEADER: [&str; 10] = [
    "study",
    "scenario",
    "estimator",
    "reps_ok",
    "reps_failed",
    "mse_avg",
    "cpmse_avg",
    "abs_diff_avg",
    "aad",
    "asd",
];

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Validation(format!("missing required option --{flag}")))
}

fn pair(values: &[f64], flag: &str) -> CliResult<(f64, f64)> {
    match values {
        [a, b] => Ok((*a, *b)),
        _ => invalid(format!("--{flag} takes exactly two values, got {}", values.len())),
    }
}

fn mcmc_config(fast: bool, chains: usize, iters: usize, burn_in: usize, thin: usize, seed: u64) -> CliResult<McmcConfig> {
    let mut cfg = if fast { McmcConfig::fast() } else { McmcConfig::default() };
    cfg.chains = chains;
    cfg.total_iters = iters;
    cfg.burn_in = burn_in;
    cfg.thin = thin;
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------- direct --

#[derive(Serialize)]
struct GvfReport<'a> {
    selected: &'a GvfModel,
    candidates: &'a [GvfModel],
}

pub fn run_direct(args: &DirectArgs, meta: &mut Metadata) -> CliResult<()> {
    let input = required(&args.input, "input")?;
    let out_dir = required(&args.out_dir, "out-dir")?;
    let floor = args.zero_floor.unwrap_or(fhsc::survey::DEFAULT_ZERO_FLOOR);
    if !(floor > 0.0) {
        return invalid("--zero-floor must be positive");
    }
    let micro = read_microdata(input)?;
    meta.input("microdata", input)?;
    let direct = hajek_direct(&micro)?;
    let (gvf, candidates) = match args.gvf.and_then(|g| g.variant()) {
        None => fit_best_gvf(&direct, Some(floor))?,
        Some(v) => {
            let fit = fit_gvf_floored(&direct, v, floor)?;
            (fit.clone(), vec![fit])
        }
    };
    let d = smooth_variances(&gvf, &direct)?;
    log::info!("{} areas, GVF {:?} (residual MSE {:.4e})", direct.len(), gvf.variant, gvf.residual_mse);
    ensure_dir(out_dir)?;
    write_direct(&out_dir.join(DIRECT_FILE), &DirectTable { direct, d }.sorted())?;
    write_json(
        &out_dir.join(GVF_FILE),
        &GvfReport {
            selected: &gvf,
            candidates: &candidates,
        },
    )?;
    meta.outputs([DIRECT_FILE, GVF_FILE]);
    Ok(())
}

// --------------------------------------------------------------- cluster --

#[derive(Serialize)]
struct SweepEntry {
    columns: Vec<String>,
    clusters: usize,
    total_wss: f64,
}

#[derive(Serialize)]
struct SweepReport {
    columns: Vec<String>,
    clusters: usize,
    sizes: Vec<usize>,
    total_wss: f64,
    sweep: Vec<SweepEntry>,
}

pub fn run_cluster(args: &ClusterArgs, meta: &mut Metadata) -> CliResult<()> {
    let direct_path = required(&args.direct, "direct")?;
    let cov_path = required(&args.covariates, "covariates")?;
    let out_dir = required(&args.out_dir, "out-dir")?;
    let clusters = *required(&args.clusters, "clusters")?;
    let seed = args.seed.unwrap_or(crate::config::DEFAULT_SEED);
    let sigma2_s = args.sigma2_s.unwrap_or(1.0);
    if clusters == 0 {
        return invalid("--clusters must be at least 1");
    }
    if args.k_neighbors == Some(0) {
        return invalid("--k-neighbors must be at least 1");
    }

    let direct = read_direct(direct_path)?;
    meta.input("direct", direct_path)?;
    let covs = AreaColumns::read(cov_path, args.columns.as_deref())?;
    meta.input("covariates", cov_path)?;
    let ids = direct.direct.ids();
    let y = direct.direct.y();
    let x_star = covs.aligned(&ids)?;
    let mut cov = ExternalCovariates::uniform(x_star.clone());
    cov.sigma2_s = sigma2_s;
    if let Some(alpha) = &args.alpha {
        cov.alpha = alpha.clone();
    }
    cov.validate()?;
    let sweep_max = args.sweep_max_clusters.unwrap_or(clusters);
    if sweep_max == 0 || sweep_max > ids.len() {
        return invalid(format!("--sweep-max-clusters must be in 1..={}", ids.len()));
    }

    meta.seed("kmeans", seed);
    let clustering = cluster_areas(
        &y,
        &cov,
        &ClusterSettings {
            clusters,
            k_neighbors: args.k_neighbors,
            seed,
        },
    )?;
    let p = covs.names.len();
    let mut subsets = vec![(0..p).collect::<Vec<_>>()];
    if p > 1 {
        subsets.extend((0..p).map(|k| vec![k]));
    }
    let c_grid: Vec<usize> = (1..=sweep_max).collect();
    let rows = sweep_clusters(&y, &x_star, sigma2_s, &c_grid, &subsets, args.k_neighbors, seed)?;
    let report = SweepReport {
        columns: covs.names.clone(),
        clusters,
        sizes: clustering.sizes.clone(),
        total_wss: clustering.total_wss,
        sweep: rows
            .into_iter()
            .map(|r| SweepEntry {
                columns: r.subset.iter().map(|&k| covs.names[k].clone()).collect(),
                clusters: r.clusters,
                total_wss: r.total_wss,
            })
            .collect(),
    };
    log::info!("{} areas in {clusters} clusters, sizes {:?}", ids.len(), clustering.sizes);
    ensure_dir(out_dir)?;
    write_clustering(&out_dir.join(CLUSTERING_FILE), &ids, &clustering.assignment)?;
    write_json(&out_dir.join(SWEEP_FILE), &report)?;
    meta.outputs([CLUSTERING_FILE, SWEEP_FILE]);
    Ok(())
}

// ------------------------------------------------------------------- fit --

#[derive(Serialize)]
struct FitReport {
    variant: String,
    rho_hat: f64,
    rho_acceptance: Option<f64>,
    max_split_rhat: f64,
    draws_per_chain: usize,
    benchmarked: bool,
    benchmark_targets: Vec<f64>,
    benchmark_residual: f64,
    selection: Vec<SelectionRow>,
}

/// Benchmark constraint from the fit flags, if any.
fn fit_constraint(args: &FitArgs, ids: &[String], meta: &mut Metadata) -> CliResult<Option<BenchmarkConstraint>> {
    let m = ids.len();
    match (&args.benchmark, &args.target) {
        (None, None) => Ok(None),
        (Some(_), None) => invalid("--benchmark requires --target"),
        (None, Some(t)) => match t.as_slice() {
            [p] => Ok(Some(BenchmarkConstraint::scalar(&vec![1.0 / m as f64; m], *p)?)),
            _ => invalid("without --benchmark, --target takes a single value (equal-weight mean)"),
        },
        (Some(path), Some(t)) => {
            let w = AreaColumns::read(path, None)?;
            meta.input("benchmark", path)?;
            if w.names.len() != t.len() {
                return invalid(format!(
                    "{} weight columns but {} targets",
                    w.names.len(),
                    t.len()
                ));
            }
            let wm = w.aligned(ids)?.transpose();
            Ok(Some(BenchmarkConstraint::new(wm, DVector::from_column_slice(t))?))
        }
    }
}

pub fn run_fit(args: &FitArgs, meta: &mut Metadata) -> CliResult<()> {
    let direct_path = required(&args.direct, "direct")?;
    let out_dir = required(&args.out_dir, "out-dir")?;
    let name = required(&args.variant, "variant")?.name();
    let rho_prior = pair(required(&args.rho_prior, "rho-prior")?, "rho-prior")?;
    let precision_prior = pair(required(&args.precision_prior, "precision-prior")?, "precision-prior")?;
    let priors = Priors {
        rho_beta: rho_prior,
        precision_gamma: precision_prior,
    };
    priors.validate()?;
    let seed = *required(&args.seed, "seed")?;
    let mcmc = mcmc_config(
        args.fast,
        *required(&args.chains, "chains")?,
        *required(&args.iters, "iters")?,
        *required(&args.burn_in, "burn-in")?,
        *required(&args.thin, "thin")?,
        derive_seed(seed, &[1]),
    )?;
    let variant = ModelVariant::new(name, args.gamma_hat)?;
    let ci_level = *required(&args.ci_level, "ci-level")?;
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return invalid("--ci-level must lie in (0, 1)");
    }
    let rho_point = (*required(&args.rho_point, "rho-point")?).into();

    let direct = read_direct(direct_path)?;
    meta.input("direct", direct_path)?;
    let ids = direct.direct.ids();
    let m = ids.len();
    let x = match &args.covariates {
        Some(path) => {
            let covs = AreaColumns::read(path, args.x_columns.as_deref())?;
            meta.input("covariates", path)?;
            let c = covs.aligned(&ids)?;
            DMatrix::from_fn(m, c.ncols() + 1, |i, k| if k == 0 { 1.0 } else { c[(i, k - 1)] })
        }
        None if args.x_columns.is_some() => return invalid("--x-columns requires --covariates"),
        None => DMatrix::from_element(m, 1, 1.0),
    };
    let partition = match &args.clustering {
        Some(path) => {
            let labels = read_clustering(path, &ids)?;
            meta.input("clustering", path)?;
            Partition::from_assignment(&labels)?
        }
        None if variant.rho_mode == RhoMode::Fixed1 && name == fhsc::model_core::VariantName::Fh => {
            Partition::single(m)
        }
        None => return invalid(format!("variant {name} requires --clustering")),
    };
    let constraint = fit_constraint(args, &ids, meta)?;
    let data = ModelData::new(
        DVector::from_vec(direct.direct.y()),
        DVector::from_vec(direct.d.clone()),
        x,
        partition,
    )?;

    meta.seed("mcmc", mcmc.seed);
    let selection_seed = derive_seed(seed, &[2]);
    meta.seed("predictive", selection_seed);
    let store = run_chains(&data, variant, priors, &mcmc)?;
    let table = estimate_table(&store, &data, constraint.as_ref(), rho_point, ci_level)?;
    let selection = selection_report(&store, &data, constraint.as_ref(), selection_seed)?;
    let report = FitReport {
        variant: name.to_string(),
        rho_hat: table.rho_hat,
        rho_acceptance: store.acceptance_rate(),
        max_split_rhat: max_rhat(&store, false),
        draws_per_chain: mcmc.draws_per_chain(),
        benchmarked: table.benchmarked,
        benchmark_targets: constraint.as_ref().map(|c| c.p.iter().cloned().collect()).unwrap_or_default(),
        benchmark_residual: table.benchmark_residual,
        selection,
    };
    log::info!(
        "{name}: rho_hat {:.4}, acceptance {:?}, max split-Rhat {:.4}",
        report.rho_hat,
        report.rho_acceptance,
        report.max_split_rhat
    );

    ensure_dir(out_dir)?;
    write_draws(&out_dir.join(DRAWS_FILE), &store, &ids)?;
    let t = &table;
    let rows = (0..m).map(|j| {
        vec![
            ids[j].clone(),
            (data.partition.cluster_of(j) + 1).to_string(),
            fmt_f64(data.y[j]),
            fmt_f64(data.d[j]),
            fmt_f64(t.ergodic_mean[j]),
            fmt_f64(t.ergodic_benchmarked[j]),
            fmt_f64(t.rb_estimate[j]),
            fmt_f64(t.rb_benchmarked[j]),
            fmt_f64(t.cpmse[j]),
            fmt_f64(t.cpmse_benchmarked[j]),
            fmt_f64(t.pmse_benchmarked[j]),
            fmt_opt(t.cv[j]),
            fmt_opt(t.cv_benchmarked[j]),
            fmt_f64(t.ci_lower[j]),
            fmt_f64(t.ci_upper[j]),
            fmt_f64(t.standardized_residual[j]),
        ]
    });
    write_csv(&out_dir.join(ESTIMATES_FILE), &ESTIMATES_HEADER, rows)?;
    write_json(&out_dir.join(SELECTION_FILE), &report)?;
    meta.outputs([DRAWS_FILE, ESTIMATES_FILE, SELECTION_FILE]);
    Ok(())
}

/// Writes every retained draw: chain, draw index, `ρ`, variance components,
/// regression coefficients and the smoothed area parameters.
fn write_draws(path: &Path, store: &DrawStore, ids: &[String]) -> CliResult<()> {
    let first = store.iter().next();
    let (n_sigma, n_delta) = first.map(|d| (d.sigma2.len(), d.delta.len())).unwrap_or((0, 0));
    let mut header: Vec<String> = vec!["chain".into(), "draw".into(), "rho".into()];
    header.extend((1..=n_sigma).map(|k| format!("sigma2_{k}")));
    header.extend((1..=n_delta).map(|k| format!("delta_{k}")));
    header.extend(ids.iter().map(|id| format!("theta_{id}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut counters: BTreeMap<usize, usize> = BTreeMap::new();
    let rows = store.iter().map(|d| {
        let k = counters.entry(d.chain).or_insert(0);
        *k += 1;
        let mut row = vec![(d.chain + 1).to_string(), k.to_string(), fmt_f64(d.rho)];
        row.extend(d.sigma2.iter().map(|v| fmt_f64(*v)));
        row.extend(d.delta.iter().map(|v| fmt_f64(*v)));
        row.extend(d.theta_fhsc.iter().map(|v| fmt_f64(*v)));
        row
    });
    write_csv(path, &header_ref, rows)
}

// -------------------------------------------------------------- simulate --

#[derive(Serialize)]
struct ScenarioSummary {
    scenario: String,
    cpmse_structure_violation: f64,
    mean_rho_acceptance: Option<f64>,
}

pub fn run_simulate(args: &SimulateArgs, meta: &mut Metadata) -> CliResult<()> {
    let out_dir = required(&args.out_dir, "out-dir")?;
    let study = *required(&args.study, "study")?;
    let ms = required(&args.m, "m")?;
    let reps = *required(&args.reps, "reps")?;
    let seed = *required(&args.seed, "seed")?;
    let mcmc = mcmc_config(
        args.fast,
        *required(&args.chains, "chains")?,
        *required(&args.iters, "iters")?,
        *required(&args.burn_in, "burn-in")?,
        *required(&args.thin, "thin")?,
        seed,
    )?;
    if ms.is_empty() || reps == 0 {
        return invalid("--m must be nonempty and --reps at least 1");
    }
    meta.seed("study", seed);

    let mut results: Vec<StudyResult> = Vec::new();
    match study {
        StudyChoice::Fh => {
            let cors = required(&args.cor, "cor")?;
            let rule = (*required(&args.beta1_rule, "beta1-rule")?).into();
            for &m in ms {
                for &cor in cors {
                    let mut s = FhStudy::new(m, reps, cor, seed, mcmc);
                    s.beta1_rule = rule;
                    log::info!("FH study m={m} cor={cor}: {reps} replicates");
                    results.push(run_fh_study(&s)?);
                }
            }
        }
        StudyChoice::Fhsc => {
            let rhos = required(&args.rho, "rho")?;
            for &m in ms {
                for &rho in rhos {
                    log::info!("FH-SC study m={m} rho={rho}: {reps} replicates");
                    results.push(run_fhsc_study(&FhscStudy::new(m, reps, rho, seed, mcmc))?);
                }
            }
        }
    }

    let study_name = match study {
        StudyChoice::Fh => "fh",
        StudyChoice::Fhsc => "fhsc",
    };
    ensure_dir(out_dir)?;
    let report_rows = results.iter().flat_map(|res| {
        res.reports.iter().map(move |r| {
            vec![
                study_name.to_string(),
                res.scenario.clone(),
                r.estimator.clone(),
                r.reps_ok.to_string(),
                r.reps_failed.to_string(),
                fmt_f64(r.mse_avg),
                fmt_f64(r.cpmse_avg),
                fmt_f64(r.abs_diff_avg),
                fmt_f64(r.aad),
                fmt_f64(r.asd),
            ]
        })
    });
    write_csv(&out_dir.join(SIM_REPORT_FILE), &SIM_REPORT_HEADER, report_rows)?;
    let diff_rows = results.iter().flat_map(|res| {
        res.reports.iter().flat_map(move |r| {
            r.diff_series
                .iter()
                .enumerate()
                .map(move |(i, d)| vec![res.scenario.clone(), r.estimator.clone(), (i + 1).to_string(), fmt_f64(*d)])
        })
    });
    write_csv(&out_dir.join(DIFF_SERIES_FILE), &["scenario", "estimator", "area", "diff"], diff_rows)?;
    let summary: Vec<ScenarioSummary> = results
        .iter()
        .map(|r| ScenarioSummary {
            scenario: r.scenario.clone(),
            cpmse_structure_violation: r.cpmse_structure_violation,
            mean_rho_acceptance: r.mean_rho_acceptance,
        })
        .collect();
    write_json(&out_dir.join(SIM_SUMMARY_FILE), &summary)?;
    meta.outputs([SIM_REPORT_FILE, DIFF_SERIES_FILE, SIM_SUMMARY_FILE]);
    Ok(())
}

/// Output directory of a resolved command, used for the metadata file.
pub fn out_dir_of(path: &Option<PathBuf>) -> CliResult<PathBuf> {
    required(path, "out-dir").cloned()
}

/// Recorded with every run so readers know how seeds map onto streams.
pub fn rng_algorithm() -> &'static str {
    RNG_ALGORITHM
}
