//! End-to-end tests of the `fhsc` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fhsc::pipeline::{synthetic_survey, SyntheticSurvey};
use fhsc::survey::hajek_direct;
use fhsc_cli::io::{read_direct, Table, DIRECT_HEADER};
use tempfile::TempDir;

fn fhsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhsc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("SAE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

/// Writes a synthetic survey (microdata, model covariates, clustering
/// covariates) for `areas` areas; the rows are shuffled so that the CLI has
/// to canonicalize the area order itself.
fn write_inputs(dir: &Path, areas: usize, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let data = synthetic_survey(&SyntheticSurvey {
        areas,
        sample_size: (15, 40),
        seed,
    })
    .unwrap();
    let micro = dir.join("micro.csv");
    let mut text = String::from("area_id,y,w\n");
    for r in data.microdata.records.iter().rev() {
        text.push_str(&format!("{},{},{}\n", r.area_id, r.y, r.w));
    }
    fs::write(&micro, text).unwrap();

    let covs = dir.join("covariates.csv");
    let mut text = String::from("area_id,x1\n");
    for (i, id) in data.area_ids.iter().enumerate().rev() {
        text.push_str(&format!("{id},{}\n", data.x[(i, 1)]));
    }
    fs::write(&covs, text).unwrap();

    let census = dir.join("census.csv");
    let mut text = String::from("area_id");
    for k in 0..data.x_star.ncols() {
        text.push_str(&format!(",s{k}"));
    }
    text.push('\n');
    for (i, id) in data.area_ids.iter().enumerate() {
        text.push_str(id);
        for k in 0..data.x_star.ncols() {
            text.push_str(&format!(",{}", data.x_star[(i, k)]));
        }
        text.push('\n');
    }
    fs::write(&census, text).unwrap();
    (micro, covs, census)
}

#[test]
fn direct_writes_the_documented_header_and_round_trips() {
    let tmp = TempDir::new().unwrap();
    let (micro, _, _) = write_inputs(tmp.path(), 12, 1);
    let out = tmp.path().join("direct");
    ok(&fhsc(&["direct", "--input", s(&micro), "--out-dir", s(&out)]));
    let path = out.join("direct_estimates.csv");
    assert_eq!(header(&path), DIRECT_HEADER.join(","));
    assert_eq!(header(&path), "area_id,y,raw_var,n,nhat,D");

    // Re-parse and compare with the in-memory computation.
    let parsed = read_direct(&path).unwrap();
    let micro_data = fhsc_cli::io::read_microdata(&micro).unwrap();
    let direct = hajek_direct(&micro_data).unwrap();
    assert_eq!(parsed.direct, direct);
    let ids = parsed.direct.ids();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert!(parsed.d.iter().all(|d| *d > 0.0));

    // Written again, the parsed table reproduces the file byte for byte.
    let again = tmp.path().join("again.csv");
    fhsc_cli::io::write_direct(&again, &parsed).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "direct");
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(meta["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(meta["threads"], 2);
}

#[test]
fn missing_column_exits_with_validation_code() {
    let tmp = TempDir::new().unwrap();
    let micro = tmp.path().join("micro.csv");
    fs::write(&micro, "area_id,y\na,1\na,0\n").unwrap();
    let out = fhsc(&["direct", "--input", s(&micro), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column 'w'"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    // Missing input file: I/O.
    let out = fhsc(&["direct", "--input", s(&tmp.path().join("nope.csv")), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
    // Non-numeric value: validation.
    let micro = tmp.path().join("micro.csv");
    fs::write(&micro, "area_id,y,w\na,1,abc\n").unwrap();
    let out = fhsc(&["direct", "--input", s(&micro), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    // Invalid MCMC settings are rejected before any input is read.
    let out = fhsc(&[
        "fit", "--direct", "x.csv", "--variant", "fh", "--iters", "10", "--burn-in", "20", "--out-dir", s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    // FH-SC variants need a clustering.
    let (micro, _, _) = write_inputs(tmp.path(), 8, 3);
    ok(&fhsc(&["direct", "--input", s(&micro), "--out-dir", s(tmp.path())]));
    let direct = tmp.path().join("direct_estimates.csv");
    let out = fhsc(&["fit", "--direct", s(&direct), "--variant", "fh-sc1", "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--clustering"));
}

#[test]
fn cluster_writes_one_based_labels_and_sweep() {
    let tmp = TempDir::new().unwrap();
    let (micro, _, census) = write_inputs(tmp.path(), 15, 5);
    let d = tmp.path().join("d");
    ok(&fhsc(&["direct", "--input", s(&micro), "--out-dir", s(&d)]));
    let c = tmp.path().join("c");
    ok(&fhsc(&[
        "cluster",
        "--direct",
        s(&d.join("direct_estimates.csv")),
        "--covariates",
        s(&census),
        "--clusters",
        "3",
        "--seed",
        "7",
        "--out-dir",
        s(&c),
    ]));
    let path = c.join("clustering.csv");
    assert_eq!(header(&path), "area_id,cluster");
    let ids = read_direct(&d.join("direct_estimates.csv")).unwrap().direct.ids();
    let labels = fhsc_cli::io::read_clustering(&path, &ids).unwrap();
    let mut seen: Vec<usize> = labels.clone();
    seen.sort();
    seen.dedup();
    assert_eq!(seen, vec![0, 1, 2]);
    let t = Table::read(&path).unwrap();
    assert_eq!(t.unique_ids().unwrap(), ids);

    let sweep: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("sweep.json")).unwrap()).unwrap();
    let rows = sweep["sweep"].as_array().unwrap();
    // Full covariate set plus each single covariate, for C = 1..=3.
    let p = sweep["columns"].as_array().unwrap().len();
    assert_eq!(rows.len(), 3 * (1 + if p > 1 { p } else { 0 }));
    assert_eq!(sweep["sizes"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>(), 15);

    // Bad mixing weights are a validation error.
    let out = fhsc(&[
        "cluster",
        "--direct",
        s(&d.join("direct_estimates.csv")),
        "--covariates",
        s(&census),
        "--clusters",
        "3",
        "--alpha",
        "0.9,0.9",
        "--out-dir",
        s(&c),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// Runs direct → cluster → fit and returns the fit output directory.
fn fit_run(tmp: &Path, tag: &str, extra: &[&str]) -> PathBuf {
    let (micro, covs, census) = write_inputs(tmp, 18, 11);
    let d = tmp.join(format!("{tag}-d"));
    ok(&fhsc(&["direct", "--input", s(&micro), "--out-dir", s(&d)]));
    let c = tmp.join(format!("{tag}-c"));
    ok(&fhsc(&[
        "cluster",
        "--direct",
        s(&d.join("direct_estimates.csv")),
        "--covariates",
        s(&census),
        "--clusters",
        "3",
        "--out-dir",
        s(&c),
    ]));
    let f = tmp.join(format!("{tag}-f"));
    let direct = d.join("direct_estimates.csv");
    let clustering = c.join("clustering.csv");
    let mut args = vec![
        "fit",
        "--direct",
        s(&direct),
        "--covariates",
        s(&covs),
        "--clustering",
        s(&clustering),
        "--iters",
        "1500",
        "--burn-in",
        "500",
        "--thin",
        "2",
        "--seed",
        "42",
        "--out-dir",
        s(&f),
    ];
    args.extend_from_slice(extra);
    ok(&fhsc(&args));
    f
}

#[test]
fn fit_is_deterministic_for_a_fixed_seed() {
    let tmp = TempDir::new().unwrap();
    let a = fit_run(tmp.path(), "a", &["--variant", "fh-sc1"]);
    let b = fit_run(tmp.path(), "b", &["--variant", "fh-sc1"]);
    for file in ["estimates.csv", "draws.csv", "selection.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let est = Table::read(&a.join("estimates.csv")).unwrap();
    assert_eq!(est.headers, fhsc_cli::commands::ESTIMATES_HEADER);
    assert_eq!(est.rows.len(), 18);
    let draws = Table::read(&a.join("draws.csv")).unwrap();
    // 2 chains × (1500 − 500)/2 retained draws.
    assert_eq!(draws.rows.len(), 1000);
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["variant"], "FH-SC1");
    assert_eq!(sel["selection"].as_array().unwrap().len(), 1);
}

#[test]
fn fh_fixes_rho_at_one_without_clustering() {
    let tmp = TempDir::new().unwrap();
    let (micro, covs, _) = write_inputs(tmp.path(), 10, 13);
    let d = tmp.path().join("d");
    ok(&fhsc(&["direct", "--input", s(&micro), "--out-dir", s(&d)]));
    let f = tmp.path().join("f");
    ok(&fhsc(&[
        "fit",
        "--direct",
        s(&d.join("direct_estimates.csv")),
        "--covariates",
        s(&covs),
        "--variant",
        "fh",
        "--iters",
        "600",
        "--burn-in",
        "200",
        "--out-dir",
        s(&f),
    ]));
    let draws = Table::read(&f.join("draws.csv")).unwrap();
    let rho = draws.column("rho").unwrap();
    assert!((0..draws.rows.len()).all(|r| draws.f64_at(r, rho).unwrap() == 1.0));
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["rho_hat"], 1.0);
    assert!(sel["rho_acceptance"].is_null());
}

#[test]
fn benchmark_target_is_met() {
    let tmp = TempDir::new().unwrap();
    let f = fit_run(tmp.path(), "bm", &["--variant", "fh-sc1", "--target", "0.418"]);
    let est = Table::read(&f.join("estimates.csv")).unwrap();
    let col = est.column("rb_benchmarked").unwrap();
    let m = est.rows.len();
    let mean: f64 = (0..m).map(|r| est.f64_at(r, col).unwrap()).sum::<f64>() / m as f64;
    assert!((mean - 0.418).abs() < 1e-10, "benchmarked mean {mean}");
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.join("selection.json")).unwrap()).unwrap();
    assert!(sel["benchmark_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(sel["selection"].as_array().unwrap().len(), 2);

    // Explicit weights file: two constraints on disjoint halves.
    let ids = Table::read(&f.join("estimates.csv")).unwrap().unique_ids().unwrap();
    let wpath = tmp.path().join("w.csv");
    let mut text = String::from("area_id,first,second\n");
    for (i, id) in ids.iter().enumerate() {
        let (a, b) = if i < m / 2 { (2.0 / m as f64, 0.0) } else { (0.0, 2.0 / m as f64) };
        text.push_str(&format!("{id},{a},{b}\n"));
    }
    fs::write(&wpath, text).unwrap();
    let g = fit_run(tmp.path(), "bw", &["--variant", "fh-sc1", "--benchmark", s(&wpath), "--target", "0.3,0.5"]);
    let est = Table::read(&g.join("estimates.csv")).unwrap();
    let col = est.column("rb_benchmarked").unwrap();
    let half = |range: std::ops::Range<usize>| range.map(|r| est.f64_at(r, col).unwrap()).sum::<f64>() * 2.0 / m as f64;
    assert!((half(0..m / 2) - 0.3).abs() < 1e-10);
    assert!((half(m / 2..m) - 0.5).abs() < 1e-10);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let (micro, _, _) = write_inputs(tmp.path(), 10, 17);
    let cfg = tmp.path().join("run.toml");
    let out = tmp.path().join("o");
    fs::write(
        &cfg,
        format!("[direct]\ninput = \"{}\"\nout_dir = \"{}\"\ngvf = \"constant\"\n", s(&micro), s(&out)),
    )
    .unwrap();
    ok(&fhsc(&["--config", s(&cfg), "direct"]));
    let gvf: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gvf.json")).unwrap()).unwrap();
    assert_eq!(gvf["selected"]["variant"], "Constant");
    ok(&fhsc(&["--config", s(&cfg), "direct", "--gvf", "gvf2"]));
    let gvf: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gvf.json")).unwrap()).unwrap();
    assert_eq!(gvf["selected"]["variant"], "Gvf2");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["gvf"], "gvf2");
    assert!(meta["config_file"]["sha256"].is_string());

    // Unknown keys are rejected.
    fs::write(&cfg, "[direct]\nbogus = 1\n").unwrap();
    assert_eq!(fhsc(&["--config", s(&cfg), "direct"]).status.code(), Some(2));
}

#[test]
fn simulate_smoke_run_writes_reports() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    ok(&fhsc(&[
        "simulate", "--study", "fhsc", "--m", "12", "--rho", "0.2", "--reps", "2", "--iters", "400", "--burn-in",
        "100", "--out-dir", s(&out),
    ]));
    let path = out.join("sim_report.csv");
    assert_eq!(header(&path), fhsc_cli::commands::SIM_REPORT_HEADER.join(","));
    let t = Table::read(&path).unwrap();
    let est = t.column("estimator").unwrap();
    let names: Vec<&str> = (0..t.rows.len()).map(|r| t.str_at(r, est)).collect();
    assert_eq!(names.len(), 4);
    assert!(names.contains(&"FH-SC1") && names.contains(&"FH"));
    let ok_col = t.column("reps_ok").unwrap();
    assert!((0..t.rows.len()).all(|r| t.usize_at(r, ok_col).unwrap() == 2));
    let diffs = Table::read(&out.join("diff_series.csv")).unwrap();
    assert_eq!(diffs.rows.len(), 4 * 12);

    let fh = tmp.path().join("simfh");
    ok(&fhsc(&[
        "simulate", "--study", "fh", "--m", "10", "--reps", "2", "--iters", "400", "--burn-in", "100", "--out-dir",
        s(&fh),
    ]));
    let t = Table::read(&fh.join("sim_report.csv")).unwrap();
    assert_eq!(t.rows.len(), 2);
}
