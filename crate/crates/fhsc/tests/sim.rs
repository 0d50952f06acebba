mod common;

use nalgebra::DVector;

use fhsc::sampler::McmcConfig;
use fhsc::sim::{
    beta1, equally_spaced, evaluate_replicates, fh_design, fhsc_design, generate_fh_dataset, generate_fhsc_dataset,
    run_fh_study, run_fhsc_study, Beta1Rule, FhStudy, FhscStudy, RepOutcome,
};
use fhsc::FhscError;

fn quick_mcmc() -> McmcConfig {
    McmcConfig {
        total_iters: 600,
        burn_in: 200,
        thin: 2,
        chains: 1,
        ..McmcConfig::default()
    }
}

#[test]
fn grid_and_slope_rules() {
    assert_eq!(equally_spaced(0.1, 1.0, 10).len(), 10);
    let g = equally_spaced(0.1, 1.0, 10);
    assert!((g[0] - 0.1).abs() < 1e-15 && (g[9] - 1.0).abs() < 1e-15);
    assert!((g[1] - 0.2).abs() < 1e-15);
    assert_eq!(equally_spaced(0.3, 0.9, 1), vec![0.3]);
    // D̄ = 0.55, σ² = 0.25, cor = 0.2: 12·0.8/0.96 = 10.
    assert!((beta1(Beta1Rule::AsPrinted, 0.55, 0.25, 0.2) - 10f64.sqrt()).abs() < 1e-12);
    assert!((beta1(Beta1Rule::CorrelationCalibrated, 0.55, 0.25, 0.2) - 0.2 * 10f64.sqrt()).abs() < 1e-12);
}

#[test]
fn fh_design_is_fixed_per_seed_and_size() {
    let s = FhStudy::new(50, 10, 0.2, 1, quick_mcmc());
    let a = fh_design(&s);
    assert_eq!(a, fh_design(&s));
    assert!(a.x.iter().all(|v| (0.0..1.0).contains(v)));
    assert_eq!(a.d, equally_spaced(0.1, 1.0, 50));
    let other = fh_design(&FhStudy::new(50, 10, 0.2, 2, quick_mcmc()));
    assert_ne!(a.x, other.x);
    // Replicates differ from each other but are reproducible.
    assert_eq!(generate_fh_dataset(&s, &a, 3), generate_fh_dataset(&s, &a, 3));
    assert_ne!(generate_fh_dataset(&s, &a, 3).y, generate_fh_dataset(&s, &a, 4).y);
}

#[test]
fn noiseless_fh_dataset_is_the_regression_line() {
    let mut s = FhStudy::new(20, 1, 0.2, 5, quick_mcmc());
    s.sigma2 = 0.0;
    s.d_range = (0.0, 0.0);
    let design = fh_design(&s);
    let ds = generate_fh_dataset(&s, &design, 0);
    for i in 0..20 {
        let line = s.beta0 + design.beta1 * design.x[i];
        assert!((ds.truth[i] - line).abs() < 1e-15);
        assert_eq!(ds.y[i], ds.truth[i]);
        assert_eq!(ds.x[(i, 0)], 1.0);
        assert_eq!(ds.x[(i, 1)], design.x[i]);
    }
}

#[test]
fn fh_dataset_moments() {
    let s = FhStudy::new(200, 1, 0.2, 6, quick_mcmc());
    let design = fh_design(&s);
    let (mut su, mut su2, mut se2, mut n) = (0.0, 0.0, 0.0, 0.0);
    for rep in 0..50 {
        let ds = generate_fh_dataset(&s, &design, rep);
        for i in 0..200 {
            let u = ds.truth[i] - s.beta0 - design.beta1 * design.x[i];
            let e = ds.y[i] - ds.truth[i];
            su += u;
            su2 += u * u;
            se2 += e * e / design.d[i];
            n += 1.0;
        }
    }
    assert!((su / n).abs() < 0.02);
    assert!((su2 / n - 0.25).abs() < 0.015);
    assert!((se2 / n - 1.0).abs() < 0.05);
}

#[test]
fn fhsc_truth_is_smoothed_regression() {
    let mut s = FhscStudy::new(9, 1, 0.2, 7, quick_mcmc());
    s.d_range = (0.0, 0.0);
    let design = fhsc_design(&s).unwrap();
    assert_eq!(design.partition.assignment(), &[0, 1, 2, 0, 1, 2, 0, 1, 2]);
    assert!(design.weights.iter().all(|w| (w - 1.0 / 9.0).abs() < 1e-15));
    assert!(design.x.iter().all(|v| (0.0..40.0).contains(v)));
    s.sigma2_u = 0.0;
    let ds = generate_fhsc_dataset(&s, &design, 0).unwrap();
    let xd = DVector::from_iterator(9, design.x.iter().map(|x| 0.5 - 0.01 * x));
    let oracle = common::dense_a_inv(0.2, design.partition.assignment()) * xd;
    assert!((&ds.truth - &oracle).amax() < 1e-14);
    assert_eq!(ds.y, ds.truth);
}

#[test]
fn fhsc_truth_covariance_is_smoothed() {
    let s = FhscStudy::new(6, 1, 0.3, 8, quick_mcmc());
    let design = fhsc_design(&s).unwrap();
    let ainv = common::dense_a_inv(0.3, design.partition.assignment());
    let cov = &ainv * &ainv * 7.0;
    let xd = DVector::from_iterator(6, design.x.iter().map(|x| 0.5 - 0.01 * x));
    let mean = &ainv * xd;
    let reps = 4000;
    let mut s2 = DVector::zeros(6);
    let mut cross = 0.0;
    for rep in 0..reps {
        let ds = generate_fhsc_dataset(&s, &design, rep).unwrap();
        let r = &ds.truth - &mean;
        s2 += r.map(|v| v * v);
        cross += r[0] * r[3];
    }
    for i in 0..6 {
        assert!((s2[i] / reps as f64 / cov[(i, i)] - 1.0).abs() < 0.08);
    }
    // Areas 0 and 3 share a cluster, so their truths are correlated.
    assert!((cross / reps as f64 - cov[(0, 3)]).abs() < 0.08 * cov[(0, 0)]);
}

#[test]
fn fhsc_at_rho_one_is_unsmoothed() {
    let mut s = FhscStudy::new(9, 1, 1.0, 9, quick_mcmc());
    s.d_range = (0.0, 0.0);
    let design = fhsc_design(&s).unwrap();
    s.sigma2_u = 0.0;
    let ds = generate_fhsc_dataset(&s, &design, 0).unwrap();
    for i in 0..9 {
        assert!((ds.truth[i] - (0.5 - 0.01 * design.x[i])).abs() < 1e-15);
    }
}

#[test]
fn replicate_evaluation_oracles() {
    let truth = vec![1.0, 2.0];
    let perfect: Vec<_> = (0..3)
        .map(|_| Ok(RepOutcome { estimate: truth.clone(), cpmse: vec![0.0, 0.0], truth: truth.clone() }))
        .collect();
    let r = evaluate_replicates("x", &perfect).unwrap();
    assert_eq!((r.mse_avg, r.cpmse_avg, r.abs_diff_avg, r.aad, r.asd), (0.0, 0.0, 0.0, 0.0, 0.0));

    // Two replicates, two areas, by hand.
    let outs = vec![
        Ok(RepOutcome { estimate: vec![1.5, 2.0], cpmse: vec![0.2, 0.1], truth: truth.clone() }),
        Ok(RepOutcome { estimate: vec![0.5, 3.0], cpmse: vec![0.4, 0.3], truth: truth.clone() }),
        Err(FhscError::Numerical("diverged".into())),
    ];
    let r = evaluate_replicates("y", &outs).unwrap();
    // MSE per area: (0.25 + 0.25)/2 = 0.25 and (0 + 1)/2 = 0.5.
    assert!((r.mse_avg - 0.375).abs() < 1e-15);
    // CPMSE per area: 0.3 and 0.2.
    assert!((r.cpmse_avg - 0.25).abs() < 1e-15);
    assert!((r.abs_diff_avg - 0.125).abs() < 1e-15);
    assert!((r.diff_series[0] - 0.05).abs() < 1e-15 && (r.diff_series[1] + 0.3).abs() < 1e-15);
    assert!((r.aad - 2.0 / 4.0).abs() < 1e-15);
    assert!((r.asd - 1.5 / 4.0).abs() < 1e-15);
    assert_eq!((r.reps_ok, r.reps_failed), (2, 1));

    let all_failed: Vec<_> = (0..2).map(|_| Err(FhscError::Numerical("x".into()))).collect();
    assert!(evaluate_replicates("z", &all_failed).is_err());
}

#[test]
fn small_studies_run_and_are_reproducible() {
    let fh = FhStudy::new(12, 3, 0.2, 11, quick_mcmc());
    let a = run_fh_study(&fh).unwrap();
    assert_eq!(a, run_fh_study(&fh).unwrap());
    assert!(a.report("FH").is_some() && a.report("FH-B").is_some());
    assert_eq!(a.report("FH").unwrap().reps_ok, 3);
    assert!(a.cpmse_structure_violation <= 1e-12);

    let sc = FhscStudy::new(12, 2, 0.1, 12, quick_mcmc());
    let b = run_fhsc_study(&sc).unwrap();
    assert_eq!(b, run_fhsc_study(&sc).unwrap());
    for label in ["FH-SC1", "FH-SC1-B", "FH", "FH-B"] {
        assert!(b.report(label).is_some(), "{label}");
    }
    assert!(b.mean_rho_acceptance.is_some());
    assert!(b.cpmse_structure_violation <= 1e-12);

    assert!(run_fh_study(&FhStudy::new(2, 1, 0.2, 1, quick_mcmc())).is_err());
    assert!(run_fhsc_study(&FhscStudy::new(12, 1, 0.0, 1, quick_mcmc())).is_err());
}
