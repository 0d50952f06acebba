mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use fhsc::survey::{
    fit_best_gvf, fit_gvf, fit_gvf_floored, hajek_direct, smooth_variances, DirectArea, DirectEstimates, GvfVariant,
    Microdata, Record,
};

fn rec(id: &str, y: f64, w: f64) -> Record {
    Record {
        area_id: id.to_string(),
        y,
        w,
    }
}

/// Loop oracle of the Hájek estimator and its variance.
fn hajek_oracle(ys: &[f64], ws: &[f64]) -> (f64, f64, f64) {
    let mut nhat = 0.0;
    let mut num = 0.0;
    for i in 0..ys.len() {
        nhat += ws[i];
        num += ws[i] * ys[i];
    }
    let y = num / nhat;
    let mut v = 0.0;
    for i in 0..ys.len() {
        v += ws[i] * (ws[i] - 1.0) * (ys[i] - y) * (ys[i] - y);
    }
    (y, v / (nhat * nhat), nhat)
}

#[test]
fn constant_outcome_has_zero_variance() {
    let micro = Microdata {
        records: vec![rec("a", 1.0, 3.0), rec("a", 1.0, 7.5), rec("a", 1.0, 1.2)],
    };
    let d = hajek_direct(&micro).unwrap();
    assert_eq!(d.areas[0].y, 1.0);
    assert_eq!(d.areas[0].raw_var, 0.0);
}

#[test]
fn single_unit_with_unit_weight() {
    let micro = Microdata {
        records: vec![rec("a", 0.0, 1.0)],
    };
    let d = hajek_direct(&micro).unwrap();
    assert_eq!((d.areas[0].y, d.areas[0].raw_var, d.areas[0].n), (0.0, 0.0, 1));
}

#[test]
fn three_households_match_loop_oracle() {
    let micro = Microdata {
        records: vec![rec("a", 1.0, 2.0), rec("a", 0.0, 2.0), rec("a", 1.0, 2.0)],
    };
    let d = hajek_direct(&micro).unwrap();
    let (y, v, nhat) = hajek_oracle(&[1.0, 0.0, 1.0], &[2.0, 2.0, 2.0]);
    assert_relative_eq!(d.areas[0].y, 2.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(d.areas[0].y, y, epsilon = 1e-15);
    assert_relative_eq!(d.areas[0].raw_var, v, epsilon = 1e-15);
    assert_relative_eq!(d.areas[0].nhat, nhat, epsilon = 1e-15);
}

#[test]
fn areas_are_sorted_by_id() {
    let micro = Microdata {
        records: vec![rec("b", 1.0, 2.0), rec("a", 0.0, 2.0), rec("c", 1.0, 2.0), rec("a", 1.0, 3.0)],
    };
    let d = hajek_direct(&micro).unwrap();
    assert_eq!(d.ids(), vec!["a", "b", "c"]);
    assert_eq!(d.areas[0].n, 2);
}

#[test]
fn invalid_microdata_is_rejected() {
    for bad in [rec("a", 1.0, 0.0), rec("a", 1.0, -2.0), rec("a", 0.5, 1.0), rec("", 1.0, 1.0)] {
        let micro = Microdata {
            records: vec![rec("a", 1.0, 2.0), bad],
        };
        assert!(hajek_direct(&micro).is_err());
    }
    assert!(hajek_direct(&Microdata { records: vec![] }).is_err());
}

fn direct_from(ys: &[f64], ns: &[usize], vars: &[f64]) -> DirectEstimates {
    DirectEstimates {
        areas: (0..ys.len())
            .map(|i| DirectArea {
                area_id: format!("A{i:03}"),
                y: ys[i],
                raw_var: vars[i],
                n: ns[i],
                nhat: ns[i] as f64,
            })
            .collect(),
    }
}

#[test]
fn noiseless_gvf_is_recovered() {
    let mut rng = common::rng(21);
    let m = 40;
    let ys: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    let ns: Vec<usize> = (0..m).map(|_| rng.random_range(2..200)).collect();
    let vars: Vec<f64> = (0..m)
        .map(|i| (1.0 - 0.5 * ys[i] + 0.1 * (ns[i] as f64).sqrt()).exp())
        .collect();
    let direct = direct_from(&ys, &ns, &vars);
    let fit = fit_gvf(&direct, GvfVariant::Gvf2).unwrap();
    for (c, e) in fit.coefficients.iter().zip([1.0, -0.5, 0.1]) {
        assert!((c - e).abs() < 1e-10);
    }
    assert!(fit.residual_mse < 1e-20);
    let d = smooth_variances(&fit, &direct).unwrap();
    for i in 0..m {
        assert!((d[i] - vars[i]).abs() < 1e-10 * vars[i].max(1.0));
    }
}

#[test]
fn gvf_matches_normal_equations() {
    let mut rng = common::rng(22);
    let m = 30;
    let ys: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    let ns: Vec<usize> = (0..m).map(|_| rng.random_range(2..100)).collect();
    let vars: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..0.1)).collect();
    let direct = direct_from(&ys, &ns, &vars);
    for variant in [GvfVariant::Gvf1, GvfVariant::Gvf2] {
        let fit = fit_gvf(&direct, variant).unwrap();
        let x = DMatrix::from_fn(m, variant.n_coef(), |i, k| variant.covariates(ys[i], ns[i])[k]);
        let lv = DVector::from_iterator(m, vars.iter().map(|v| v.ln()));
        let xtx = x.transpose() * &x;
        let beta = xtx.lu().solve(&(x.transpose() * &lv)).unwrap();
        for k in 0..variant.n_coef() {
            assert!((fit.coefficients[k] - beta[k]).abs() < 1e-8);
        }
        let resid = &lv - &x * &beta;
        assert_relative_eq!(fit.residual_mse, resid.norm_squared() / m as f64, epsilon = 1e-10);
    }
}

#[test]
fn constant_gvf_gives_geometric_mean() {
    let vars = [0.01, 0.04, 0.02, 0.08, 0.05];
    let direct = direct_from(&[0.1, 0.2, 0.3, 0.4, 0.5], &[5, 6, 7, 8, 9], &vars);
    let fit = fit_gvf(&direct, GvfVariant::Constant).unwrap();
    let gm = (vars.iter().map(|v: &f64| v.ln()).sum::<f64>() / 5.0).exp();
    for d in smooth_variances(&fit, &direct).unwrap() {
        assert_relative_eq!(d, gm, epsilon = 1e-12);
    }
}

#[test]
fn zero_variance_is_rejected_or_floored() {
    let direct = direct_from(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[5, 6, 7, 8, 9, 10], &[0.01, 0.0, 0.02, 0.03, 0.02, 0.01]);
    let err = fit_gvf(&direct, GvfVariant::Gvf2).unwrap_err();
    assert!(err.to_string().contains("A001"));
    let fit = fit_gvf_floored(&direct, GvfVariant::Gvf2, 1e-8).unwrap();
    assert!(smooth_variances(&fit, &direct).unwrap().iter().all(|d| *d > 0.0));
    assert!(fit_gvf_floored(&direct, GvfVariant::Gvf2, 0.0).is_err());
}

#[test]
fn best_gvf_has_lowest_residual_mse() {
    let mut rng = common::rng(23);
    let m = 50;
    let ys: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    let ns: Vec<usize> = (0..m).map(|_| rng.random_range(2..100)).collect();
    let vars: Vec<f64> = (0..m).map(|_| rng.random_range(1e-4..0.1)).collect();
    let (best, fits) = fit_best_gvf(&direct_from(&ys, &ns, &vars), None).unwrap();
    let min = fits.iter().map(|f| f.residual_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(best.residual_mse, min);
    // GVF1 nests GVF2, so its in-sample residual MSE is never larger.
    assert!(fits[0].residual_mse <= fits[1].residual_mse + 1e-15);
}

#[test]
fn too_few_areas_are_rejected() {
    let direct = direct_from(&[0.1, 0.2, 0.3], &[5, 6, 7], &[0.01, 0.02, 0.03]);
    assert!(fit_gvf(&direct, GvfVariant::Gvf2).is_err());
}

#[test]
fn coefficient_count_mismatch_is_rejected() {
    let direct = direct_from(&[0.1, 0.2, 0.3, 0.4, 0.5], &[5, 6, 7, 8, 9], &[0.01, 0.04, 0.02, 0.08, 0.05]);
    let mut fit = fit_gvf(&direct, GvfVariant::Gvf2).unwrap();
    fit.coefficients.pop();
    assert!(smooth_variances(&fit, &direct).is_err());
}

fn microdata_strategy() -> impl Strategy<Value = Vec<(u8, bool, f64)>> {
    proptest::collection::vec((0u8..4, any::<bool>(), 1.0f64..20.0), 1..60)
}

proptest! {
    #[test]
    fn prop_direct_estimates_match_oracle(recs in microdata_strategy()) {
        let micro = Microdata {
            records: recs.iter().map(|(a, y, w)| rec(&format!("a{a}"), *y as u8 as f64, *w)).collect(),
        };
        let d = hajek_direct(&micro).unwrap();
        for area in &d.areas {
            let sel: Vec<_> = recs.iter().filter(|(a, _, _)| format!("a{a}") == area.area_id).collect();
            let ys: Vec<f64> = sel.iter().map(|(_, y, _)| *y as u8 as f64).collect();
            let ws: Vec<f64> = sel.iter().map(|(_, _, w)| *w).collect();
            let (y, v, nhat) = hajek_oracle(&ys, &ws);
            prop_assert!((area.y - y).abs() < 1e-12);
            prop_assert!((area.raw_var - v).abs() < 1e-12);
            prop_assert!((area.nhat - nhat).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&area.y) && area.raw_var >= 0.0);
            if ys.iter().all(|v| *v == ys[0]) {
                prop_assert_eq!(area.raw_var, 0.0);
            }
        }
    }

    #[test]
    fn prop_proportion_invariant_to_weight_rescaling(recs in microdata_strategy(), scale in 0.1f64..10.0) {
        let make = |s: f64| Microdata {
            records: recs.iter().map(|(a, y, w)| rec(&format!("a{a}"), *y as u8 as f64, w * s)).collect(),
        };
        let a = hajek_direct(&make(1.0)).unwrap();
        let b = hajek_direct(&make(scale)).unwrap();
        for (x, y) in a.areas.iter().zip(&b.areas) {
            prop_assert!((x.y - y.y).abs() < 1e-12);
            prop_assert!((y.nhat - scale * x.nhat).abs() < 1e-9 * y.nhat);
        }
    }

    #[test]
    fn prop_smoothed_variances_are_positive(
        vars in proptest::collection::vec(1e-6f64..1.0, 8..40),
        seed in 0u64..1000,
    ) {
        let mut rng = common::rng(seed);
        let m = vars.len();
        let ys: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let ns: Vec<usize> = (0..m).map(|_| rng.random_range(2..300)).collect();
        let direct = direct_from(&ys, &ns, &vars);
        for variant in [GvfVariant::Gvf1, GvfVariant::Gvf2] {
            if let Ok(fit) = fit_gvf(&direct, variant) {
                prop_assert!(smooth_variances(&fit, &direct).unwrap().iter().all(|d| *d > 0.0));
            }
        }
    }
}
