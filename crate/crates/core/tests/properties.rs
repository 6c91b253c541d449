use medmeta::masem::{implied_correlations, parameter_based_masem, wls_fit};
use medmeta::meta::{fixed_effect_meta, random_effect_meta, MultivariateMetaResult};
use medmeta::model::{AggregateMediationRecord, CorrelationRecord, IpdRow, IpdStudy, PathModel, RandomMethod};
use medmeta::simlab::{CovariateSpec, DgpConfig};
use medmeta::within_study::{fit_ols, sobel_se};
use medmeta::Estimate;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

fn positive() -> impl Strategy<Value = f64> {
    0.001..5.0f64
}

fn roundtrip<T: serde::Serialize + serde::de::DeserializeOwned>(v: &T) {
    let first = serde_json::to_string(v).unwrap();
    let back: T = serde_json::from_str(&first).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), first);
}

proptest! {
    #[test]
    fn aggregate_json_roundtrip(theta in finite(), se in positive(), a in finite(), sa in positive(), b in finite(), sb in positive(), n in 1u64..100_000, paths in any::<bool>()) {
        let mut r = AggregateMediationRecord::new("s1", theta, se, n).unwrap();
        if paths {
            r = r.with_paths(a, sa, b, sb).unwrap();
        }
        roundtrip(&r);
    }

    #[test]
    fn correlation_json_roundtrip(xm in -0.6..0.6f64, my in -0.6..0.6f64, mask in 1usize..8, n in 2u64..5000, sigma in any::<bool>()) {
        let xy = xm * my;
        let r = [xy, xm, my];
        let present = [0, 1, 2].map(|i| (mask >> i) & 1 == 1);
        let mut rec = CorrelationRecord::new("c", [0, 1, 2].map(|i| present[i].then_some(r[i])), n).unwrap();
        if sigma {
            let s = Matrix3::from_fn(|i, j| if present[i] && present[j] { if i == j { 0.01 } else { 0.002 } } else { 0.0 });
            rec = rec.with_sigma(s).unwrap();
        }
        roundtrip(&rec);
    }

    #[test]
    fn study_json_roundtrip(seed in 0u64..1000, n in 8usize..60) {
        let cfg = DgpConfig { alpha1: 0.5, beta2: 0.3, alpha2: vec![0.2], beta3: vec![0.1], l_dist: vec![CovariateSpec::uniform("l", 0.0, 1.0)], n, seed, ..DgpConfig::default() };
        if let Ok(study) = medmeta::simlab::generate_study(&cfg, "k", "v") {
            roundtrip(&study);
            roundtrip(&study.clone().without_outcome());
        }
        roundtrip(&cfg);
    }

    #[test]
    fn aggregate_rejects_bad_se(theta in finite(), se in -5.0..=0.0f64) {
        prop_assert!(AggregateMediationRecord::new("s", theta, se, 10).is_err());
        prop_assert!(AggregateMediationRecord::new("s", theta, f64::NAN, 10).is_err());
        let ok = AggregateMediationRecord::new("s", theta, 0.1, 10).unwrap();
        prop_assert!(ok.clone().with_paths(0.1, se, 0.1, 0.1).is_err());
        prop_assert!(ok.with_paths(0.1, 0.1, 0.1, se).is_err());
        prop_assert!(AggregateMediationRecord::new("s", theta, 0.1, 0).is_err());
    }

    #[test]
    fn correlation_rejects_out_of_range(v in prop_oneof![1.0001..10.0f64, -10.0..-1.0001f64], slot in 0usize..3) {
        let mut r = [Some(0.1), Some(0.1), Some(0.1)];
        r[slot] = Some(v);
        prop_assert!(CorrelationRecord::new("c", r, 50).is_err());
    }

    #[test]
    fn correlation_rejects_indefinite(xm in 0.8..0.99f64, my in 0.8..0.99f64) {
        // Strong positive XM and MY correlations force XY to be positive.
        prop_assert!(CorrelationRecord::new("c", [Some(-0.9), Some(xm), Some(my)], 50).is_err());
    }

    #[test]
    fn study_rejects_non_binary_treatment(bad in prop_oneof![0.01..0.99f64, 1.01..5.0f64], pos in 0usize..8) {
        let mut rows: Vec<_> = (0..8).map(|i| IpdRow { x: (i % 2) as f64, m: i as f64, y: Some(1.0), l: vec![] }).collect();
        rows[pos].x = bad;
        prop_assert!(IpdStudy::from_rows("s", "v", vec![], &rows).is_err());
    }

    #[test]
    fn study_rejects_single_arm(n in 2usize..20, arm in 0u8..2) {
        let rows: Vec<_> = (0..n).map(|i| IpdRow { x: f64::from(arm), m: i as f64, y: None, l: vec![] }).collect();
        prop_assert!(IpdStudy::from_rows("s", "v", vec![], &rows).is_err());
    }

    #[test]
    fn ols_is_permutation_invariant(seed in 0u64..10_000) {
        let mut g = medmeta::rng::stream(seed, 0);
        use rand::Rng;
        let n = 30;
        let x = DMatrix::<f64>::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { g.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| x[(i, 1)] - 2.0 * x[(i, 2)] + g.random_range(-0.5..0.5));
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, g.random_range(0..=i));
        }
        let xp = DMatrix::from_fn(n, 3, |i, j| x[(order[i], j)]);
        let yp = DVector::from_fn(n, |i, _| y[order[i]]);
        let a = fit_ols(&x, &y).unwrap();
        let b = fit_ols(&xp, &yp).unwrap();
        prop_assert!((a.coefficients - b.coefficients).amax() < 1e-10);
        prop_assert!((a.residual_variance - b.residual_variance).abs() < 1e-10);
    }

    #[test]
    fn sobel_is_symmetric(a in finite(), sa in positive(), b in finite(), sb in positive()) {
        let x = Estimate { value: a, se: sa };
        let y = Estimate { value: b, se: sb };
        prop_assert_eq!(sobel_se(x, y), sobel_se(y, x));
    }

    #[test]
    fn meta_is_order_invariant(ys in prop::collection::vec((-2.0..2.0f64, 0.001..1.0f64), 2..12), rot in 0usize..12) {
        let (y, v): (Vec<f64>, Vec<f64>) = ys.iter().copied().unzip();
        let k = y.len();
        let r = rot % k;
        let mut yr = y.clone();
        yr.rotate_left(r);
        let mut vr = v.clone();
        vr.rotate_left(r);
        let f = fixed_effect_meta(&y, &v).unwrap();
        let fr = fixed_effect_meta(&yr, &vr).unwrap();
        prop_assert!((f.estimate - fr.estimate).abs() < 1e-12 && (f.se - fr.se).abs() < 1e-12);
        for m in [RandomMethod::Dl, RandomMethod::Reml] {
            let a = random_effect_meta(&y, &v, m).unwrap();
            let b = random_effect_meta(&yr, &vr, m).unwrap();
            prop_assert!((a.estimate - b.estimate).abs() < 1e-8, "{m:?}");
            prop_assert!((a.tau2 - b.tau2).abs() < 1e-8 * (1.0 + a.tau2), "{m:?}");
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn meta_is_scale_equivariant(ys in prop::collection::vec((-2.0..2.0f64, 0.001..1.0f64), 2..12), c in 0.01..100.0f64) {
        let (y, v): (Vec<f64>, Vec<f64>) = ys.iter().copied().unzip();
        let ys2: Vec<f64> = y.iter().map(|t| t * c).collect();
        let vs2: Vec<f64> = v.iter().map(|s| s * c * c).collect();
        let f = fixed_effect_meta(&y, &v).unwrap();
        let f2 = fixed_effect_meta(&ys2, &vs2).unwrap();
        prop_assert!((f2.estimate - c * f.estimate).abs() < 1e-9 * c);
        prop_assert!((f2.se - c * f.se).abs() < 1e-9 * c);
        for m in [RandomMethod::Dl, RandomMethod::Reml] {
            let a = random_effect_meta(&y, &v, m).unwrap();
            let b = random_effect_meta(&ys2, &vs2, m).unwrap();
            prop_assert!((b.estimate - c * a.estimate).abs() < 1e-6 * c * (1.0 + a.estimate.abs()), "{m:?}");
            prop_assert!((b.se - c * a.se).abs() < 1e-6 * c * a.se, "{m:?}");
            prop_assert!((b.tau2 - c * c * a.tau2).abs() < 1e-6 * c * c * (a.tau2 + 1e-6), "{m:?}");
        }
    }

    #[test]
    fn zero_tau2_reproduces_fixed(y0 in -1.0..1.0f64, v in prop::collection::vec(0.01..1.0f64, 2..8)) {
        // Identical estimates give Q = 0, so both estimators return τ² = 0.
        let y = vec![y0; v.len()];
        let f = fixed_effect_meta(&y, &v).unwrap();
        for m in [RandomMethod::Dl, RandomMethod::Reml] {
            let r = random_effect_meta(&y, &v, m).unwrap();
            prop_assert_eq!(r.tau2, 0.0);
            prop_assert_eq!(r.estimate, f.estimate);
            prop_assert_eq!(r.se, f.se);
            prop_assert_eq!(&r.weights, &f.weights);
        }
    }

    #[test]
    fn parameter_based_masem_is_equivariant(ys in prop::collection::vec((-1.0..1.0f64, 0.01..0.5f64), 2..10), c in 0.1..10.0f64) {
        let recs: Vec<_> = ys.iter().enumerate().map(|(i, &(t, s))| AggregateMediationRecord::new(format!("s{i}"), t, s, 100).unwrap()).collect();
        let scaled: Vec<_> = ys.iter().enumerate().map(|(i, &(t, s))| AggregateMediationRecord::new(format!("s{i}"), c * t, c * s, 100).unwrap()).collect();
        let a = parameter_based_masem(&recs, RandomMethod::Reml).unwrap();
        let b = parameter_based_masem(&scaled, RandomMethod::Reml).unwrap();
        prop_assert!((b.estimate - c * a.estimate).abs() < 1e-6 * c);
        prop_assert!((b.se - c * a.se).abs() < 1e-6 * c * a.se);
    }

    #[test]
    fn path_roundtrip_is_identity(a in -0.9..0.9f64, b in -0.9..0.9f64, c in -0.9..0.9f64, scale in 0.01..100.0f64) {
        let path = PathModel::new(a, b, c);
        if let Ok(rho) = implied_correlations(&path) {
            let v = Matrix3::new(0.02, 0.004, 0.001, 0.004, 0.03, 0.005, 0.001, 0.005, 0.01);
            let pooled = |v: Matrix3<f64>| MultivariateMetaResult { rho_hat: rho, v, t_hat: Matrix3::zeros(), k_studies: 2, pattern_counts: [2; 3], restricted_loglik: 0.0, iterations: 0 };
            let fit = wls_fit(&pooled(v)).unwrap();
            prop_assert!((fit.path.a - a).abs() < 1e-10);
            prop_assert!((fit.path.b - b).abs() < 1e-10);
            prop_assert!((fit.path.c_prime - c).abs() < 1e-10);
            prop_assert!(fit.discrepancy < 1e-12);
            prop_assert_eq!(fit.lrt_df, 0);
            let rescaled = wls_fit(&pooled(v * scale)).unwrap();
            prop_assert_eq!(rescaled.path, fit.path);
        }
    }

    #[test]
    fn implied_correlations_stay_in_range(a in -1.0..1.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64) {
        if let Ok(rho) = implied_correlations(&PathModel::new(a, b, c)) {
            prop_assert!(rho.iter().all(|r| r.abs() <= 1.0 + 1e-12));
            prop_assert_eq!(rho[1], a);
        }
    }
}

#[test]
fn full_mediation_correlation_is_product() {
    let rho = implied_correlations(&PathModel::new(0.6f64, 0.35, 0.0)).unwrap();
    assert!((rho[0] - 0.6 * 0.35).abs() < 1e-15);
    assert_eq!(Vector3::<f64>::zeros(), implied_correlations(&PathModel::new(0.0, 0.0, 0.0)).unwrap());
}
