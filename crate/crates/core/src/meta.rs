//! Univariate fixed- and random-effects pooling, and the three-dimensional
//! random-effects model for correlation vectors with missing entries.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CorrelationRecord, MetaMethod, MetaResult, RandomMethod, CORRELATION_NAMES};
use crate::optim::{bfgs, BfgsOptions};
use crate::scalar::Z_975;
use crate::Real;

/// Iteration cap of the REML Fisher-scoring loop.
pub const REML_MAX_ITER: usize = 200;

fn check_inputs<T: Real>(estimates: &[T], variances: &[T]) -> Result<()> {
    if estimates.len() != variances.len() {
        return Err(Error::InvalidArgument("estimates and variances differ in length".into()));
    }
    if estimates.is_empty() {
        return Err(Error::InsufficientStudies { needed: 1, got: 0 });
    }
    if let Some(i) = variances.iter().position(|&v| !(v > T::zero() && v.is_finite())) {
        return Err(Error::InvalidVariance(i));
    }
    if let Some(i) = estimates.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("estimate {i} is not finite")));
    }
    Ok(())
}

/// Inverse-variance pooling at a given between-study variance.
fn pool<T: Real>(estimates: &[T], variances: &[T], tau2: T, method: MetaMethod) -> MetaResult<T> {
    let w: Vec<T> = variances.iter().map(|&v| T::one() / (v + tau2)).collect();
    let sum_w = w.iter().fold(T::zero(), |a, &b| a + b);
    let estimate = w.iter().zip(estimates).fold(T::zero(), |a, (&wi, &yi)| a + wi * yi) / sum_w;
    let se = (T::one() / sum_w).sqrt();
    let half = T::lit(Z_975) * se;
    MetaResult {
        estimate,
        se,
        tau2,
        ci_low: estimate - half,
        ci_high: estimate + half,
        weights: w.iter().map(|&wi| wi / sum_w).collect(),
        k_studies: estimates.len(),
        method,
    }
}

/// Inverse-variance weighted fixed-effect meta-analysis.
pub fn fixed_effect_meta<T: Real>(estimates: &[T], variances: &[T]) -> Result<MetaResult<T>> {
    check_inputs(estimates, variances)?;
    Ok(pool(estimates, variances, T::zero(), MetaMethod::Fixed))
}

/// Cochran's Q about the fixed-effect mean.
pub fn cochran_q<T: Real>(estimates: &[T], variances: &[T]) -> T {
    let fe = pool(estimates, variances, T::zero(), MetaMethod::Fixed);
    estimates
        .iter()
        .zip(variances)
        .fold(T::zero(), |a, (&y, &v)| a + (y - fe.estimate) * (y - fe.estimate) / v)
}

/// DerSimonian–Laird moment estimate of τ², truncated at zero.
pub fn dl_tau2<T: Real>(estimates: &[T], variances: &[T]) -> T {
    let k = T::from_usize_lossy(estimates.len());
    let q = cochran_q(estimates, variances);
    let (s1, s2) = variances.iter().fold((T::zero(), T::zero()), |(a, b), &v| (a + T::one() / v, b + T::one() / (v * v)));
    let denom = s1 - s2 / s1;
    if denom > T::zero() {
        ((q - (k - T::one())) / denom).max(T::zero())
    } else {
        T::zero()
    }
}

fn restricted_loglik<T: Real>(estimates: &[T], variances: &[T], tau2: T) -> T {
    let w: Vec<T> = variances.iter().map(|&v| T::one() / (v + tau2)).collect();
    let sum_w = w.iter().fold(T::zero(), |a, &b| a + b);
    let mu = w.iter().zip(estimates).fold(T::zero(), |a, (&wi, &yi)| a + wi * yi) / sum_w;
    let mut ll = -sum_w.ln();
    for ((&wi, &yi), _) in w.iter().zip(estimates).zip(variances) {
        ll += wi.ln() - wi * (yi - mu) * (yi - mu);
    }
    ll * T::lit(0.5)
}

/// REML estimate of τ² by Fisher scoring from the DL starting value,
/// projected onto τ² ≥ 0.
///
/// Both stopping rules are invariant to rescaling the data: the step is
/// measured against τ² plus the mean within-study variance, and the
/// log-likelihood change is absolute (rescaling only shifts it by a constant).
pub fn reml_tau2<T: Real>(estimates: &[T], variances: &[T]) -> Result<T> {
    let v_bar = crate::scalar::mean(variances);
    let mut tau2 = dl_tau2(estimates, variances);
    let mut ll = restricted_loglik(estimates, variances, tau2);
    let rel_tol = T::tol(1e-10);
    let step_tol = T::tol(1e-8);
    for _ in 0..REML_MAX_ITER {
        let w: Vec<T> = variances.iter().map(|&v| T::one() / (v + tau2)).collect();
        let (sum_w, sum_w2, sum_w3) =
            w.iter().fold((T::zero(), T::zero(), T::zero()), |(a, b, c), &wi| (a + wi, b + wi * wi, c + wi * wi * wi));
        let mu = w.iter().zip(estimates).fold(T::zero(), |a, (&wi, &yi)| a + wi * yi) / sum_w;
        let wr2 = w.iter().zip(estimates).fold(T::zero(), |a, (&wi, &yi)| a + wi * wi * (yi - mu) * (yi - mu));
        // Score and expected information of the restricted likelihood (both halved).
        let score = wr2 - (sum_w - sum_w2 / sum_w);
        let info = sum_w2 - T::lit(2.0) * sum_w3 / sum_w + (sum_w2 / sum_w) * (sum_w2 / sum_w);
        let mut step = if info > T::zero() { score / info } else { T::zero() };
        let mut next = (tau2 + step).max(T::zero());
        let mut next_ll = restricted_loglik(estimates, variances, next);
        for _ in 0..30 {
            if next_ll >= ll {
                break;
            }
            step = step * T::lit(0.5);
            next = (tau2 + step).max(T::zero());
            next_ll = restricted_loglik(estimates, variances, next);
        }
        let d_par = (next - tau2).abs() / (next + v_bar);
        let d_ll = (next_ll - ll).abs();
        tau2 = next;
        ll = next_ll;
        if d_par < step_tol || d_ll < rel_tol {
            return Ok(tau2);
        }
    }
    Err(Error::Convergence { what: "REML between-study variance".into(), iterations: REML_MAX_ITER, last: vec![tau2.f64()] })
}

/// Random-effects meta-analysis with τ² from DerSimonian–Laird or REML.
pub fn random_effect_meta<T: Real>(estimates: &[T], variances: &[T], method: RandomMethod) -> Result<MetaResult<T>> {
    check_inputs(estimates, variances)?;
    if estimates.len() < 2 {
        return Err(Error::InsufficientStudies { needed: 2, got: estimates.len() });
    }
    let tau2 = match method {
        RandomMethod::Dl => dl_tau2(estimates, variances),
        RandomMethod::Reml => reml_tau2(estimates, variances)?,
    };
    Ok(pool(estimates, variances, tau2, method.into()))
}

/// Pooled correlation vector from the multivariate random-effects model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MultivariateMetaResult<T: Real = f64> {
    /// Pooled (XY, XM, MY) correlations.
    pub rho_hat: Vector3<T>,
    /// Estimated sampling covariance of `rho_hat`.
    pub v: Matrix3<T>,
    /// Between-study covariance.
    pub t_hat: Matrix3<T>,
    pub k_studies: usize,
    /// Number of studies reporting each correlation.
    pub pattern_counts: [usize; 3],
    pub restricted_loglik: T,
    pub iterations: usize,
}

/// Large-sample covariance between two sample correlations that share one
/// variable: `Cov(r_jk, r_jh)` with `r_kh` the third correlation, per unit n.
pub fn shared_variable_cov<T: Real>(r_jk: T, r_jh: T, r_kh: T) -> T {
    let one = T::one();
    r_kh * (one - r_jk * r_jk - r_jh * r_jh) - T::lit(0.5) * r_jk * r_jh * (one - r_jk * r_jk - r_jh * r_jh - r_kh * r_kh)
}

/// Sampling covariance of the (XY, XM, MY) correlations at population values
/// `rho` and sample size `n`: `(1 - r²)²/(n - 1)` on the diagonal and the
/// first-order Olkin–Siotani terms off the diagonal.
pub fn olkin_siotani<T: Real>(rho: [T; 3], n: u64) -> Matrix3<T> {
    let [xy, xm, my] = rho;
    let denom = T::lit((n.max(2) - 1) as f64);
    let one = T::one();
    let mut s = Matrix3::zeros();
    for (i, r) in rho.iter().enumerate() {
        s[(i, i)] = (one - *r * *r) * (one - *r * *r);
    }
    // XY and XM share X; the third is MY.
    s[(0, 1)] = shared_variable_cov(xy, xm, my);
    // XY and MY share Y; the third is XM.
    s[(0, 2)] = shared_variable_cov(xy, my, xm);
    // XM and MY share M; the third is XY.
    s[(1, 2)] = shared_variable_cov(xm, my, xy);
    s[(1, 0)] = s[(0, 1)];
    s[(2, 0)] = s[(0, 2)];
    s[(2, 1)] = s[(1, 2)];
    s / denom
}

/// Within-study covariance of each record: the supplied one, or Olkin–Siotani
/// evaluated at the study's own correlations with absent ones filled by the
/// sample-size-weighted mean across studies. Rows and columns of absent
/// correlations are zeroed.
pub fn within_study_covariances<T: Real>(records: &[CorrelationRecord<T>]) -> Vec<Matrix3<T>> {
    let mut fill = [T::zero(); 3];
    for (j, f) in fill.iter_mut().enumerate() {
        let (mut num, mut den) = (T::zero(), T::zero());
        for r in records {
            if let Some(v) = r.r()[j] {
                let n = T::lit(r.n() as f64);
                num += n * v;
                den += n;
            }
        }
        if den > T::zero() {
            *f = num / den;
        }
    }
    records
        .iter()
        .map(|rec| {
            if let Some(s) = rec.sigma() {
                return *s;
            }
            let r = rec.r();
            let rho = [0, 1, 2].map(|j| r[j].unwrap_or(fill[j]));
            let mut s = olkin_siotani(rho, rec.n());
            for j in 0..3 {
                if r[j].is_none() {
                    s.row_mut(j).fill(T::zero());
                    s.column_mut(j).fill(T::zero());
                }
            }
            s
        })
        .collect()
}

struct Prepared<T: Real> {
    obs: Vec<Vec<usize>>,
    r: Vec<DVector<T>>,
    sigma: Vec<DMatrix<T>>,
}

fn cholesky_to_t<T: Real>(p: &[T]) -> Matrix3<T> {
    let l = Matrix3::new(p[0], T::zero(), T::zero(), p[1], p[2], T::zero(), p[3], p[4], p[5]);
    l * l.transpose()
}

struct GlsState<T: Real> {
    rho: Vector3<T>,
    a_inv: Matrix3<T>,
    neg_loglik: T,
}

fn gls<T: Real>(prep: &Prepared<T>, t: &Matrix3<T>) -> Option<GlsState<T>> {
    let mut a = Matrix3::<T>::zeros();
    let mut bvec = Vector3::<T>::zeros();
    let mut logdet = T::zero();
    let mut ws = Vec::with_capacity(prep.obs.len());
    for ((obs, r), sigma) in prep.obs.iter().zip(&prep.r).zip(&prep.sigma) {
        let q = obs.len();
        let v = DMatrix::from_fn(q, q, |i, j| t[(obs[i], obs[j])] + sigma[(i, j)]);
        let chol = v.cholesky()?;
        logdet += chol.l_dirty().diagonal().iter().fold(T::zero(), |s, &d| s + d.ln()) * T::lit(2.0);
        let w = chol.inverse();
        let wr = &w * r;
        for i in 0..q {
            bvec[obs[i]] += wr[i];
            for j in 0..q {
                a[(obs[i], obs[j])] += w[(i, j)];
            }
        }
        ws.push(w);
    }
    let chol_a = a.cholesky()?;
    let rho = chol_a.solve(&bvec);
    let a_inv = chol_a.inverse();
    let logdet_a = chol_a.l().diagonal().iter().fold(T::zero(), |s, &d| s + d.ln()) * T::lit(2.0);
    let mut quad = T::zero();
    for ((obs, r), w) in prep.obs.iter().zip(&prep.r).zip(&ws) {
        let e = DVector::from_fn(obs.len(), |i, _| r[i] - rho[obs[i]]);
        quad += e.dot(&(w * &e));
    }
    Some(GlsState { rho, a_inv, neg_loglik: (logdet + logdet_a + quad) * T::lit(0.5) })
}

/// Restricted maximum likelihood fit of `r_i = ρ + u_i + e_i` with
/// `u_i ~ N(0, T)` and `e_i ~ N(0, Σ_i)`, using only the observed entries of
/// each study. T is parameterized by its Cholesky factor.
pub fn multivariate_re_meta<T: Real>(records: &[CorrelationRecord<T>]) -> Result<MultivariateMetaResult<T>> {
    if records.len() < 2 {
        return Err(Error::InsufficientStudies { needed: 2, got: records.len() });
    }
    let mut counts = [0usize; 3];
    for rec in records {
        for j in rec.observed() {
            counts[j] += 1;
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UnidentifiedComponent(CORRELATION_NAMES[j]));
    }
    let sigmas = within_study_covariances(records);
    let mut prep = Prepared { obs: Vec::new(), r: Vec::new(), sigma: Vec::new() };
    for (rec, s) in records.iter().zip(&sigmas) {
        let obs = rec.observed();
        let r = rec.r();
        prep.r.push(DVector::from_iterator(obs.len(), obs.iter().map(|&j| r[j].unwrap())));
        prep.sigma.push(DMatrix::from_fn(obs.len(), obs.len(), |i, k| s[(obs[i], obs[k])]));
        prep.obs.push(obs);
    }

    // Start from a moment guess of each between-study standard deviation.
    let mut start = vec![T::zero(); 6];
    for (j, diag) in [0usize, 2, 5].into_iter().enumerate() {
        let vals: Vec<(T, T)> =
            records.iter().zip(&sigmas).filter_map(|(rec, s)| rec.r()[j].map(|v| (v, s[(j, j)]))).collect();
        let n = T::from_usize_lossy(vals.len());
        let mean = vals.iter().fold(T::zero(), |a, v| a + v.0) / n;
        let spread = vals.iter().fold(T::zero(), |a, v| a + (v.0 - mean) * (v.0 - mean)) / n.max(T::one());
        let within = vals.iter().fold(T::zero(), |a, v| a + v.1) / n;
        start[diag] = (spread - within).max(T::lit(1e-4)).sqrt();
    }

    let objective = |p: &[T]| gls(&prep, &cholesky_to_t(p)).map(|s| s.neg_loglik).unwrap_or(T::lit(f64::NAN));
    let min = bfgs(objective, &start, BfgsOptions { max_iter: 500, ..BfgsOptions::default() });
    if !min.converged {
        return Err(Error::Convergence {
            what: "multivariate REML".into(),
            iterations: min.iterations,
            last: min.x.iter().map(|v| v.f64()).collect(),
        });
    }
    let mut t_hat = cholesky_to_t(&min.x);
    let mut state = gls(&prep, &t_hat).ok_or(Error::InvalidWeight)?;
    // Boundary candidate: no heterogeneity at all.
    if let Some(zero) = gls(&prep, &Matrix3::zeros()) {
        if zero.neg_loglik <= state.neg_loglik {
            t_hat = Matrix3::zeros();
            state = zero;
        }
    }
    let rho_hat = state.rho.map(|v| v.max(-T::one()).min(T::one()));
    let v = (state.a_inv + state.a_inv.transpose()) * T::lit(0.5);
    Ok(MultivariateMetaResult {
        rho_hat,
        v,
        t_hat,
        k_studies: records.len(),
        pattern_counts: counts,
        restricted_loglik: -state.neg_loglik,
        iterations: min.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_effect_hand_values() {
        let r = fixed_effect_meta(&[0.3; 5], &[0.01; 5]).unwrap();
        assert!((r.estimate - 0.3f64).abs() < 1e-15);
        assert!(r.weights.iter().all(|&w| (w - 0.2f64).abs() < 1e-15));
        let r = fixed_effect_meta(&[0.5], &[0.04]).unwrap();
        assert!((r.se - 0.2f64).abs() < 1e-15);
        assert_eq!(r.tau2, 0.0);
        let r = fixed_effect_meta(&[0.1, 0.5], &[0.01, 0.04]).unwrap();
        assert!((r.estimate - 0.18f64).abs() < 1e-14);
        assert!((r.ci_high - r.estimate - 1.959964 * r.se).abs() < 1e-15);
    }

    #[test]
    fn invalid_variance_rejected() {
        assert_eq!(fixed_effect_meta(&[0.1, 0.2], &[0.01, 0.0]).unwrap_err(), Error::InvalidVariance(1));
        assert!(random_effect_meta(&[0.1], &[0.01], RandomMethod::Dl).is_err());
    }

    #[test]
    fn dl_hand_case() {
        // Independent evaluation: weights 10 and 10, mean 0.5,
        // Q = 10·0.25 + 10·0.25 = 5, C = 20 - 200/20 = 10.
        let q_oracle = 10.0 * 0.25 + 10.0 * 0.25;
        let c_oracle = 20.0 - (100.0 + 100.0) / 20.0;
        let tau2_oracle = (q_oracle - 1.0) / c_oracle;
        assert!((tau2_oracle - 0.4f64).abs() < 1e-15);
        let r = random_effect_meta(&[0.0, 1.0], &[0.1, 0.1], RandomMethod::Dl).unwrap();
        assert!((r.tau2 - tau2_oracle).abs() < 1e-14);
        assert!((cochran_q(&[0.0, 1.0], &[0.1, 0.1]) - 5.0f64).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_input_truncates_to_fixed() {
        let y = [0.20, 0.21, 0.19, 0.20];
        let v = [0.01, 0.02, 0.01, 0.03];
        for m in [RandomMethod::Dl, RandomMethod::Reml] {
            let re = random_effect_meta(&y, &v, m).unwrap();
            let fe = fixed_effect_meta(&y, &v).unwrap();
            assert_eq!(re.tau2, 0.0);
            assert_eq!(re.estimate, fe.estimate);
            assert_eq!(re.se, fe.se);
            assert_eq!(re.weights, fe.weights);
        }
    }

    #[test]
    fn reml_satisfies_its_estimating_equation() {
        let y = [0.1f64, 0.5, 0.3, -0.2, 0.8, 0.45];
        let v = [0.01, 0.02, 0.015, 0.03, 0.01, 0.05];
        let tau2 = reml_tau2(&y, &v).unwrap();
        assert!(tau2 > 0.0);
        // Finite-difference check that the restricted likelihood peaks there.
        let h = 1e-5;
        let d = restricted_loglik(&y, &v, tau2 + h) - restricted_loglik(&y, &v, tau2 - h);
        assert!((d / (2.0 * h)).abs() < 1e-4, "score {d}");
    }

    #[test]
    fn olkin_siotani_diagonal_and_symmetry() {
        let s = olkin_siotani([0.3, 0.5, 0.45], 101);
        assert!((s[(0, 0)] - (1.0f64 - 0.09).powi(2) / 100.0).abs() < 1e-15);
        assert_eq!(s, s.transpose());
        let zero = olkin_siotani([0.0f64, 0.0, 0.0], 11);
        assert_eq!(zero[(0, 1)], 0.0);
    }

    #[test]
    fn identical_records_pool_exactly() {
        let recs: Vec<_> = (0..6)
            .map(|i| CorrelationRecord::new(format!("s{i}"), [Some(0.3f64), Some(0.5), Some(0.45)], 100_000).unwrap())
            .collect();
        let fit = multivariate_re_meta(&recs).unwrap();
        for (got, want) in fit.rho_hat.iter().zip([0.3, 0.5, 0.45]) {
            assert!((got - want).abs() < 1e-6);
        }
        assert!(fit.t_hat.amax() < 1e-6, "{}", fit.t_hat);
        assert_eq!(fit.pattern_counts, [6, 6, 6]);
    }

    #[test]
    fn unobserved_component_is_rejected() {
        let recs: Vec<_> = (0..3).map(|i| CorrelationRecord::new(format!("s{i}"), [None, Some(0.5), None], 100).unwrap()).collect();
        assert_eq!(multivariate_re_meta(&recs).unwrap_err(), Error::UnidentifiedComponent("r_xy"));
        let one = vec![CorrelationRecord::new("a", [Some(0.1), Some(0.2), Some(0.3)], 50).unwrap()];
        assert!(matches!(multivariate_re_meta(&one), Err(Error::InsufficientStudies { .. })));
    }
}
