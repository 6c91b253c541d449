//! Marginal-likelihood approach: a bivariate random-effects model on the
//! per-study path estimates (a_i, b_i), the product δ = μ_α·μ_β, its Sobel
//! standard error and a parametric bootstrap interval.

use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggregateMediationRecord, Estimate};
use crate::optim::{bfgs, BfgsOptions};
use crate::rng;
use crate::scalar::quantile_sorted;
use crate::within_study::sobel_se;
use crate::Real;

/// Maximum or restricted maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodMethod {
    Ml,
    #[default]
    Reml,
}

/// Fitted bivariate random-effects model. The between-study covariance is
/// estimated, not assumed known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BivariateREFit<T: Real = f64> {
    pub mu_alpha: T,
    pub mu_beta: T,
    /// Between-study covariance of (α_i, β_i).
    pub sigma: Matrix2<T>,
    pub var_mu_alpha: T,
    pub var_mu_beta: T,
    pub loglik: T,
    pub converged: bool,
    pub method: LikelihoodMethod,
    pub k_studies: usize,
}

#[derive(Clone)]
struct PathData<T> {
    a: Vec<T>,
    b: Vec<T>,
    psi2: Vec<T>,
    phi2: Vec<T>,
}

impl<T: Real> PathData<T> {
    fn from_records(records: &[AggregateMediationRecord<T>]) -> Result<Self> {
        let mut d = PathData { a: vec![], b: vec![], psi2: vec![], phi2: vec![] };
        for r in records {
            let (a, b) = r.paths().ok_or_else(|| Error::MissingPathData(r.study_id().to_string()))?;
            d.a.push(a.value);
            d.b.push(b.value);
            d.psi2.push(a.variance());
            d.phi2.push(b.variance());
        }
        if d.a.len() < 2 {
            return Err(Error::InsufficientStudies { needed: 2, got: d.a.len() });
        }
        Ok(d)
    }
}

struct Profile<T> {
    mu: [T; 2],
    /// Inverse of Σ_i W_i, the covariance of the GLS means.
    cov_mu: [T; 3],
    neg_loglik: T,
}

/// Profiles out the means for a given between-study covariance
/// `(s11, s12, s22)` and returns the negative (restricted) log-likelihood
/// without constants.
fn profile<T: Real>(d: &PathData<T>, s: [T; 3], method: LikelihoodMethod) -> Option<Profile<T>> {
    let k = d.a.len();
    let (mut a11, mut a12, mut a22) = (T::zero(), T::zero(), T::zero());
    let (mut b1, mut b2) = (T::zero(), T::zero());
    let mut logdet = T::zero();
    let mut w = Vec::with_capacity(k);
    for i in 0..k {
        let v11 = s[0] + d.psi2[i];
        let v12 = s[1];
        let v22 = s[2] + d.phi2[i];
        let det = v11 * v22 - v12 * v12;
        if !(det > T::zero()) {
            return None;
        }
        logdet += det.ln();
        let (w11, w12, w22) = (v22 / det, -v12 / det, v11 / det);
        a11 += w11;
        a12 += w12;
        a22 += w22;
        b1 += w11 * d.a[i] + w12 * d.b[i];
        b2 += w12 * d.a[i] + w22 * d.b[i];
        w.push((w11, w12, w22));
    }
    let det_a = a11 * a22 - a12 * a12;
    if !(det_a > T::zero()) {
        return None;
    }
    let (c11, c12, c22) = (a22 / det_a, -a12 / det_a, a11 / det_a);
    let mu = [c11 * b1 + c12 * b2, c12 * b1 + c22 * b2];
    let mut quad = T::zero();
    for (i, &(w11, w12, w22)) in w.iter().enumerate() {
        let (e1, e2) = (d.a[i] - mu[0], d.b[i] - mu[1]);
        quad += w11 * e1 * e1 + T::lit(2.0) * w12 * e1 * e2 + w22 * e2 * e2;
    }
    let mut nll = (logdet + quad) * T::lit(0.5);
    if method == LikelihoodMethod::Reml {
        nll += det_a.ln() * T::lit(0.5);
    }
    Some(Profile { mu, cov_mu: [c11, c12, c22], neg_loglik: nll })
}

/// (log l11, l21, log l22) of the Cholesky factor → (s11, s12, s22).
fn sigma_from_params<T: Real>(p: &[T]) -> [T; 3] {
    let l11 = p[0].exp();
    let l22 = p[2].exp();
    [l11 * l11, l11 * p[1], p[1] * p[1] + l22 * l22]
}

fn moment_start<T: Real>(d: &PathData<T>) -> [T; 3] {
    let sd = |v: &[T], s2: &[T]| {
        let n = T::from_usize_lossy(v.len());
        let m = v.iter().fold(T::zero(), |a, &x| a + x) / n;
        let var = v.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m)) / (n - T::one()).max(T::one());
        let within = s2.iter().fold(T::zero(), |a, &x| a + x) / n;
        (var - within).max(T::lit(1e-4) * (T::one() + within)).sqrt()
    };
    [sd(&d.a, &d.psi2).ln(), T::zero(), sd(&d.b, &d.phi2).ln()]
}

fn fit_from<T: Real>(d: &PathData<T>, method: LikelihoodMethod, starts: &[[T; 3]]) -> Result<BivariateREFit<T>> {
    let objective = |p: &[T]| profile(d, sigma_from_params(p), method).map(|pr| pr.neg_loglik).unwrap_or(T::lit(f64::NAN));
    let mut best: Option<([T; 3], T, bool)> = None;
    let mut last = Vec::new();
    for start in starts {
        let min = bfgs(objective, start, BfgsOptions::default());
        last = min.x.iter().map(|v| v.f64()).collect();
        let s = sigma_from_params(&min.x);
        if !min.converged || !min.value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| min.value < b.1) {
            best = Some((s, min.value, true));
        }
    }
    let zero = [T::zero(); 3];
    if let Some(pr) = profile(d, zero, method) {
        if best.as_ref().is_none_or(|b| pr.neg_loglik <= b.1) {
            best = Some((zero, pr.neg_loglik, true));
        }
    }
    let Some((s, _, converged)) = best else {
        return Err(Error::Convergence { what: "bivariate random-effects likelihood".into(), iterations: BfgsOptions::default().max_iter, last });
    };
    let pr = profile(d, s, method).ok_or(Error::InvalidWeight)?;
    Ok(BivariateREFit {
        mu_alpha: pr.mu[0],
        mu_beta: pr.mu[1],
        sigma: Matrix2::new(s[0], s[1], s[1], s[2]),
        var_mu_alpha: pr.cov_mu[0],
        var_mu_beta: pr.cov_mu[2],
        loglik: -pr.neg_loglik,
        converged,
        method,
        k_studies: d.a.len(),
    })
}

/// Fits the bivariate random-effects model by (restricted) maximum
/// likelihood, treating the within-study variances ψ_i², φ_i² as known.
/// Three starting values are tried, plus the zero-heterogeneity boundary.
pub fn fit_bivariate_re<T: Real>(records: &[AggregateMediationRecord<T>], method: LikelihoodMethod) -> Result<BivariateREFit<T>> {
    let d = PathData::from_records(records)?;
    let base = moment_start(&d);
    let spread = T::lit(5.0f64.ln());
    let starts = [base, [base[0] - spread, T::zero(), base[2] - spread], [base[0] + spread, T::zero(), base[2] + spread]];
    fit_from(&d, method, &starts)
}

/// δ̂ = μ̂_α·μ̂_β with the Sobel standard error.
pub fn delta_estimate<T: Real>(fit: &BivariateREFit<T>) -> Result<Estimate<T>> {
    if !fit.converged {
        return Err(Error::Convergence { what: "bivariate random-effects likelihood".into(), iterations: 0, last: vec![] });
    }
    let a = Estimate { value: fit.mu_alpha, se: fit.var_mu_alpha.max(T::zero()).sqrt() };
    let b = Estimate { value: fit.mu_beta, se: fit.var_mu_beta.max(T::zero()).sqrt() };
    Ok(Estimate { value: a.value * b.value, se: sobel_se(a, b) })
}

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOTSTRAP: usize = 2000;

/// Percentile interval from a parametric bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval<T = f64> {
    pub low: T,
    pub high: T,
    pub replicates: usize,
    pub failed: usize,
    pub seed: u64,
    /// Whether the interval contains the point estimate.
    pub contains_estimate: bool,
}

fn cholesky2(s: &Matrix2<f64>) -> [f64; 3] {
    let l11 = s[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { s[(1, 0)] / l11 } else { 0.0 };
    let l22 = (s[(1, 1)] - l21 * l21).max(0.0).sqrt();
    [l11, l21, l22]
}

/// Parametric bootstrap: study-level true paths are drawn from the fitted
/// bivariate normal, sampling errors from ψ_i² and φ_i², and the model is
/// refitted. Returns the 2.5%/97.5% percentiles of δ*.
pub fn bootstrap_ci<T: Real>(
    fit: &BivariateREFit<T>,
    records: &[AggregateMediationRecord<T>],
    b: usize,
    seed: u64,
) -> Result<BootstrapInterval<T>> {
    if b < 100 {
        return Err(Error::InvalidArgument(format!("at least 100 bootstrap replicates are required, got {b}")));
    }
    let d = PathData::from_records(records)?;
    let sigma = fit.sigma.map(|v| v.f64());
    let l = cholesky2(&sigma);
    let (mu_a, mu_b) = (fit.mu_alpha.f64(), fit.mu_beta.f64());
    let psi: Vec<f64> = d.psi2.iter().map(|v| v.f64().sqrt()).collect();
    let phi: Vec<f64> = d.phi2.iter().map(|v| v.f64().sqrt()).collect();
    let warm = if l[0] > 0.0 && l[2] > 0.0 {
        [T::lit(l[0].ln()), T::lit(l[1]), T::lit(l[2].ln())]
    } else {
        moment_start(&d)
    };

    let deltas: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rng::stream_id("ml-bootstrap", rep as u64));
            let mut sample = d.clone();
            for i in 0..d.a.len() {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let alpha = mu_a + l[0] * z1;
                let beta = mu_b + l[1] * z1 + l[2] * z2;
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                sample.a[i] = T::lit(alpha + psi[i] * e1);
                sample.b[i] = T::lit(beta + phi[i] * e2);
            }
            let refit = fit_from(&sample, fit.method, &[warm]).ok()?;
            let v = (refit.mu_alpha * refit.mu_beta).f64();
            v.is_finite().then_some(v)
        })
        .collect();
    let failed = deltas.iter().filter(|d| d.is_none()).count();
    if failed * 20 > b {
        return Err(Error::BootstrapInstability { failed, total: b });
    }
    let mut ok: Vec<f64> = deltas.into_iter().flatten().collect();
    ok.sort_by(|x, y| x.total_cmp(y));
    let (low, high) = (quantile_sorted(&ok, 0.025), quantile_sorted(&ok, 0.975));
    let est = (fit.mu_alpha * fit.mu_beta).f64();
    Ok(BootstrapInterval {
        low: T::lit(low),
        high: T::lit(high),
        replicates: b,
        failed,
        seed,
        contains_estimate: low <= est && est <= high,
    })
}
