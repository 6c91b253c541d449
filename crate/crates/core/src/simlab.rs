//! Synthetic mediation studies and Monte Carlo ground truth.
//!
//! Structural equations, with X ~ Bernoulli(0.5) and L drawn independently
//! per covariate:
//!
//! ```text
//! M = α₀ + α₁X + α₂ᵀL + X·α_xlᵀL + σ_M ε_M
//! Y = β₀ + β₁X + β₂M + β_xm·X·M + β₃ᵀL + γU + σ_Y ε_Y
//! ```
//!
//! then M and Y are multiplied by their measurement scales. The optional
//! latent U shifts both L and Y, breaking covariate sufficiency on purpose.

use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggregateMediationRecord, CorrelationRecord, Estimate, IpdStudy};
use crate::rng::{self, StreamRng};
use crate::scalar::{mean, sample_sd};
use crate::within_study::{fit_working_models, fit_working_models_with, product_of_coefficients, sobel_se, Exposure, ModelTerms};

/// Smallest Monte Carlo size accepted by [`true_nie_oracle`].
pub const MIN_ORACLE_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl CovariateDist {
    fn check(&self, name: &str) -> Result<()> {
        let ok = match *self {
            CovariateDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            CovariateDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("covariate `{name}` has an invalid distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            CovariateDist::Normal { mean, .. } => mean,
            CovariateDist::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            CovariateDist::Normal { sd, .. } => sd * sd,
            CovariateDist::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
        }
    }

    fn draw(&self, g: &mut StreamRng) -> f64 {
        match *self {
            CovariateDist::Normal { mean, sd } => mean + sd * g.sample::<f64, _>(StandardNormal),
            CovariateDist::Uniform { lo, hi } => g.random_range(lo..hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
}

impl CovariateSpec {
    pub fn normal(name: impl Into<String>, mean: f64, sd: f64) -> Self {
        Self { name: name.into(), dist: CovariateDist::Normal { mean, sd } }
    }

    pub fn uniform(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), dist: CovariateDist::Uniform { lo, hi } }
    }
}

/// Unmeasured common cause of L and Y: `L_j += l_loading[j]·U`, `Y += y_loading·U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentConfounding {
    pub l_loading: Vec<f64>,
    pub y_loading: f64,
}

/// Data-generating mechanism of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: Vec<f64>,
    /// Treatment-by-covariate terms of the mediator equation; empty means zero.
    #[serde(default)]
    pub alpha_xl: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: Vec<f64>,
    #[serde(default)]
    pub beta_xm: f64,
    pub l_dist: Vec<CovariateSpec>,
    pub sigma_m: f64,
    pub sigma_y: f64,
    pub n: usize,
    #[serde(default = "one")]
    pub scale_m: f64,
    #[serde(default = "one")]
    pub scale_y: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentConfounding>,
}

fn one() -> f64 {
    1.0
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.0,
            alpha1: 0.0,
            alpha2: vec![],
            alpha_xl: vec![],
            beta0: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            beta3: vec![],
            beta_xm: 0.0,
            l_dist: vec![],
            sigma_m: 1.0,
            sigma_y: 1.0,
            n: 1000,
            scale_m: 1.0,
            scale_y: 1.0,
            seed: 0,
            latent: None,
        }
    }
}

impl DgpConfig {
    /// Covariate-free mechanism whose (X, M, Y) correlations are those of the
    /// standardized path model (a, b, c′) with a binary 1:1 treatment.
    pub fn from_standardized_path(a: f64, b: f64, c_prime: f64, n: usize, seed: u64) -> Result<Self> {
        let resid_y = 1.0 - c_prime * c_prime - b * b - 2.0 * a * b * c_prime;
        if !(a.abs() < 1.0 && resid_y > 0.0) {
            return Err(Error::InadmissiblePath);
        }
        Ok(Self {
            alpha1: 2.0 * a,
            sigma_m: (1.0 - a * a).sqrt(),
            beta1: 2.0 * c_prime,
            beta2: b,
            sigma_y: resid_y.sqrt(),
            n,
            seed,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        for (name, v) in [("sigma_m", self.sigma_m), ("sigma_y", self.sigma_y), ("scale_m", self.scale_m), ("scale_y", self.scale_y)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let d = self.l_dist.len();
        if self.alpha2.len() != d || self.beta3.len() != d || !(self.alpha_xl.is_empty() || self.alpha_xl.len() == d) {
            return bad(format!("{d} covariates but alpha2/beta3/alpha_xl lengths {}/{}/{}", self.alpha2.len(), self.beta3.len(), self.alpha_xl.len()));
        }
        if self.latent.as_ref().is_some_and(|u| u.l_loading.len() != d) {
            return bad("latent l_loading length differs from the number of covariates".into());
        }
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        for c in &self.l_dist {
            c.dist.check(&c.name)?;
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.l_dist.iter().map(|c| c.name.clone()).collect()
    }

    fn alpha_xl(&self, j: usize) -> f64 {
        self.alpha_xl.get(j).copied().unwrap_or(0.0)
    }

    /// Conditional mean of the structural (unscaled) mediator.
    pub fn mediator_mean(&self, x: f64, l: &[f64]) -> f64 {
        let mut m = self.alpha0 + self.alpha1 * x;
        for (j, &v) in l.iter().enumerate() {
            m += (self.alpha2[j] + x * self.alpha_xl(j)) * v;
        }
        m
    }

    /// Conditional mean of the structural outcome given U = u.
    pub fn outcome_mean(&self, x: f64, m: f64, l: &[f64], u: f64) -> f64 {
        let mut y = self.beta0 + self.beta1 * x + self.beta2 * m + self.beta_xm * x * m;
        for (c, v) in self.beta3.iter().zip(l) {
            y += c * v;
        }
        y + self.latent.as_ref().map_or(0.0, |lat| lat.y_loading * u)
    }

    fn draw_latent(&self, g: &mut StreamRng) -> f64 {
        if self.latent.is_some() {
            g.sample(StandardNormal)
        } else {
            0.0
        }
    }

    fn shift_covariates(&self, l: &mut [f64], u: f64) {
        if let Some(lat) = &self.latent {
            for (v, w) in l.iter_mut().zip(&lat.l_loading) {
                *v += w * u;
            }
        }
    }

    /// Closed-form NIE on the outcome scale for main-effects mechanisms.
    pub fn closed_form_nie(&self, x: u8, x_star: u8) -> Option<f64> {
        let linear = self.beta_xm == 0.0 && self.alpha_xl.iter().all(|&v| v == 0.0);
        linear.then(|| self.scale_y * self.alpha1 * self.beta2 * (f64::from(x_star) - f64::from(x)))
    }

    /// Population correlations (XY, XM, MY) of a main-effects mechanism.
    pub fn population_correlations(&self) -> Result<[f64; 3]> {
        self.validate()?;
        if self.closed_form_nie(0, 1).is_none() {
            return Err(Error::NonlinearModel);
        }
        // Loadings on independent sources: X, each L, U, ε_M, ε_Y.
        let d = self.l_dist.len();
        let mut var = vec![0.25];
        var.extend(self.l_dist.iter().map(|c| c.dist.variance()));
        var.extend([1.0, self.sigma_m * self.sigma_m, self.sigma_y * self.sigma_y]);
        let u = d + 1;
        let lambda = |j: usize| self.latent.as_ref().map_or(0.0, |lat| lat.l_loading[j]);
        let mut x = vec![0.0; d + 4];
        x[0] = 1.0;
        let mut m = vec![0.0; d + 4];
        m[0] = self.alpha1;
        for j in 0..d {
            m[1 + j] = self.alpha2[j];
            m[u] += self.alpha2[j] * lambda(j);
        }
        m[d + 2] = 1.0;
        let mut y: Vec<f64> = m.iter().map(|v| self.beta2 * v).collect();
        y[0] += self.beta1;
        for j in 0..d {
            y[1 + j] += self.beta3[j];
            y[u] += self.beta3[j] * lambda(j);
        }
        y[u] += self.latent.as_ref().map_or(0.0, |lat| lat.y_loading);
        y[d + 3] = 1.0;
        let cov = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&var).map(|((p, q), v)| p * q * v).sum::<f64>();
        let corr = |a: &[f64], b: &[f64]| cov(a, b) / (cov(a, a) * cov(b, b)).sqrt();
        Ok([corr(&x, &y), corr(&x, &m), corr(&m, &y)])
    }
}

fn draw_row(cfg: &DgpConfig, g: &mut StreamRng, l: &mut [f64]) -> (f64, f64, f64) {
    for (v, c) in l.iter_mut().zip(&cfg.l_dist) {
        *v = c.dist.draw(g);
    }
    let u = cfg.draw_latent(g);
    cfg.shift_covariates(l, u);
    let x = if g.random_bool(0.5) { 1.0 } else { 0.0 };
    let m = cfg.mediator_mean(x, l) + cfg.sigma_m * g.sample::<f64, _>(StandardNormal);
    let y = cfg.outcome_mean(x, m, l, u) + cfg.sigma_y * g.sample::<f64, _>(StandardNormal);
    (x, m * cfg.scale_m, y * cfg.scale_y)
}

/// Draws one study of `cfg.n` participants. A pure function of `cfg`.
pub fn generate_study(cfg: &DgpConfig, study_id: &str, treatment_version: &str) -> Result<IpdStudy<f64>> {
    cfg.validate()?;
    let mut g = rng::stream(cfg.seed, rng::stream_id("generate_study", 0));
    let d = cfg.l_dist.len();
    let (mut xs, mut ms, mut ys) = (Vec::with_capacity(cfg.n), Vec::with_capacity(cfg.n), Vec::with_capacity(cfg.n));
    let mut cols = vec![Vec::with_capacity(cfg.n); d];
    let mut l = vec![0.0; d];
    for _ in 0..cfg.n {
        let (x, m, y) = draw_row(cfg, &mut g, &mut l);
        xs.push(x);
        ms.push(m);
        ys.push(y);
        for (c, &v) in cols.iter_mut().zip(&l) {
            c.push(v);
        }
    }
    IpdStudy::from_columns(study_id, treatment_version, cfg.covariate_names(), xs, ms, Some(ys), cols)
}

/// Population over which the oracle averages.
#[derive(Debug, Clone, Copy)]
pub enum TargetPopulation<'a> {
    Distribution(&'a [CovariateSpec]),
    /// Empirical distribution of a study's covariate rows.
    Rows(&'a IpdStudy<f64>),
}

/// Monte Carlo value of E[Y(x, M(x*))] − E[Y(x, M(x))] in the target
/// population under the mechanisms of `cfg`, on the measured outcome scale.
///
/// The two counterfactual means use independent draws. Returns the estimate
/// and its Monte Carlo standard error.
pub fn true_nie_oracle(cfg: &DgpConfig, target: TargetPopulation<'_>, x: u8, x_star: u8, mc_n: usize, seed: u64) -> Result<(f64, f64)> {
    cfg.validate()?;
    if mc_n < MIN_ORACLE_DRAWS {
        return Err(Error::InvalidArgument(format!("mc_n must be at least {MIN_ORACLE_DRAWS}, got {mc_n}")));
    }
    if x > 1 || x_star > 1 {
        return Err(Error::InvalidArgument("treatment levels must be 0 or 1".into()));
    }
    let names = cfg.covariate_names();
    let columns: Option<Vec<&[f64]>> = match target {
        TargetPopulation::Distribution(specs) => {
            if specs.iter().map(|c| &c.name).ne(names.iter()) {
                return Err(Error::CovariateSchema("target distribution covariates differ from the mechanism's".into()));
            }
            for c in specs {
                c.dist.check(&c.name)?;
            }
            None
        }
        TargetPopulation::Rows(study) => Some(
            names
                .iter()
                .map(|n| study.covariate(n).ok_or_else(|| Error::CovariateSchema(format!("target lacks covariate `{n}`"))))
                .collect::<Result<_>>()?,
        ),
    };
    let (xf, xs) = (f64::from(x), f64::from(x_star));
    const CHUNK: usize = 1 << 14;
    let chunks = mc_n.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = rng::stream(seed, rng::stream_id("oracle", c as u64));
            let mut l = vec![0.0; names.len()];
            let mut draw = |g: &mut StreamRng, level: f64| {
                match (&columns, target) {
                    (Some(cols), TargetPopulation::Rows(study)) => {
                        let i = g.random_range(0..study.len());
                        for (v, col) in l.iter_mut().zip(cols) {
                            *v = col[i];
                        }
                    }
                    (_, TargetPopulation::Distribution(specs)) => {
                        for (v, c) in l.iter_mut().zip(specs) {
                            *v = c.dist.draw(g);
                        }
                    }
                    _ => unreachable!(),
                }
                let u = cfg.draw_latent(g);
                if matches!(target, TargetPopulation::Distribution(_)) {
                    cfg.shift_covariates(&mut l, u);
                }
                let m = cfg.mediator_mean(level, &l) + cfg.sigma_m * g.sample::<f64, _>(StandardNormal);
                cfg.outcome_mean(xf, m, &l, u) + cfg.sigma_y * g.sample::<f64, _>(StandardNormal)
            };
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in (c * CHUNK)..((c + 1) * CHUNK).min(mc_n) {
                let d = draw(&mut g, xs) - draw(&mut g, xf);
                s += d;
                ss += d * d;
            }
            (s, ss)
        })
        .collect();
    let (s, ss) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = mc_n as f64;
    let m = s / n;
    let var = (ss - n * m * m) / (n - 1.0);
    Ok((m * cfg.scale_y, var.max(0.0).sqrt() / n.sqrt() * cfg.scale_y))
}

/// Exposure proxy used by the admission-criteria scenario.
pub const APPENDIX1_EXPOSURE: &str = "bp";
pub const APPENDIX1_N: usize = 10_000;

fn appendix1_study(id: &str, age: (f64, f64), g: &mut StreamRng) -> Result<IpdStudy<f64>> {
    let (a, b, c) = (0.1, 1.0, 0.05);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let ages = Uniform::new(age.0, age.1).expect("valid age range");
    let n = APPENDIX1_N;
    let (mut xs, mut ms, mut ys, mut agec, mut bpc) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let age = ages.sample(g);
        let bp = 80.0 + 0.8 * age + 5.0 * noise.sample(g);
        let x = if g.random_bool(0.5) { 1.0 } else { 0.0 };
        let m = 2.0 + a * bp + noise.sample(g);
        let y = 10.0 + c * bp + b * m + 2.0 * noise.sample(g);
        xs.push(x);
        ms.push(m);
        ys.push(y);
        agec.push(age);
        bpc.push(bp);
    }
    IpdStudy::from_columns(id, "standard", vec!["age".into(), APPENDIX1_EXPOSURE.into()], xs, ms, Some(ys), vec![agec, bpc])
}

/// Two studies with identical mechanisms on a continuous exposure (blood
/// pressure) whose spread differs only through the admitted age range:
/// 60–80 years in the narrow study, 40–80 in the wide one.
pub fn appendix1_scenario(seed: u64) -> Result<(IpdStudy<f64>, IpdStudy<f64>)> {
    let narrow = appendix1_study("narrow", (60.0, 80.0), &mut rng::stream(seed, rng::stream_id("appendix1", 0)))?;
    let wide = appendix1_study("wide", (40.0, 80.0), &mut rng::stream(seed, rng::stream_id("appendix1", 1)))?;
    Ok((narrow, wide))
}

/// Unstandardized and standardized indirect effects of two studies on the
/// same continuous exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationContrast {
    pub exposure: String,
    pub study_ids: [String; 2],
    pub unstandardized: [Estimate<f64>; 2],
    pub standardized: [f64; 2],
    /// Unstandardized difference over its joint standard error.
    pub unstandardized_z: f64,
    pub unstandardized_agree: bool,
    /// standardized[1] / standardized[0].
    pub standardized_ratio: f64,
    /// [σ̂(exposure)/σ̂(Y)] of the second study over that of the first.
    pub driver_sd_ratio: f64,
    /// Standardized estimates differ by more than 10% while the unstandardized agree.
    pub divergence: bool,
}

pub fn standardization_contrast(first: &IpdStudy<f64>, second: &IpdStudy<f64>, exposure: &str) -> Result<StandardizationContrast> {
    let exp = Exposure::Covariate(exposure.to_string());
    let mut unstd = Vec::with_capacity(2);
    let mut std = Vec::with_capacity(2);
    let mut drivers = Vec::with_capacity(2);
    for s in [first, second] {
        let wm = fit_working_models_with(s, &exp, &[], ModelTerms::main_effects())?;
        let p = product_of_coefficients(&wm)?;
        let y = s.y().ok_or_else(|| Error::MissingOutcome(s.study_id().to_string()))?;
        let sd_y = sample_sd(y);
        if !(sd_y > 0.0) {
            return Err(Error::DegenerateVariance("y".into()));
        }
        let sd_x = sample_sd(s.covariate(exposure).ok_or_else(|| Error::UnknownCovariate(exposure.to_string()))?);
        std.push(p.value * sd_x / sd_y);
        drivers.push(sd_x / sd_y);
        unstd.push(p);
    }
    let z = (unstd[1].value - unstd[0].value) / (unstd[0].variance() + unstd[1].variance()).sqrt();
    let agree = z.abs() <= 2.0;
    let ratio = std[1] / std[0];
    Ok(StandardizationContrast {
        exposure: exposure.to_string(),
        study_ids: [first.study_id().to_string(), second.study_id().to_string()],
        unstandardized: [unstd[0], unstd[1]],
        standardized: [std[0], std[1]],
        unstandardized_z: z,
        unstandardized_agree: agree,
        standardized_ratio: ratio,
        driver_sd_ratio: drivers[1] / drivers[0],
        divergence: agree && (ratio - 1.0).abs() > 0.1,
    })
}

/// Between-study law of the study-specific coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Heterogeneity {
    None,
    /// α₁ shifted so that α₁β₂ varies with variance `tau2`.
    IndirectEffect { tau2: f64 },
    /// (α₁, β₂) bivariate normal with covariance `sigma` (row-major).
    Paths { sigma: [[f64; 2]; 2] },
}

/// Aggregate and correlation records of a simulated collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRecords {
    pub aggregates: Vec<AggregateMediationRecord<f64>>,
    pub correlations: Vec<CorrelationRecord<f64>>,
    /// True (α₁, β₂) of each study.
    pub true_paths: Vec<(f64, f64)>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        sab += (p - ma) * (q - mb);
        saa += (p - ma) * (p - ma);
        sbb += (q - mb) * (q - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Simulates `k` studies from `cfg` with study-specific paths drawn from
/// `heterogeneity`, fits main-effects working models adjusting for every
/// covariate, and emits one aggregate and one correlation record per study.
pub fn generate_aggregates(cfg: &DgpConfig, k: usize, heterogeneity: Heterogeneity, seed: u64) -> Result<SimulatedRecords> {
    simulate(cfg, k, heterogeneity, seed, false).map(|(_, records)| records)
}

/// As [`generate_aggregates`], also returning the participant-level studies.
pub fn simulate_collection(cfg: &DgpConfig, k: usize, heterogeneity: Heterogeneity, seed: u64) -> Result<(Vec<IpdStudy<f64>>, SimulatedRecords)> {
    simulate(cfg, k, heterogeneity, seed, true)
}

fn simulate(cfg: &DgpConfig, k: usize, heterogeneity: Heterogeneity, seed: u64, keep: bool) -> Result<(Vec<IpdStudy<f64>>, SimulatedRecords)> {
    cfg.validate()?;
    if k < 2 {
        return Err(Error::InsufficientStudies { needed: 2, got: k });
    }
    let chol = match heterogeneity {
        Heterogeneity::Paths { sigma } => {
            let m = Matrix2::new(sigma[0][0], sigma[0][1], sigma[1][0], sigma[1][1]);
            if sigma[0][1] != sigma[1][0] {
                return Err(Error::InvalidArgument("between-study covariance must be symmetric".into()));
            }
            Some(if m == Matrix2::zeros() {
                m
            } else {
                m.cholesky().ok_or_else(|| Error::InvalidArgument("between-study covariance is not positive definite".into()))?.l()
            })
        }
        Heterogeneity::IndirectEffect { tau2 } => {
            if !(tau2 >= 0.0 && tau2.is_finite()) {
                return Err(Error::InvalidArgument(format!("tau2 must be nonnegative, got {tau2}")));
            }
            if tau2 > 0.0 && cfg.beta2 == 0.0 {
                return Err(Error::InvalidArgument("indirect-effect heterogeneity needs beta2 != 0".into()));
            }
            None
        }
        Heterogeneity::None => None,
    };
    let adjust = cfg.covariate_names();
    let out: Vec<_> = (0..k)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut g = rng::stream(seed, rng::stream_id("generate_aggregates", i as u64));
            let mut c = cfg.clone();
            c.seed = g.random();
            match heterogeneity {
                Heterogeneity::None => {}
                Heterogeneity::IndirectEffect { tau2 } => {
                    let u: f64 = g.sample(StandardNormal);
                    c.alpha1 += tau2.sqrt() * u / cfg.beta2;
                }
                Heterogeneity::Paths { .. } => {
                    let l = chol.expect("set above");
                    let z = nalgebra::Vector2::new(g.sample::<f64, _>(StandardNormal), g.sample(StandardNormal));
                    let d = l * z;
                    c.alpha1 += d[0];
                    c.beta2 += d[1];
                }
            }
            let id = format!("s{:03}", i + 1);
            let study = generate_study(&c, &id, "standard")?;
            let wm = fit_working_models(&study, &adjust, false)?;
            let (a, b) = (wm.alpha1(), wm.beta2());
            let agg = AggregateMediationRecord::new(&id, a.value * b.value, sobel_se(a, b), study.len() as u64)?
                .with_paths(a.value, a.se, b.value, b.se)?;
            let y = study.y().expect("generated with outcome");
            let r = [correlation(study.x(), y), correlation(study.x(), study.m()), correlation(study.m(), y)];
            let cor = CorrelationRecord::new(&id, r.map(Some), study.len() as u64)?;
            Ok((keep.then_some(study), agg, cor, (c.alpha1, c.beta2)))
        })
        .collect::<Result<_>>()?;
    let mut studies = Vec::with_capacity(k);
    let mut records = SimulatedRecords { aggregates: vec![], correlations: vec![], true_paths: vec![] };
    for (s, a, c, p) in out {
        studies.extend(s);
        records.aggregates.push(a);
        records.correlations.push(c);
        records.true_paths.push(p);
    }
    Ok((studies, records))
}

/// Removes each correlation independently with probability `p`. A record
/// that would lose all three keeps one, chosen at random.
pub fn mcar_delete(records: &[CorrelationRecord<f64>], p: f64, seed: u64) -> Result<Vec<CorrelationRecord<f64>>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("deletion probability must lie in [0, 1], got {p}")));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut g = rng::stream(seed, rng::stream_id("mcar", i as u64));
            let mut drop = [0; 3].map(|_| g.random_bool(p));
            for (d, v) in drop.iter_mut().zip(r.r()) {
                *d &= v.is_some();
            }
            if (0..3).all(|j| drop[j] || r.r()[j].is_none()) {
                let present = r.observed();
                drop[present[g.random_range(0..present.len())]] = false;
            }
            r.without(drop)
        })
        .collect()
}
