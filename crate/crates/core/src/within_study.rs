//! Per-study regressions: least squares, the mediator and outcome working
//! models, and product-of-coefficients indirect effects.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Estimate, IpdStudy};
use crate::scalar::sample_sd;
use crate::Real;

/// Singular values below this fraction of the largest one are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares fit of one linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearFit<T: Real = f64> {
    pub coefficients: DVector<T>,
    /// `residual_variance * (X'X)^-1`
    pub covariance: DMatrix<T>,
    /// Residual sum of squares over `n - p`.
    pub residual_variance: T,
    pub n: usize,
}

impl<T: Real> LinearFit<T> {
    pub fn se(&self, i: usize) -> T {
        self.covariance[(i, i)].max(T::zero()).sqrt()
    }

    pub fn estimate(&self, i: usize) -> Estimate<T> {
        Estimate { value: self.coefficients[i], se: self.se(i) }
    }
}

/// Ordinary least squares through a Householder QR of the design followed by
/// an SVD of the triangular factor.
pub fn fit_ols<T: Real>(design: &DMatrix<T>, response: &DVector<T>) -> Result<LinearFit<T>> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::InvalidArgument(format!("design has {n} rows but response has {}", response.len())));
    }
    if n <= p {
        return Err(Error::SingularDesign { context: None });
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let mut qty_full = response.clone();
    qr.q_tr_mul(&mut qty_full);
    let qty = qty_full.rows(0, p).into_owned();
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * T::tol(RANK_TOLERANCE);
    if !(smax > T::zero()) || svd.singular_values.iter().any(|&s| !(s > cutoff)) {
        return Err(Error::SingularDesign { context: None });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let inv_s = svd.singular_values.map(|s| T::one() / s);
    // beta = V S^-1 U' Q'y
    let mut uty = u.tr_mul(&qty);
    uty.component_mul_assign(&inv_s);
    let coefficients = v_t.tr_mul(&uty);

    let resid = response - design * &coefficients;
    let rss = resid.dot(&resid);
    let residual_variance = rss / T::from_usize_lossy(n - p);
    // (X'X)^-1 = V S^-2 V'
    let mut vs = v_t.transpose();
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        col *= inv_s[j];
    }
    let covariance = (&vs * vs.transpose()) * residual_variance;
    Ok(LinearFit { coefficients, covariance, residual_variance, n })
}

/// Which column plays the role of the exposure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    /// The randomized treatment indicator.
    #[default]
    Treatment,
    /// A continuous covariate (an exposure proxy), removed from the adjust set.
    Covariate(String),
}

/// Optional product terms of the working models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ModelTerms {
    /// X·M in the outcome model.
    pub exposure_mediator: bool,
    /// X·L (each adjusted covariate) in the mediator model.
    pub exposure_covariate: bool,
}

impl ModelTerms {
    pub fn main_effects() -> Self {
        Self::default()
    }

    pub fn with_interaction(interaction: bool) -> Self {
        Self { exposure_mediator: interaction, exposure_covariate: false }
    }

    pub fn is_linear(&self) -> bool {
        !self.exposure_mediator && !self.exposure_covariate
    }
}

/// Mediator and outcome regressions of one study.
///
/// Mediator model columns: `1, X, L.., [X·L..]`.
/// Outcome model columns: `1, X, M, L.., [X·M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WorkingModels<T: Real = f64> {
    pub study_id: String,
    pub exposure: Exposure,
    pub adjust: Vec<String>,
    pub terms: ModelTerms,
    pub mediator: LinearFit<T>,
    pub outcome: LinearFit<T>,
}

/// Mediator regression alone, usable on X–M studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MediatorModel<T: Real = f64> {
    pub study_id: String,
    pub exposure: Exposure,
    pub adjust: Vec<String>,
    pub exposure_covariate: bool,
    pub fit: LinearFit<T>,
}

impl<T: Real> MediatorModel<T> {
    pub fn alpha0(&self) -> T {
        self.fit.coefficients[0]
    }
    pub fn alpha1(&self) -> Estimate<T> {
        self.fit.estimate(1)
    }
    pub fn alpha2(&self) -> &[T] {
        &self.fit.coefficients.as_slice()[2..2 + self.adjust.len()]
    }
    pub fn alpha_xl(&self) -> Option<&[T]> {
        let d = self.adjust.len();
        self.exposure_covariate.then(|| &self.fit.coefficients.as_slice()[2 + d..2 + 2 * d])
    }

    /// E(M | X = x, L = l) under the fitted model.
    pub fn predict(&self, x: T, l: &[T]) -> T {
        let mut m = self.alpha0() + self.fit.coefficients[1] * x;
        for (c, v) in self.alpha2().iter().zip(l) {
            m += *c * *v;
        }
        if let Some(xl) = self.alpha_xl() {
            for (c, v) in xl.iter().zip(l) {
                m += *c * x * *v;
            }
        }
        m
    }
}

/// Outcome regression alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OutcomeModel<T: Real = f64> {
    pub study_id: String,
    pub exposure: Exposure,
    pub adjust: Vec<String>,
    pub exposure_mediator: bool,
    pub fit: LinearFit<T>,
}

impl<T: Real> OutcomeModel<T> {
    pub fn beta0(&self) -> T {
        self.fit.coefficients[0]
    }
    pub fn beta1(&self) -> T {
        self.fit.coefficients[1]
    }
    pub fn beta2(&self) -> Estimate<T> {
        self.fit.estimate(2)
    }
    pub fn beta3(&self) -> &[T] {
        &self.fit.coefficients.as_slice()[3..3 + self.adjust.len()]
    }
    pub fn beta_xm(&self) -> Option<T> {
        self.exposure_mediator.then(|| self.fit.coefficients[3 + self.adjust.len()])
    }

    /// E(Y | X = x, M = m, L = l) under the fitted model.
    pub fn predict(&self, x: T, m: T, l: &[T]) -> T {
        let mut y = self.beta0() + self.beta1() * x + self.fit.coefficients[2] * m;
        for (c, v) in self.beta3().iter().zip(l) {
            y += *c * *v;
        }
        if let Some(xm) = self.beta_xm() {
            y += xm * x * m;
        }
        y
    }

    /// Outcome mean with the mediator replaced by its conditional mean `m_bar`.
    /// Exact integration over the mediator distribution because the outcome
    /// model is linear in M.
    pub fn integrate(&self, x: T, m_bar: T, l: &[T]) -> T {
        self.predict(x, m_bar, l)
    }
}

impl<T: Real> WorkingModels<T> {
    pub fn mediator_model(&self) -> MediatorModel<T> {
        MediatorModel {
            study_id: self.study_id.clone(),
            exposure: self.exposure.clone(),
            adjust: self.adjust.clone(),
            exposure_covariate: self.terms.exposure_covariate,
            fit: self.mediator.clone(),
        }
    }

    pub fn outcome_model(&self) -> OutcomeModel<T> {
        OutcomeModel {
            study_id: self.study_id.clone(),
            exposure: self.exposure.clone(),
            adjust: self.adjust.clone(),
            exposure_mediator: self.terms.exposure_mediator,
            fit: self.outcome.clone(),
        }
    }

    /// α₁: exposure coefficient of the mediator model.
    pub fn alpha1(&self) -> Estimate<T> {
        self.mediator.estimate(1)
    }

    /// β₂: mediator coefficient of the outcome model.
    pub fn beta2(&self) -> Estimate<T> {
        self.outcome.estimate(2)
    }

    /// Interaction coefficient, present only when the X·M term was fitted.
    pub fn beta_xm(&self) -> Option<T> {
        self.terms.exposure_mediator.then(|| self.outcome.coefficients[3 + self.adjust.len()])
    }
}

fn exposure_column<'a, T: Real>(study: &'a IpdStudy<T>, exposure: &Exposure) -> Result<&'a [T]> {
    match exposure {
        Exposure::Treatment => Ok(study.x()),
        Exposure::Covariate(name) => study.covariate(name).ok_or_else(|| Error::UnknownCovariate(name.clone())),
    }
}

fn adjust_columns<'a, T: Real>(study: &'a IpdStudy<T>, exposure: &Exposure, adjust: &[String]) -> Result<Vec<&'a [T]>> {
    adjust
        .iter()
        .map(|name| {
            if matches!(exposure, Exposure::Covariate(e) if e == name) {
                return Err(Error::InvalidArgument(format!("`{name}` is the exposure and cannot be adjusted for")));
            }
            study.covariate(name).ok_or_else(|| Error::UnknownCovariate(name.clone()))
        })
        .collect()
}

fn with_context<T>(r: Result<T>, id: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::SingularDesign { .. } => Error::SingularDesign { context: Some(id.to_string()) },
        other => other,
    })
}

/// Regresses M on `1, X, L_adjust` (plus `X·L_adjust` when requested).
pub fn fit_mediator_model<T: Real>(
    study: &IpdStudy<T>,
    exposure: &Exposure,
    adjust: &[String],
    exposure_covariate: bool,
) -> Result<MediatorModel<T>> {
    let x = exposure_column(study, exposure)?;
    let ls = adjust_columns(study, exposure, adjust)?;
    let n = study.len();
    let p = 2 + ls.len() * if exposure_covariate { 2 } else { 1 };
    let design = DMatrix::from_fn(n, p, |i, j| match j {
        0 => T::one(),
        1 => x[i],
        j if j < 2 + ls.len() => ls[j - 2][i],
        j => x[i] * ls[j - 2 - ls.len()][i],
    });
    let fit = with_context(fit_ols(&design, &DVector::from_column_slice(study.m())), study.study_id())?;
    Ok(MediatorModel {
        study_id: study.study_id().to_string(),
        exposure: exposure.clone(),
        adjust: adjust.to_vec(),
        exposure_covariate,
        fit,
    })
}

/// Regresses Y on `1, X, M, L_adjust` (plus `X·M` when requested).
pub fn fit_outcome_model<T: Real>(
    study: &IpdStudy<T>,
    exposure: &Exposure,
    adjust: &[String],
    exposure_mediator: bool,
) -> Result<OutcomeModel<T>> {
    let y = study.y().ok_or_else(|| Error::MissingOutcome(study.study_id().to_string()))?;
    let x = exposure_column(study, exposure)?;
    let m = study.m();
    let ls = adjust_columns(study, exposure, adjust)?;
    let n = study.len();
    let p = 3 + ls.len() + usize::from(exposure_mediator);
    let design = DMatrix::from_fn(n, p, |i, j| match j {
        0 => T::one(),
        1 => x[i],
        2 => m[i],
        j if j < 3 + ls.len() => ls[j - 3][i],
        _ => x[i] * m[i],
    });
    let fit = with_context(fit_ols(&design, &DVector::from_column_slice(y)), study.study_id())?;
    Ok(OutcomeModel {
        study_id: study.study_id().to_string(),
        exposure: exposure.clone(),
        adjust: adjust.to_vec(),
        exposure_mediator,
        fit,
    })
}

/// Fits both working models with the treatment as exposure.
pub fn fit_working_models<T: Real>(study: &IpdStudy<T>, adjust: &[String], interaction: bool) -> Result<WorkingModels<T>> {
    fit_working_models_with(study, &Exposure::Treatment, adjust, ModelTerms::with_interaction(interaction))
}

pub fn fit_working_models_with<T: Real>(
    study: &IpdStudy<T>,
    exposure: &Exposure,
    adjust: &[String],
    terms: ModelTerms,
) -> Result<WorkingModels<T>> {
    if !study.has_outcome() {
        return Err(Error::MissingOutcome(study.study_id().to_string()));
    }
    let mediator = fit_mediator_model(study, exposure, adjust, terms.exposure_covariate)?;
    let outcome = fit_outcome_model(study, exposure, adjust, terms.exposure_mediator)?;
    Ok(WorkingModels {
        study_id: study.study_id().to_string(),
        exposure: exposure.clone(),
        adjust: adjust.to_vec(),
        terms,
        mediator: mediator.fit,
        outcome: outcome.fit,
    })
}

/// First-order (Sobel) standard error of a product of two estimates.
pub fn sobel_se<T: Real>(a: Estimate<T>, b: Estimate<T>) -> T {
    (a.value * a.value * b.se * b.se + b.value * b.value * a.se * a.se).sqrt()
}

/// α̂₁·β̂₂ with its Sobel standard error.
pub fn product_of_coefficients<T: Real>(models: &WorkingModels<T>) -> Result<Estimate<T>> {
    if !models.terms.is_linear() {
        return Err(Error::NonlinearModel);
    }
    let a = models.alpha1();
    let b = models.beta2();
    Ok(Estimate { value: a.value * b.value, se: sobel_se(a, b) })
}

/// Product of coefficients rescaled by σ̂(exposure)/σ̂(Y) of the study.
pub fn standardized_indirect<T: Real>(study: &IpdStudy<T>, models: &WorkingModels<T>) -> Result<T> {
    let raw = product_of_coefficients(models)?;
    let y = study.y().ok_or_else(|| Error::MissingOutcome(study.study_id().to_string()))?;
    let sd_y = sample_sd(y);
    if !(sd_y > T::zero()) {
        return Err(Error::DegenerateVariance("y".into()));
    }
    let sd_x = sample_sd(exposure_column(study, &models.exposure)?);
    Ok(standardize(raw.value, sd_x, sd_y))
}

/// `a·b·sd_x/sd_y`.
pub fn standardize<T: Real>(product: T, sd_x: T, sd_y: T) -> T {
    product * sd_x / sd_y
}
