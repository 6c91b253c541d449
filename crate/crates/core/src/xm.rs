//! Integration of X–M-only studies: the outcome model of a mediation study k
//! is combined with the mediator model of a study j, and the composition is
//! averaged over the covariates of either study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{fixed_effect_meta, random_effect_meta};
use crate::model::{align_schema, IpdStudy, MetaResult, RandomMethod};
use crate::transport::{bootstrap_sd, columns_for, contrast, counterfactual_means, resample_indices, TransportOptions};
use crate::within_study::{fit_mediator_model, fit_outcome_model, Exposure};
use crate::Real;

/// Assumption made whenever an X–M study supplies the mediator model.
pub const COVARIATE_SUFFICIENCY: &str =
    "baseline covariates measured in the X-M study suffice to adjust for mediator-outcome confounding";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridEstimand {
    /// Indirect effect in the mediator study's population.
    EtaJ,
    /// Indirect effect in the outcome study's population.
    EtaK,
    /// Treatment-version variant standardized to the outcome study.
    GammaJk,
    /// Treatment-version variant standardized to the mediator study.
    DeltaJk,
}

impl HybridEstimand {
    pub fn standardizes_to_mediator_study(self) -> bool {
        matches!(self, HybridEstimand::EtaJ | HybridEstimand::DeltaJk)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridEstimate<T = f64> {
    /// Study supplying E(Y | X, L, M).
    pub outcome_study: String,
    /// Study supplying the mediator distribution given X and L.
    pub mediator_study: String,
    pub standardize_to: String,
    pub estimand: HybridEstimand,
    pub value: T,
    pub se: T,
    pub x: u8,
    pub x_star: u8,
    pub counterfactual_means: [[T; 2]; 2],
    pub outcome_version: String,
    pub mediator_version: String,
    pub adjust: Vec<String>,
    pub bootstrap_replicates: usize,
    pub bootstrap_failed: usize,
    pub declared_assumptions: Vec<String>,
}

fn hybrid_means<T: Real>(
    outcome_study: &IpdStudy<T>,
    mediator_study: &IpdStudy<T>,
    to_mediator: bool,
    opts: &TransportOptions,
) -> Result<[[T; 2]; 2]> {
    let adjust = outcome_study.covariate_names().to_vec();
    let outcome = fit_outcome_model(outcome_study, &Exposure::Treatment, &adjust, opts.terms.exposure_mediator)?;
    let mediator = fit_mediator_model(mediator_study, &Exposure::Treatment, &adjust, opts.terms.exposure_covariate)?;
    let target = if to_mediator { mediator_study } else { outcome_study };
    let cols = columns_for(target, &adjust)?;
    Ok(counterfactual_means(&mediator, &outcome, &cols, target.len()))
}

/// Estimates η(j), η(k), γ(j,k) or δ(j,k). The four share one estimator;
/// they differ in the averaging population and in treatment-version labels.
/// Standard errors come from resampling both studies independently.
pub fn hybrid_nie<T: Real>(
    outcome_study: &IpdStudy<T>,
    mediator_study: &IpdStudy<T>,
    estimand: HybridEstimand,
    x: u8,
    x_star: u8,
    opts: &TransportOptions,
) -> Result<HybridEstimate<T>> {
    if x > 1 || x_star > 1 {
        return Err(Error::InvalidArgument("treatment levels must be 0 or 1".into()));
    }
    if !outcome_study.has_outcome() {
        return Err(Error::MissingOutcome(outcome_study.study_id().to_string()));
    }
    let mediator_study = align_schema(outcome_study, mediator_study)?;
    let to_mediator = estimand.standardizes_to_mediator_study();
    let means = hybrid_means(outcome_study, &mediator_study, to_mediator, opts)?;

    let label = format!("hybrid:{}:{}", outcome_study.study_id(), mediator_study.study_id());
    let (se, failed) = bootstrap_sd(opts.bootstrap, opts.seed, &label, |g| {
        let k = outcome_study.resample(&resample_indices(g, outcome_study.len()));
        let j = mediator_study.resample(&resample_indices(g, mediator_study.len()));
        Ok(contrast(&hybrid_means(&k, &j, to_mediator, opts)?, x, x_star))
    })?;

    let mut declared: Vec<String> = crate::transport::DECLARED_ASSUMPTIONS.iter().map(|s| s.to_string()).collect();
    declared.push(COVARIATE_SUFFICIENCY.to_string());
    Ok(HybridEstimate {
        outcome_study: outcome_study.study_id().to_string(),
        mediator_study: mediator_study.study_id().to_string(),
        standardize_to: if to_mediator { mediator_study.study_id() } else { outcome_study.study_id() }.to_string(),
        estimand,
        value: contrast(&means, x, x_star),
        se,
        x,
        x_star,
        counterfactual_means: means,
        outcome_version: outcome_study.treatment_version().to_string(),
        mediator_version: mediator_study.treatment_version().to_string(),
        adjust: outcome_study.covariate_names().to_vec(),
        bootstrap_replicates: opts.bootstrap,
        bootstrap_failed: failed,
        declared_assumptions: declared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "scheme", content = "method")]
pub enum SummaryScheme {
    Fixed,
    Random(RandomMethod),
}

/// Pooled hybrid estimates and the population the summary refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSummary<T = f64> {
    pub estimand: HybridEstimand,
    /// Study whose population the summary describes.
    pub target_population: String,
    pub meta: MetaResult<T>,
}

/// Pools hybrid estimates that share estimand, standardization target and contrast.
pub fn summarize_eta<T: Real>(estimates: &[HybridEstimate<T>], estimand: HybridEstimand, scheme: SummaryScheme) -> Result<EtaSummary<T>> {
    let first = estimates.first().ok_or(Error::InsufficientStudies { needed: 1, got: 0 })?;
    if estimates
        .iter()
        .any(|e| e.estimand != estimand || e.standardize_to != first.standardize_to || e.x != first.x || e.x_star != first.x_star)
    {
        return Err(Error::MixedEstimand);
    }
    let y: Vec<T> = estimates.iter().map(|e| e.value).collect();
    let v: Vec<T> = estimates.iter().map(|e| e.se * e.se).collect();
    let meta = match scheme {
        SummaryScheme::Fixed => fixed_effect_meta(&y, &v)?,
        SummaryScheme::Random(m) => random_effect_meta(&y, &v, m)?,
    };
    Ok(EtaSummary { estimand, target_population: first.standardize_to.clone(), meta })
}
