//! Case-mix standardized natural indirect effects from participant data:
//! the indirect effect of source study k re-averaged over the covariate
//! distribution of target study j, and its population-specific pooling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::random_effect_meta;
use crate::model::{align_schema, IpdStudy, MetaResult, RandomMethod};
use crate::rng;
use crate::scalar::sample_sd;
use crate::within_study::{fit_working_models_with, Exposure, MediatorModel, ModelTerms, OutcomeModel};
use crate::Real;

/// Share of target rows inside the source range below which positivity is flagged.
pub const POSITIVITY_THRESHOLD: f64 = 0.95;

/// Default number of bootstrap replicates for standard errors.
pub const DEFAULT_BOOTSTRAP: usize = 500;

/// Identification assumptions that cannot be checked from the data and are
/// carried into every report.
pub const DECLARED_ASSUMPTIONS: [&str; 5] = [
    "consistency of counterfactual mediator and outcome under each study's treatment version",
    "within-trial ignorability of treatment given L",
    "between-trial ignorability: L contains every mediator and outcome predictor distributed differently across studies",
    "no unmeasured mediator-outcome confounding within studies given X and L",
    "within-study cross-world independence of Y(x, m) and M(x*) given L",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateOverlap {
    pub name: String,
    /// Share of target rows within the source [min, max] range.
    pub contained: f64,
}

/// Covariate support diagnostic for transporting from a source to a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub covariates: Vec<CovariateOverlap>,
    pub flagged: bool,
}

/// Per-covariate range containment of the target within the source.
pub fn check_positivity<T: Real>(source: &IpdStudy<T>, target: &IpdStudy<T>) -> Result<OverlapReport> {
    let target = align_schema(source, target)?;
    let covariates: Vec<CovariateOverlap> = source
        .covariate_names()
        .iter()
        .zip(source.covariate_columns().iter().zip(target.covariate_columns()))
        .map(|(name, (src, tgt))| {
            let lo = src.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b));
            let hi = src.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b));
            let inside = tgt.iter().filter(|&&v| v >= lo && v <= hi).count();
            CovariateOverlap { name: name.clone(), contained: inside as f64 / tgt.len().max(1) as f64 }
        })
        .collect();
    let flagged = covariates.iter().any(|c| c.contained < POSITIVITY_THRESHOLD);
    Ok(OverlapReport { covariates, flagged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMethod {
    /// Main-effects models; the standardized effect reduces to α₁β₂(x* − x).
    ClosedFormLinear,
    /// Natural-effect-model g-computation with product terms.
    NemGcomp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportOptions {
    pub terms: ModelTerms,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self { terms: ModelTerms::default(), bootstrap: DEFAULT_BOOTSTRAP, seed: 0 }
    }
}

impl TransportOptions {
    pub fn interaction(interaction: bool, seed: u64) -> Self {
        Self { terms: ModelTerms::with_interaction(interaction), seed, ..Self::default() }
    }
}

/// Standardized natural indirect effect θ(j, k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportEstimate<T = f64> {
    pub source_study: String,
    pub target_study: String,
    pub source_version: String,
    pub x: u8,
    pub x_star: u8,
    pub theta_jk: T,
    pub se: T,
    /// `counterfactual_means[a][b]` = Ê(Y(a, M(b)) | S = target).
    pub counterfactual_means: [[T; 2]; 2],
    pub method: TransportMethod,
    pub adjust: Vec<String>,
    pub terms: ModelTerms,
    pub bootstrap_replicates: usize,
    pub bootstrap_failed: usize,
    pub positivity: OverlapReport,
}

impl<T: Real> TransportEstimate<T> {
    /// θ recomputed from the stored counterfactual means.
    pub fn theta_from_means(&self) -> T {
        contrast(&self.counterfactual_means, self.x, self.x_star)
    }
}

pub(crate) fn contrast<T: Real>(means: &[[T; 2]; 2], x: u8, x_star: u8) -> T {
    means[x as usize][x_star as usize] - means[x as usize][x as usize]
}

/// Covariate columns of `target` in the order of `names`.
pub(crate) fn columns_for<'a, T: Real>(target: &'a IpdStudy<T>, names: &[String]) -> Result<Vec<&'a [T]>> {
    names
        .iter()
        .map(|n| target.covariate(n).ok_or_else(|| Error::CovariateSchema(format!("study `{}` lacks covariate `{n}`", target.study_id()))))
        .collect()
}

/// (1/N) Σ_i E(Y | x, M = E(M | x*, L_i), L_i) over the target rows, for all
/// four (x, x*) combinations. Exact integration over the mediator because
/// the outcome model is linear in M.
pub fn counterfactual_means<T: Real>(mediator: &MediatorModel<T>, outcome: &OutcomeModel<T>, target_l: &[&[T]], n: usize) -> [[T; 2]; 2] {
    let mut sums = [[T::zero(); 2]; 2];
    let mut l = vec![T::zero(); target_l.len()];
    for i in 0..n {
        for (v, col) in l.iter_mut().zip(target_l) {
            *v = col[i];
        }
        let m_bar = [mediator.predict(T::zero(), &l), mediator.predict(T::one(), &l)];
        for (a, row) in sums.iter_mut().enumerate() {
            let xa = if a == 0 { T::zero() } else { T::one() };
            for (b, cell) in row.iter_mut().enumerate() {
                *cell += outcome.integrate(xa, m_bar[b], &l);
            }
        }
    }
    let nn = T::from_usize_lossy(n);
    sums.map(|r| r.map(|s| s / nn))
}

fn check_levels(x: u8, x_star: u8) -> Result<()> {
    if x > 1 || x_star > 1 {
        return Err(Error::InvalidArgument("treatment levels must be 0 or 1".into()));
    }
    Ok(())
}

fn point_means<T: Real>(source: &IpdStudy<T>, target: &IpdStudy<T>, terms: ModelTerms) -> Result<[[T; 2]; 2]> {
    let adjust = source.covariate_names().to_vec();
    let wm = fit_working_models_with(source, &Exposure::Treatment, &adjust, terms)?;
    let cols = columns_for(target, &adjust)?;
    Ok(counterfactual_means(&wm.mediator_model(), &wm.outcome_model(), &cols, target.len()))
}

/// Bootstrap standard deviation of a statistic over resampled replicates.
/// Returns (se, failed count).
pub(crate) fn bootstrap_sd<T: Real, F>(reps: usize, seed: u64, label: &str, stat: F) -> Result<(T, usize)>
where
    F: Fn(&mut rng::StreamRng) -> Result<T> + Sync,
{
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 bootstrap replicates are required, got {reps}")));
    }
    let values: Vec<Option<T>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, rng::stream_id(label, r as u64));
            stat(&mut g).ok().filter(|v| v.is_finite())
        })
        .collect();
    let failed = values.iter().filter(|v| v.is_none()).count();
    if failed * 20 > reps {
        return Err(Error::BootstrapInstability { failed, total: reps });
    }
    let ok: Vec<T> = values.into_iter().flatten().collect();
    Ok((sample_sd(&ok), failed))
}

pub(crate) fn resample_indices(g: &mut rng::StreamRng, n: usize) -> Vec<usize> {
    (0..n).map(|_| g.random_range(0..n)).collect()
}

/// Estimates θ(j, k): the natural indirect effect of source study k had it
/// been run in the target population j.
///
/// Working models are fitted in the source with every shared covariate;
/// the standard error comes from a bootstrap over source rows with the
/// target case-mix held fixed.
pub fn standardized_nie<T: Real>(
    source: &IpdStudy<T>,
    target: &IpdStudy<T>,
    x: u8,
    x_star: u8,
    opts: &TransportOptions,
) -> Result<TransportEstimate<T>> {
    check_levels(x, x_star)?;
    if !source.has_outcome() {
        return Err(Error::MissingOutcome(source.study_id().to_string()));
    }
    let target = align_schema(source, target)?;
    let positivity = check_positivity(source, &target)?;
    let means = point_means(source, &target, opts.terms)?;
    let theta = contrast(&means, x, x_star);

    let label = format!("transport:{}:{}", source.study_id(), target.study_id());
    let (se, failed) = bootstrap_sd(opts.bootstrap, opts.seed, &label, |g| {
        let resampled = source.resample(&resample_indices(g, source.len()));
        Ok(contrast(&point_means(&resampled, &target, opts.terms)?, x, x_star))
    })?;

    Ok(TransportEstimate {
        source_study: source.study_id().to_string(),
        target_study: target.study_id().to_string(),
        source_version: source.treatment_version().to_string(),
        x,
        x_star,
        theta_jk: theta,
        se,
        counterfactual_means: means,
        method: if opts.terms.is_linear() { TransportMethod::ClosedFormLinear } else { TransportMethod::NemGcomp },
        adjust: source.covariate_names().to_vec(),
        terms: opts.terms,
        bootstrap_replicates: opts.bootstrap,
        bootstrap_failed: failed,
        positivity,
    })
}

/// Random-effects pooling of standardized effects sharing one target
/// population: the pooled mean is the indirect effect in that population and
/// τ² the residual heterogeneity after standardization.
pub fn population_specific_meta<T: Real>(estimates: &[TransportEstimate<T>], method: RandomMethod) -> Result<MetaResult<T>> {
    let first = estimates.first().ok_or(Error::InsufficientStudies { needed: 2, got: 0 })?;
    if estimates.iter().any(|e| e.target_study != first.target_study || e.x != first.x || e.x_star != first.x_star) {
        return Err(Error::MixedTarget);
    }
    let y: Vec<T> = estimates.iter().map(|e| e.theta_jk).collect();
    let v: Vec<T> = estimates.iter().map(|e| e.se * e.se).collect();
    random_effect_meta(&y, &v, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IpdRow;

    fn uniform_study(id: &str, lo: f64, hi: f64, n: usize) -> IpdStudy<f64> {
        let rows: Vec<_> = (0..n)
            .map(|i| {
                let l = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
                let x = (i % 2) as f64;
                let m = 0.5 * x + 0.2 * l + 0.1 * ((i * 7 % 11) as f64 - 5.0);
                IpdRow { x, m, y: Some(0.4 * m + 0.3 * l + 0.05 * ((i * 5 % 13) as f64 - 6.0)), l: vec![l] }
            })
            .collect();
        IpdStudy::from_rows(id, "v", vec!["l".into()], &rows).unwrap()
    }

    #[test]
    fn positivity_cases() {
        let s = uniform_study("s", 0.0, 1.0, 200);
        let same = check_positivity(&s, &s).unwrap();
        assert_eq!(same.covariates[0].contained, 1.0);
        assert!(!same.flagged);
        let wide = uniform_study("t", 0.0, 2.0, 200);
        let r = check_positivity(&s, &wide).unwrap();
        assert!((r.covariates[0].contained - 0.5).abs() < 0.01);
        assert!(r.flagged);
        let apart = uniform_study("u", 5.0, 6.0, 200);
        assert_eq!(check_positivity(&s, &apart).unwrap().covariates[0].contained, 0.0);
    }

    #[test]
    fn equal_levels_give_zero() {
        let s = uniform_study("s", 0.0, 1.0, 200);
        let t = uniform_study("t", 0.5, 2.0, 100);
        let opts = TransportOptions { bootstrap: 20, ..TransportOptions::interaction(true, 1) };
        let e = standardized_nie(&s, &t, 1, 1, &opts).unwrap();
        assert_eq!(e.theta_jk, 0.0);
        assert_eq!(e.theta_from_means(), e.theta_jk);
    }

    #[test]
    fn mixed_targets_rejected() {
        let s = uniform_study("s", 0.0, 1.0, 200);
        let t = uniform_study("t", 0.5, 2.0, 100);
        let u = uniform_study("u", 0.5, 2.0, 100);
        let opts = TransportOptions { bootstrap: 20, ..Default::default() };
        let a = standardized_nie(&s, &t, 0, 1, &opts).unwrap();
        let b = standardized_nie(&s, &u, 0, 1, &opts).unwrap();
        assert_eq!(population_specific_meta(&[a, b], RandomMethod::Dl).unwrap_err(), Error::MixedTarget);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let s = uniform_study("s", 0.0, 1.0, 50);
        let rows: Vec<_> = s.rows().map(|r| IpdRow { l: vec![r.l[0], 1.0], ..r }).collect();
        let t = IpdStudy::from_rows("t", "v", vec!["l".into(), "z".into()], &rows).unwrap();
        assert!(matches!(standardized_nie(&s, &t, 0, 1, &TransportOptions::default()), Err(Error::CovariateSchema(_))));
    }
}
