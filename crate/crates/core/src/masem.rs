//! Parameter-based and correlation-based meta-analytic structural equation
//! modeling for the single-mediator diagram.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{multivariate_re_meta, random_effect_meta, MultivariateMetaResult};
use crate::model::{correlation_matrix, AggregateMediationRecord, CorrelationRecord, MetaResult, PathModel, PsdCheck, RandomMethod};
use crate::optim::nelder_mead;
use crate::within_study::sobel_se;
use crate::model::Estimate;
use crate::Real;

/// Pools the reported indirect effects with a random-effects model.
pub fn parameter_based_masem<T: Real>(records: &[AggregateMediationRecord<T>], method: RandomMethod) -> Result<MetaResult<T>> {
    let y: Vec<T> = records.iter().map(|r| r.theta().value).collect();
    let v: Vec<T> = records.iter().map(|r| r.theta().variance()).collect();
    random_effect_meta(&y, &v, method)
}

/// Contrast between the product of separately pooled paths, ā·b̄, and the
/// pooled product of per-study coefficients. The two need not agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProductContrast<T = f64> {
    pub a_bar: T,
    pub b_bar: T,
    pub product_of_pooled_paths: T,
    pub pooled_products: T,
    pub difference: T,
    pub k_with_paths: usize,
}

/// Computes [`PathProductContrast`] over the records that report both paths.
/// Returns `None` when fewer than two records do.
pub fn path_product_contrast<T: Real>(
    records: &[AggregateMediationRecord<T>],
    method: RandomMethod,
) -> Result<Option<PathProductContrast<T>>> {
    let with: Vec<_> = records.iter().filter(|r| r.paths().is_some()).cloned().collect();
    if with.len() < 2 {
        return Ok(None);
    }
    let pool = |f: &dyn Fn(&AggregateMediationRecord<T>) -> Estimate<T>| {
        let e: Vec<Estimate<T>> = with.iter().map(f).collect();
        random_effect_meta(&e.iter().map(|e| e.value).collect::<Vec<_>>(), &e.iter().map(|e| e.variance()).collect::<Vec<_>>(), method)
    };
    let a_bar = pool(&|r| r.a().unwrap())?.estimate;
    let b_bar = pool(&|r| r.b().unwrap())?.estimate;
    let pooled_products = parameter_based_masem(&with, method)?.estimate;
    Ok(Some(PathProductContrast {
        a_bar,
        b_bar,
        product_of_pooled_paths: a_bar * b_bar,
        pooled_products,
        difference: a_bar * b_bar - pooled_products,
        k_with_paths: with.len(),
    }))
}

/// Model-implied (XY, XM, MY) correlations of a standardized path model.
pub fn implied_correlations<T: Real>(path: &PathModel<T>) -> Result<Vector3<T>> {
    let rho = implied_unchecked(path);
    if !correlation_matrix(rho[0], rho[1], rho[2]).is_psd(T::tol(1e-12)) || path.a.abs() > T::one() {
        return Err(Error::InadmissiblePath);
    }
    Ok(rho)
}

fn implied_unchecked<T: Real>(p: &PathModel<T>) -> Vector3<T> {
    Vector3::new(p.c_prime + p.a * p.b, p.a, p.b + p.a * p.c_prime)
}

/// Structural model fitted to pooled correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralFit<T = f64> {
    pub path: PathModel<T>,
    /// Minimized WLS discrepancy.
    pub discrepancy: T,
    pub lrt_stat: T,
    pub lrt_df: usize,
    /// Delta-method standard errors of (a, b, c').
    pub se_path: [T; 3],
    pub indirect: T,
    pub se_indirect: T,
}

/// Number of free parameters of the single-mediator structural model.
pub const PATH_PARAMETERS: usize = 3;

/// `F(θ) = (ρ̂ − ρ(θ))ᵀ V⁻¹ (ρ̂ − ρ(θ))`.
pub fn discrepancy<T: Real>(rho_hat: &Vector3<T>, v_inv: &Matrix3<T>, path: &PathModel<T>) -> T {
    let e = rho_hat - implied_unchecked(path);
    e.dot(&(v_inv * e))
}

/// Jacobian of (a, b, c') with respect to (ρ_XY, ρ_XM, ρ_MY) for the
/// closed-form inverse map. Rows: a, b, c'.
pub fn inverse_map_jacobian<T: Real>(rho: &Vector3<T>) -> Result<Matrix3<T>> {
    let (xy, a, my) = (rho[0], rho[1], rho[2]);
    let d = T::one() - a * a;
    if d.abs() <= T::tol(1e-12) {
        return Err(Error::SingularPathSystem);
    }
    let b = (my - a * xy) / d;
    let c = (xy - a * my) / d;
    let two = T::lit(2.0);
    Ok(Matrix3::new(
        T::zero(),
        T::one(),
        T::zero(),
        -a / d,
        (-xy + two * a * b) / d,
        T::one() / d,
        T::one() / d,
        (-my + two * a * c) / d,
        -a / d,
    ))
}

fn solve_path<T: Real>(rho: &Vector3<T>) -> Result<PathModel<T>> {
    let (xy, a, my) = (rho[0], rho[1], rho[2]);
    let d = T::one() - a * a;
    if d.abs() <= T::tol(1e-12) {
        return Err(Error::SingularPathSystem);
    }
    Ok(PathModel { a, b: (my - a * xy) / d, c_prime: (xy - a * my) / d })
}

fn assemble<T: Real>(pooled: &MultivariateMetaResult<T>, v_inv: &Matrix3<T>, path: PathModel<T>) -> Result<StructuralFit<T>> {
    let j = inverse_map_jacobian(&implied_unchecked(&path))?;
    let cov = j * pooled.v * j.transpose();
    let se_path = [0, 1, 2].map(|i| cov[(i, i)].max(T::zero()).sqrt());
    let f = discrepancy(&pooled.rho_hat, v_inv, &path).max(T::zero());
    Ok(StructuralFit {
        path,
        discrepancy: f,
        // V is the sampling covariance of ρ̂, so the minimized discrepancy is
        // itself the likelihood-ratio statistic.
        lrt_stat: f,
        lrt_df: 3 - PATH_PARAMETERS,
        se_path,
        indirect: path.a * path.b,
        se_indirect: sobel_se(Estimate { value: path.a, se: se_path[0] }, Estimate { value: path.b, se: se_path[1] }),
    })
}

fn weight_matrix<T: Real>(v: &Matrix3<T>) -> Result<Matrix3<T>> {
    v.cholesky().map(|c| c.inverse()).ok_or(Error::InvalidWeight)
}

/// WLS fit of the single-mediator model. The model is just-identified, so
/// the minimizer solves `ρ̂ = ρ(θ)` exactly.
pub fn wls_fit<T: Real>(pooled: &MultivariateMetaResult<T>) -> Result<StructuralFit<T>> {
    let v_inv = weight_matrix(&pooled.v)?;
    let path = solve_path(&pooled.rho_hat)?;
    assemble(pooled, &v_inv, path)
}

/// Minimizes the WLS discrepancy by Nelder–Mead instead of the closed form.
pub fn wls_fit_iterative<T: Real>(pooled: &MultivariateMetaResult<T>) -> Result<StructuralFit<T>> {
    let v_inv = weight_matrix(&pooled.v)?;
    let f = |p: &[T]| discrepancy(&pooled.rho_hat, &v_inv, &PathModel { a: p[0], b: p[1], c_prime: p[2] });
    let start = [pooled.rho_hat[1], T::zero(), T::zero()];
    let min = nelder_mead(f, &start, T::lit(0.1), 1e-12, 5000);
    if !min.converged {
        return Err(Error::Convergence {
            what: "Nelder-Mead WLS fit".into(),
            iterations: min.iterations,
            last: min.x.iter().map(|v| v.f64()).collect(),
        });
    }
    assemble(pooled, &v_inv, PathModel { a: min.x[0], b: min.x[1], c_prime: min.x[2] })
}

/// Pools the correlation vectors, then fits the structural model.
pub fn correlation_based_masem<T: Real>(records: &[CorrelationRecord<T>]) -> Result<(MultivariateMetaResult<T>, StructuralFit<T>)> {
    let pooled = multivariate_re_meta(records)?;
    let fit = wls_fit(&pooled)?;
    Ok((pooled, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pooled_at(rho: Vector3<f64>, v: Matrix3<f64>) -> MultivariateMetaResult<f64> {
        MultivariateMetaResult { rho_hat: rho, v, t_hat: Matrix3::zeros(), k_studies: 2, pattern_counts: [2; 3], restricted_loglik: 0.0, iterations: 0 }
    }

    #[test]
    fn implied_values() {
        assert_eq!(implied_correlations(&PathModel::new(0.0, 0.0, 0.0)).unwrap(), Vector3::zeros());
        let r = implied_correlations(&PathModel::new(0.5, 0.4, 0.1)).unwrap();
        assert!((r - Vector3::new(0.3, 0.5, 0.45)).amax() < 1e-15);
        let full = implied_correlations(&PathModel::new(0.6f64, 0.3, 0.0)).unwrap();
        assert!((full[0] - 0.18).abs() < 1e-15);
        assert_eq!(implied_correlations(&PathModel::new(0.9, 0.9, 0.9)), Err(Error::InadmissiblePath));
    }

    #[test]
    fn round_trip_and_null() {
        let v = Matrix3::identity() * 0.01;
        let rho = implied_correlations(&PathModel::new(0.5, 0.4, 0.1)).unwrap();
        let fit = wls_fit(&pooled_at(rho, v)).unwrap();
        assert!((fit.path.a - 0.5).abs() < 1e-12 && (fit.path.b - 0.4).abs() < 1e-12 && (fit.path.c_prime - 0.1).abs() < 1e-12);
        assert!(fit.discrepancy <= 1e-12);
        assert_eq!(fit.lrt_df, 0);
        let null = wls_fit(&pooled_at(Vector3::zeros(), v)).unwrap();
        assert_eq!(null.indirect, 0.0);
    }

    #[test]
    fn closed_form_ignores_weight_scale() {
        let rho = Vector3::new(0.25, 0.4, 0.35);
        let v = Matrix3::new(0.02, 0.005, 0.001, 0.005, 0.03, 0.004, 0.001, 0.004, 0.01);
        let a = wls_fit(&pooled_at(rho, v)).unwrap();
        let b = wls_fit(&pooled_at(rho, v * 7.5)).unwrap();
        assert!((a.path.b - b.path.b).abs() < 1e-15);
        assert!((a.path.c_prime - b.path.c_prime).abs() < 1e-15);
    }

    #[test]
    fn iterative_fallback_agrees() {
        let rho = Vector3::new(0.25, 0.4, 0.35);
        let v = Matrix3::new(0.02, 0.005, 0.001, 0.005, 0.03, 0.004, 0.001, 0.004, 0.01);
        let closed = wls_fit(&pooled_at(rho, v)).unwrap();
        let iter = wls_fit_iterative(&pooled_at(rho, v)).unwrap();
        assert!((closed.path.a - iter.path.a).abs() < 1e-5);
        assert!((closed.path.b - iter.path.b).abs() < 1e-5);
        assert!((closed.path.c_prime - iter.path.c_prime).abs() < 1e-5);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let rho = Vector3::new(0.25f64, 0.4, 0.35);
        let j = inverse_map_jacobian(&rho).unwrap();
        let h = 1e-6;
        for col in 0..3 {
            let mut up = rho;
            up[col] += h;
            let mut dn = rho;
            dn[col] -= h;
            let (pu, pd) = (solve_path(&up).unwrap(), solve_path(&dn).unwrap());
            let fd = [(pu.a - pd.a) / (2.0 * h), (pu.b - pd.b) / (2.0 * h), (pu.c_prime - pd.c_prime) / (2.0 * h)];
            for row in 0..3 {
                assert!((j[(row, col)] - fd[row]).abs() < 1e-7, "({row},{col})");
            }
        }
    }

    #[test]
    fn singular_path_system() {
        let v = Matrix3::identity() * 0.01;
        assert_eq!(wls_fit(&pooled_at(Vector3::new(0.5, 1.0, 0.5), v)).unwrap_err(), Error::SingularPathSystem);
        assert_eq!(wls_fit(&pooled_at(Vector3::new(0.5, 0.2, 0.5), Matrix3::zeros())).unwrap_err(), Error::InvalidWeight);
    }

    #[test]
    fn parameter_based_homogeneous() {
        let recs: Vec<_> = (0..5).map(|i| AggregateMediationRecord::new(format!("s{i}"), 0.2f64, 0.05, 100).unwrap()).collect();
        let r = parameter_based_masem(&recs, RandomMethod::Reml).unwrap();
        assert!((r.estimate - 0.2).abs() < 1e-15);
        assert_eq!(r.tau2, 0.0);
        assert!(matches!(parameter_based_masem(&recs[..1], RandomMethod::Dl), Err(Error::InsufficientStudies { .. })));
    }

    #[test]
    fn path_product_contrast_reports_gap() {
        let recs = vec![
            AggregateMediationRecord::new("a", 0.04f64, 0.02, 100).unwrap().with_paths(0.2, 0.05, 0.2, 0.05).unwrap(),
            AggregateMediationRecord::new("b", 0.64, 0.02, 100).unwrap().with_paths(0.8, 0.05, 0.8, 0.05).unwrap(),
        ];
        let c = path_product_contrast(&recs, RandomMethod::Dl).unwrap().unwrap();
        assert!((c.product_of_pooled_paths - 0.25).abs() < 1e-12);
        assert!((c.pooled_products - 0.34).abs() < 1e-12);
        assert!(c.difference.abs() > 0.05);
    }
}
