//! Shared domain types: aggregate and correlation records, participant-level
//! studies, the single-mediator path model and meta-analytic results.

use std::collections::HashMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// An estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub value: T,
    pub se: T,
}

impl<T: Real> Estimate<T> {
    pub fn variance(&self) -> T {
        self.se * self.se
    }
}

/// One study's reported indirect effect and, optionally, its two path
/// coefficients (`a`: X on M, `b`: M on Y given X) with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAggregate<T>", into = "RawAggregate<T>")]
#[serde(bound = "")]
pub struct AggregateMediationRecord<T: Real = f64> {
    study_id: String,
    theta: Estimate<T>,
    a: Option<Estimate<T>>,
    b: Option<Estimate<T>>,
    n: u64,
}

/// Flat serialized form of [`AggregateMediationRecord`], also the CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAggregate<T> {
    pub study_id: String,
    pub theta_hat: T,
    pub se_theta: T,
    pub a_hat: Option<T>,
    pub se_a: Option<T>,
    pub b_hat: Option<T>,
    pub se_b: Option<T>,
    pub n: u64,
}

fn check_se<T: Real>(id: &str, name: &str, se: T) -> Result<()> {
    if se > T::zero() && se.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(id, format!("{name} must be strictly positive, got {se}")))
    }
}

fn check_finite<T: Real>(id: &str, name: &str, v: T) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(id, format!("{name} is not finite")))
    }
}

fn pair<T: Real>(id: &str, name: &str, value: Option<T>, se: Option<T>) -> Result<Option<Estimate<T>>> {
    match (value, se) {
        (None, None) => Ok(None),
        (Some(value), Some(se)) => {
            check_finite(id, name, value)?;
            check_se(id, &format!("se of {name}"), se)?;
            Ok(Some(Estimate { value, se }))
        }
        _ => Err(Error::invalid(id, format!("{name} and its standard error must be given together"))),
    }
}

impl<T: Real> AggregateMediationRecord<T> {
    pub fn new(study_id: impl Into<String>, theta_hat: T, se_theta: T, n: u64) -> Result<Self> {
        let study_id = study_id.into();
        check_finite(&study_id, "theta_hat", theta_hat)?;
        check_se(&study_id, "se_theta", se_theta)?;
        if n == 0 {
            return Err(Error::invalid(&study_id, "sample size must be positive"));
        }
        Ok(Self { study_id, theta: Estimate { value: theta_hat, se: se_theta }, a: None, b: None, n })
    }

    /// Attaches the path coefficient estimates `a` (X→M) and `b` (M→Y | X).
    pub fn with_paths(mut self, a_hat: T, se_a: T, b_hat: T, se_b: T) -> Result<Self> {
        self.a = pair(&self.study_id, "a_hat", Some(a_hat), Some(se_a))?;
        self.b = pair(&self.study_id, "b_hat", Some(b_hat), Some(se_b))?;
        Ok(self)
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }
    pub fn theta(&self) -> Estimate<T> {
        self.theta
    }
    pub fn a(&self) -> Option<Estimate<T>> {
        self.a
    }
    pub fn b(&self) -> Option<Estimate<T>> {
        self.b
    }
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Both path estimates, when the record carries them.
    pub fn paths(&self) -> Option<(Estimate<T>, Estimate<T>)> {
        Some((self.a?, self.b?))
    }
}

impl<T: Real> TryFrom<RawAggregate<T>> for AggregateMediationRecord<T> {
    type Error = Error;

    fn try_from(raw: RawAggregate<T>) -> Result<Self> {
        let mut rec = Self::new(raw.study_id, raw.theta_hat, raw.se_theta, raw.n)?;
        rec.a = pair(&rec.study_id, "a_hat", raw.a_hat, raw.se_a)?;
        rec.b = pair(&rec.study_id, "b_hat", raw.b_hat, raw.se_b)?;
        Ok(rec)
    }
}

impl<T: Real> From<AggregateMediationRecord<T>> for RawAggregate<T> {
    fn from(r: AggregateMediationRecord<T>) -> Self {
        RawAggregate {
            study_id: r.study_id,
            theta_hat: r.theta.value,
            se_theta: r.theta.se,
            a_hat: r.a.map(|e| e.value),
            se_a: r.a.map(|e| e.se),
            b_hat: r.b.map(|e| e.value),
            se_b: r.b.map(|e| e.se),
            n: r.n,
        }
    }
}

/// Index of each pairwise correlation in correlation vectors: (XY, XM, MY).
pub const CORRELATION_NAMES: [&str; 3] = ["r_xy", "r_xm", "r_my"];

/// One study's sample correlations among X, M and Y. Any subset may be
/// missing; missing entries are `None`, never sentinel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCorrelation<T>", into = "RawCorrelation<T>")]
#[serde(bound = "")]
pub struct CorrelationRecord<T: Real = f64> {
    study_id: String,
    r: [Option<T>; 3],
    n: u64,
    sigma: Option<Matrix3<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCorrelation<T> {
    pub study_id: String,
    pub r_xy: Option<T>,
    pub r_xm: Option<T>,
    pub r_my: Option<T>,
    pub n: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<[[T; 3]; 3]>,
}

impl<T: Real> CorrelationRecord<T> {
    /// Builds a record from the (XY, XM, MY) correlations.
    pub fn new(study_id: impl Into<String>, r: [Option<T>; 3], n: u64) -> Result<Self> {
        let study_id = study_id.into();
        if n < 2 {
            return Err(Error::invalid(&study_id, "sample size must be at least 2"));
        }
        if r.iter().all(Option::is_none) {
            return Err(Error::invalid(&study_id, "no correlation present"));
        }
        for (v, name) in r.iter().zip(CORRELATION_NAMES) {
            if let Some(v) = *v {
                if !(v.is_finite() && v >= -T::one() && v <= T::one()) {
                    return Err(Error::invalid(&study_id, format!("{name} = {v} outside [-1, 1]")));
                }
            }
        }
        if let [Some(xy), Some(xm), Some(my)] = r {
            if !correlation_matrix(xy, xm, my).is_psd(T::tol(1e-10)) {
                return Err(Error::invalid(&study_id, "correlation matrix is not positive semidefinite"));
            }
        }
        Ok(Self { study_id, r, n, sigma: None })
    }

    /// Attaches a known within-study sampling covariance over (XY, XM, MY).
    /// Rows and columns of absent correlations must be zero.
    pub fn with_sigma(mut self, sigma: Matrix3<T>) -> Result<Self> {
        let tol = T::tol(1e-10);
        if (sigma - sigma.transpose()).amax() > tol {
            return Err(Error::invalid(&self.study_id, "sigma is not symmetric"));
        }
        for i in 0..3 {
            if self.r[i].is_none() {
                for j in 0..3 {
                    if sigma[(i, j)] != T::zero() || sigma[(j, i)] != T::zero() {
                        return Err(Error::invalid(&self.study_id, "sigma has nonzero entries for an absent correlation"));
                    }
                }
            } else if sigma[(i, i)] <= T::zero() {
                return Err(Error::invalid(&self.study_id, "sigma has a nonpositive variance"));
            }
        }
        if !sigma.is_psd(tol) {
            return Err(Error::invalid(&self.study_id, "sigma is not positive semidefinite"));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }
    pub fn r(&self) -> [Option<T>; 3] {
        self.r
    }
    pub fn n(&self) -> u64 {
        self.n
    }
    pub fn sigma(&self) -> Option<&Matrix3<T>> {
        self.sigma.as_ref()
    }

    /// Indices of the present correlations, in (XY, XM, MY) order.
    pub fn observed(&self) -> Vec<usize> {
        (0..3).filter(|&i| self.r[i].is_some()).collect()
    }

    /// Copy of this record with the given correlations removed.
    pub fn without(&self, drop: [bool; 3]) -> Result<Self> {
        let mut r = self.r;
        for i in 0..3 {
            if drop[i] {
                r[i] = None;
            }
        }
        let mut out = Self::new(self.study_id.clone(), r, self.n)?;
        if let Some(s) = self.sigma {
            let mut s = s;
            for i in 0..3 {
                if drop[i] {
                    for j in 0..3 {
                        s[(i, j)] = T::zero();
                        s[(j, i)] = T::zero();
                    }
                }
            }
            out = out.with_sigma(s)?;
        }
        Ok(out)
    }
}

impl<T: Real> TryFrom<RawCorrelation<T>> for CorrelationRecord<T> {
    type Error = Error;

    fn try_from(raw: RawCorrelation<T>) -> Result<Self> {
        let rec = Self::new(raw.study_id, [raw.r_xy, raw.r_xm, raw.r_my], raw.n)?;
        match raw.sigma {
            Some(s) => rec.with_sigma(Matrix3::from_fn(|i, j| s[i][j])),
            None => Ok(rec),
        }
    }
}

impl<T: Real> From<CorrelationRecord<T>> for RawCorrelation<T> {
    fn from(r: CorrelationRecord<T>) -> Self {
        RawCorrelation {
            study_id: r.study_id,
            r_xy: r.r[0],
            r_xm: r.r[1],
            r_my: r.r[2],
            n: r.n,
            sigma: r.sigma.map(|s| [0, 1, 2].map(|i| [0, 1, 2].map(|j| s[(i, j)]))),
        }
    }
}

/// Unit-diagonal correlation matrix over (X, M, Y).
pub(crate) fn correlation_matrix<T: Real>(xy: T, xm: T, my: T) -> Matrix3<T> {
    let one = T::one();
    Matrix3::new(one, xm, xy, xm, one, my, xy, my, one)
}

pub(crate) trait PsdCheck<T> {
    fn is_psd(&self, tol: T) -> bool;
}

impl<T: Real> PsdCheck<T> for Matrix3<T> {
    fn is_psd(&self, tol: T) -> bool {
        let sym = (self + self.transpose()) * T::lit(0.5);
        sym.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
    }
}

impl<T: Real> PsdCheck<T> for nalgebra::Matrix2<T> {
    fn is_psd(&self, tol: T) -> bool {
        let sym = (self + self.transpose()) * T::lit(0.5);
        sym.symmetric_eigenvalues().iter().all(|&e| e >= -tol)
    }
}

/// One participant: treatment indicator, mediator, optional outcome and the
/// baseline covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpdRow<T> {
    pub x: T,
    pub m: T,
    pub y: Option<T>,
    pub l: Vec<T>,
}

/// Participant-level data of one trial, stored by column.
///
/// Studies without an outcome (X–M studies) carry `y = None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", try_from = "IpdColumns<T>")]
pub struct IpdStudy<T: Real = f64> {
    study_id: String,
    treatment_version: String,
    covariate_names: Vec<String>,
    x: Vec<T>,
    m: Vec<T>,
    y: Option<Vec<T>>,
    covariates: Vec<Vec<T>>,
}

/// Unvalidated serialized form of [`IpdStudy`].
#[derive(Deserialize)]
struct IpdColumns<T> {
    study_id: String,
    treatment_version: String,
    covariate_names: Vec<String>,
    x: Vec<T>,
    m: Vec<T>,
    y: Option<Vec<T>>,
    covariates: Vec<Vec<T>>,
}

impl<T: Real> TryFrom<IpdColumns<T>> for IpdStudy<T> {
    type Error = Error;

    fn try_from(c: IpdColumns<T>) -> Result<Self> {
        Self::from_columns(c.study_id, c.treatment_version, c.covariate_names, c.x, c.m, c.y, c.covariates)
    }
}

impl<T: Real> IpdStudy<T> {
    pub fn from_rows(
        study_id: impl Into<String>,
        treatment_version: impl Into<String>,
        covariate_names: Vec<String>,
        rows: &[IpdRow<T>],
    ) -> Result<Self> {
        let study_id = study_id.into();
        let d = covariate_names.len();
        let has_outcome = rows.first().map(|r| r.y.is_some()).unwrap_or(false);
        let mut x = Vec::with_capacity(rows.len());
        let mut m = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(if has_outcome { rows.len() } else { 0 });
        let mut covariates = vec![Vec::with_capacity(rows.len()); d];
        for (i, row) in rows.iter().enumerate() {
            if row.l.len() != d {
                return Err(Error::CovariateSchema(format!(
                    "study `{study_id}` row {i} has {} covariates, expected {d}",
                    row.l.len()
                )));
            }
            if row.y.is_some() != has_outcome {
                return Err(Error::invalid(&study_id, format!("row {i}: outcome present in some rows only")));
            }
            x.push(row.x);
            m.push(row.m);
            if let Some(v) = row.y {
                y.push(v);
            }
            for (c, &v) in covariates.iter_mut().zip(&row.l) {
                c.push(v);
            }
        }
        Self::from_columns(study_id, treatment_version, covariate_names, x, m, has_outcome.then_some(y), covariates)
    }

    pub fn from_columns(
        study_id: impl Into<String>,
        treatment_version: impl Into<String>,
        covariate_names: Vec<String>,
        x: Vec<T>,
        m: Vec<T>,
        y: Option<Vec<T>>,
        covariates: Vec<Vec<T>>,
    ) -> Result<Self> {
        let study = Self::unchecked(study_id.into(), treatment_version.into(), covariate_names, x, m, y, covariates);
        study.validate()?;
        Ok(study)
    }

    pub(crate) fn unchecked(
        study_id: String,
        treatment_version: String,
        covariate_names: Vec<String>,
        x: Vec<T>,
        m: Vec<T>,
        y: Option<Vec<T>>,
        covariates: Vec<Vec<T>>,
    ) -> Self {
        Self { study_id, treatment_version, covariate_names, x, m, y, covariates }
    }

    fn validate(&self) -> Result<()> {
        let id = &self.study_id;
        let n = self.x.len();
        if self.covariates.len() != self.covariate_names.len() {
            return Err(Error::CovariateSchema(format!("study `{id}`: names and columns disagree")));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.covariate_names {
            if !seen.insert(name) {
                return Err(Error::CovariateSchema(format!("study `{id}`: covariate `{name}` repeated")));
            }
        }
        if self.m.len() != n
            || self.y.as_ref().is_some_and(|y| y.len() != n)
            || self.covariates.iter().any(|c| c.len() != n)
        {
            return Err(Error::invalid(id, "columns have different lengths"));
        }
        let mut arms = [0usize; 2];
        for (i, &x) in self.x.iter().enumerate() {
            if x == T::zero() {
                arms[0] += 1;
            } else if x == T::one() {
                arms[1] += 1;
            } else {
                return Err(Error::invalid(id, format!("row {i}: treatment must be 0 or 1, got {x}")));
            }
        }
        if arms.iter().any(|&c| c < 2) {
            return Err(Error::DegenerateArm(id.clone()));
        }
        let finite = |v: &[T]| v.iter().all(|z| z.is_finite());
        if !finite(&self.m) || !self.y.as_deref().map_or(true, finite) || !self.covariates.iter().all(|c| finite(c)) {
            return Err(Error::invalid(id, "non-finite value"));
        }
        Ok(())
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }
    pub fn treatment_version(&self) -> &str {
        &self.treatment_version
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
    pub fn has_outcome(&self) -> bool {
        self.y.is_some()
    }
    pub fn x(&self) -> &[T] {
        &self.x
    }
    pub fn m(&self) -> &[T] {
        &self.m
    }
    pub fn y(&self) -> Option<&[T]> {
        self.y.as_deref()
    }
    pub fn covariate_columns(&self) -> &[Vec<T>] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&[T]> {
        let idx = self.covariate_names.iter().position(|n| n == name)?;
        Some(&self.covariates[idx])
    }

    /// Covariate vector of row `i`.
    pub fn l_row(&self, i: usize) -> Vec<T> {
        self.covariates.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = IpdRow<T>> + '_ {
        (0..self.len()).map(move |i| IpdRow {
            x: self.x[i],
            m: self.m[i],
            y: self.y.as_ref().map(|y| y[i]),
            l: self.l_row(i),
        })
    }

    /// Same study restricted to (possibly repeated) row indices. Arm balance
    /// is not re-checked; model fitting reports singular designs instead.
    pub fn resample(&self, idx: &[usize]) -> Self {
        let pick = |v: &[T]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            study_id: self.study_id.clone(),
            treatment_version: self.treatment_version.clone(),
            covariate_names: self.covariate_names.clone(),
            x: pick(&self.x),
            m: pick(&self.m),
            y: self.y.as_deref().map(pick),
            covariates: self.covariates.iter().map(|c| pick(c)).collect(),
        }
    }

    /// Reorders covariate columns to `order`, which must be a permutation of
    /// this study's covariate names.
    pub fn realign(mut self, order: &[String]) -> Result<Self> {
        if order.len() != self.covariate_names.len() {
            return Err(Error::CovariateSchema(format!(
                "study `{}` has {} covariates, expected {}",
                self.study_id,
                self.covariate_names.len(),
                order.len()
            )));
        }
        let mut cols = Vec::with_capacity(order.len());
        for name in order {
            let idx = self.covariate_names.iter().position(|n| n == name).ok_or_else(|| {
                Error::CovariateSchema(format!("study `{}` lacks covariate `{name}`", self.study_id))
            })?;
            cols.push(std::mem::take(&mut self.covariates[idx]));
        }
        self.covariates = cols;
        self.covariate_names = order.to_vec();
        Ok(self)
    }

    /// Drops the outcome column, turning this into an X–M study.
    pub fn without_outcome(mut self) -> Self {
        self.y = None;
        self
    }
}

/// Checks that `target` has the same covariate names as `source` and returns
/// it with columns aligned to the source order.
pub fn align_schema<T: Real>(source: &IpdStudy<T>, target: &IpdStudy<T>) -> Result<IpdStudy<T>> {
    target.clone().realign(source.covariate_names())
}

/// Validated set of participant-level studies sharing one covariate schema.
#[derive(Debug, Clone)]
pub struct StudyCollection<T: Real = f64> {
    studies: Vec<IpdStudy<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> StudyCollection<T> {
    pub fn get(&self, id: &str) -> Option<&IpdStudy<T>> {
        self.index.get(id).map(|&i| &self.studies[i])
    }
    pub fn studies(&self) -> &[IpdStudy<T>] {
        &self.studies
    }
    pub fn covariate_names(&self) -> &[String] {
        self.studies[0].covariate_names()
    }
    pub fn into_studies(self) -> Vec<IpdStudy<T>> {
        self.studies
    }
}

/// Validates a set of studies and aligns every covariate schema to that of
/// the first study.
pub fn validate_collection<T: Real>(studies: Vec<IpdStudy<T>>) -> Result<StudyCollection<T>> {
    let first = studies.first().ok_or(Error::EmptyCollection)?;
    let order = first.covariate_names().to_vec();
    let mut index = HashMap::new();
    let mut out = Vec::with_capacity(studies.len());
    for (i, s) in studies.into_iter().enumerate() {
        s.validate()?;
        if index.insert(s.study_id().to_string(), i).is_some() {
            return Err(Error::DuplicateStudy(s.study_id().to_string()));
        }
        out.push(s.realign(&order)?);
    }
    Ok(StudyCollection { studies: out, index })
}

/// Standardized coefficients of the single-mediator path diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathModel<T = f64> {
    /// X → M
    pub a: T,
    /// M → Y given X
    pub b: T,
    /// X → Y direct
    pub c_prime: T,
}

impl<T: Real> PathModel<T> {
    pub fn new(a: T, b: T, c_prime: T) -> Self {
        Self { a, b, c_prime }
    }

    pub fn indirect(&self) -> T {
        self.a * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMethod {
    Fixed,
    Dl,
    Reml,
}

impl std::fmt::Display for MetaMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetaMethod::Fixed => "fixed",
            MetaMethod::Dl => "dl",
            MetaMethod::Reml => "reml",
        })
    }
}

/// Between-study variance estimator of a random-effects model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RandomMethod {
    Dl,
    #[default]
    Reml,
}

impl From<RandomMethod> for MetaMethod {
    fn from(m: RandomMethod) -> Self {
        match m {
            RandomMethod::Dl => MetaMethod::Dl,
            RandomMethod::Reml => MetaMethod::Reml,
        }
    }
}

/// Pooled estimate from a univariate meta-analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult<T = f64> {
    pub estimate: T,
    pub se: T,
    /// Between-study variance; exactly zero for the fixed-effect model.
    pub tau2: T,
    pub ci_low: T,
    pub ci_high: T,
    /// Normalized study weights, in input order.
    pub weights: Vec<T>,
    pub k_studies: usize,
    pub method: MetaMethod,
}
