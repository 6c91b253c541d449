use thiserror::Error;

/// Errors raised by the estimators and validators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("covariate schema mismatch: {0}")]
    CovariateSchema(String),
    #[error("duplicate study id `{0}`")]
    DuplicateStudy(String),
    #[error("study `{0}` does not contain at least two observations in each treatment arm")]
    DegenerateArm(String),
    #[error("empty study collection")]
    EmptyCollection,
    #[error("singular design{}: rank-deficient at tolerance", context.as_deref().map(|c| format!(" in study `{c}`")).unwrap_or_default())]
    SingularDesign { context: Option<String> },
    #[error("the product of coefficients is not the natural indirect effect when an exposure-mediator interaction is fitted")]
    NonlinearModel,
    #[error("zero variance in column `{0}`")]
    DegenerateVariance(String),
    #[error("nonpositive or non-finite variance at position {0}")]
    InvalidVariance(usize),
    #[error("at least {needed} studies are required, got {got}")]
    InsufficientStudies { needed: usize, got: usize },
    #[error("{what} did not converge after {iterations} iterations (last iterate {last:?})")]
    Convergence { what: String, iterations: usize, last: Vec<f64> },
    #[error("correlation `{0}` is observed in no study")]
    UnidentifiedComponent(&'static str),
    #[error("path model implies a correlation matrix that is not positive semidefinite")]
    InadmissiblePath,
    #[error("path system singular: |a| = 1")]
    SingularPathSystem,
    #[error("weight matrix is singular or not positive definite")]
    InvalidWeight,
    #[error("record `{0}` carries no path coefficient estimates")]
    MissingPathData(String),
    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapInstability { failed: usize, total: usize },
    #[error("estimates refer to different target populations or contrasts")]
    MixedTarget,
    #[error("estimates mix estimands or standardization targets")]
    MixedEstimand,
    #[error("study `{0}` has no mediator column")]
    MissingMediator(String),
    #[error("study `{0}` has no outcome column")]
    MissingOutcome(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(id: &str, reason: impl Into<String>) -> Self {
        Error::InvalidRecord { id: id.to_string(), reason: reason.into() }
    }

    /// True for optimizer non-convergence, which callers may want to report
    /// separately from input validation failures.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::BootstrapInstability { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
