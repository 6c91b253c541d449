//! Estimators for meta-analysis of mediation studies.
//!
//! Four routes to a pooled indirect effect are provided:
//!
//! * parameter-based MASEM: random-effects pooling of per-study products of coefficients ([`masem`]);
//! * correlation-based MASEM: multivariate pooling of (X, M, Y) correlations and a path model fit ([`masem`], [`meta`]);
//! * a bivariate random-effects model on the two path coefficients ([`ml_pathway`]);
//! * case-mix standardized indirect effects from participant data ([`transport`]), including
//!   studies that measured only treatment and mediator ([`xm`]).
//!
//! [`simlab`] generates synthetic studies and Monte Carlo ground truth.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below name the common concrete types.

pub mod error;
pub mod masem;
pub mod meta;
pub mod ml_pathway;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod simlab;
pub mod transport;
pub mod within_study;
pub mod xm;

pub use error::{Error, Result};
pub use masem::{correlation_based_masem, implied_correlations, parameter_based_masem, wls_fit, StructuralFit};
pub use meta::{fixed_effect_meta, multivariate_re_meta, random_effect_meta, MultivariateMetaResult};
pub use ml_pathway::{bootstrap_ci, delta_estimate, fit_bivariate_re, BivariateREFit, BootstrapInterval, LikelihoodMethod};
pub use model::{
    validate_collection, AggregateMediationRecord, CorrelationRecord, Estimate, IpdRow, IpdStudy, MetaMethod, MetaResult, PathModel,
    RandomMethod, StudyCollection,
};
pub use scalar::Real;
pub use transport::{check_positivity, population_specific_meta, standardized_nie, TransportEstimate, TransportOptions};
pub use within_study::{fit_working_models, Exposure, ModelTerms, WorkingModels};
pub use xm::{hybrid_nie, summarize_eta, HybridEstimand, HybridEstimate, SummaryScheme};

pub type AggregateRecordF64 = AggregateMediationRecord<f64>;
pub type AggregateRecordF32 = AggregateMediationRecord<f32>;
pub type CorrelationRecordF64 = CorrelationRecord<f64>;
pub type CorrelationRecordF32 = CorrelationRecord<f32>;
pub type IpdStudyF64 = IpdStudy<f64>;
pub type IpdStudyF32 = IpdStudy<f32>;
pub type MetaResultF64 = MetaResult<f64>;
pub type MetaResultF32 = MetaResult<f32>;
pub type StructuralFitF64 = StructuralFit<f64>;
pub type StructuralFitF32 = StructuralFit<f32>;
pub type BivariateREFitF64 = BivariateREFit<f64>;
pub type BivariateREFitF32 = BivariateREFit<f32>;
pub type TransportEstimateF64 = TransportEstimate<f64>;
pub type TransportEstimateF32 = TransportEstimate<f32>;
pub type HybridEstimateF64 = HybridEstimate<f64>;
pub type HybridEstimateF32 = HybridEstimate<f32>;
