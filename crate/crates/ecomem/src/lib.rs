//! Estimation of ecological memory functions from environmental time series.
//!
//! An ecological memory function is a simplex-constrained weight vector over
//! time lags describing how strongly past covariate values influence the
//! current response. Weights are modeled as a softmax of a penalized B-spline
//! expansion and estimated jointly with regression coefficients in a Bayesian
//! hierarchical model (Gaussian, Poisson, or binomial likelihood) via
//! multi-chain adaptive MCMC.
//!
//! Pipeline: [`dataset`] ingests and standardizes long-format series and
//! builds lagged covariate panels, [`splinebasis`] constructs the basis and
//! difference penalty, [`memcore`] holds the model math (weights, filtering,
//! likelihoods, priors, gradients), [`sampler`] draws from the posterior,
//! [`diagnostics`] summarizes chains, and [`simulate`] generates synthetic
//! datasets with known memory functions for recovery checks.

pub mod dataset;
pub mod diagnostics;
pub mod memcore;
pub mod sampler;
pub mod simulate;
pub mod splinebasis;

pub use dataset::{
    build_lag_panel, load_csv, standardize, CovariateKind, LagPanel, MemorySpec,
    StandardizationRecord, TimeSeriesDataset,
};
pub use diagnostics::{
    effect_comparison, effective_sample_size, split_rhat, summarize, MemoryFunction,
    ParameterSummary,
};
pub use memcore::{
    compute_weights, filter_covariate, parse_formula, Family, Formula, Model, ModelConfig,
    ModelState, Priors, Term,
};
pub use sampler::{read_fit, run_chains, write_fit, ChainSet, FitMeta, SamplerConfig};
pub use simulate::{canonical_scenario, generate, score_recovery, GroundTruth, SimScenario};
pub use splinebasis::{build_design, generalized_inverse_logdet, SplineDesign};
