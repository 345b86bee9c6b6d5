//! Model mathematics: memory weights, covariate filtering, linear
//! predictor, likelihoods, priors, joint log-posterior, and its gradient.

mod dist;
mod formula;
mod gradient;
mod model;

pub use dist::{ln_half_t_pdf, ln_normal_pdf};
pub use formula::{parse_formula, Formula, FormulaError, Term};
pub use model::{
    compute_weights, filter_covariate, Family, Model, ModelConfig, ModelState, Priors, RIDGE,
};
