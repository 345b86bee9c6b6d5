//! Model state, likelihoods, priors, joint log-posterior, and the analytic
//! gradient entry points.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dist::{ln_binomial_pmf_logit, ln_half_t_pdf, ln_normal_pdf, ln_poisson_pmf, LN_2PI};
use super::formula::{Formula, Term};
use crate::dataset::{LagPanel, MemorySpec};
use crate::splinebasis::SplineDesign;

/// Ridge added to the difference penalty inside the prior precision so the
/// softmax's unidentified constant direction of eta stays proper.
pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
    Binomial,
}

impl Family {
    pub fn link_name(&self) -> &'static str {
        match self {
            Family::Gaussian => "identity",
            Family::Poisson => "log",
            Family::Binomial => "logit",
        }
    }

    pub fn parse(name: &str) -> Option<Family> {
        match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Some(Family::Gaussian),
            "poisson" => Some(Family::Poisson),
            "binomial" => Some(Family::Binomial),
            _ => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
            Family::Binomial => "binomial",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Prior sd for the intercept and each regression coefficient.
    pub coef_sd: f64,
    /// Folded-t degrees of freedom / scale for each regulator root tau_j.
    pub tau_df: f64,
    pub tau_scale: f64,
    /// Half-t degrees of freedom / scale for sigma (Gaussian family).
    pub sigma_df: f64,
    pub sigma_scale: f64,
}

impl Priors {
    /// Defaults on standardized covariates; `response_sd` sets the half-t
    /// scale for sigma to 5 * sd(y).
    pub fn default_for(response_sd: f64) -> Priors {
        Priors {
            coef_sd: 100.0,
            tau_df: 3.0,
            tau_scale: 1.0,
            sigma_df: 3.0,
            sigma_scale: 5.0 * response_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub formula: Formula,
    pub spec: MemorySpec,
    pub priors: Priors,
}

/// One point in parameter space. `eta`/`tau` hold an entry per memory
/// covariate with L >= 1; `sigma2` is meaningful for the Gaussian family
/// only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub mu: f64,
    pub beta: DVector<f64>,
    pub eta: IndexMap<String, DVector<f64>>,
    pub tau: IndexMap<String, f64>,
    pub sigma2: f64,
}

/// Simplex weights over lags 0..=L: softmax of the spline expansion
/// `H eta`, max-shifted for overflow safety.
pub fn compute_weights(eta: &DVector<f64>, design: &SplineDesign) -> DVector<f64> {
    let z = &design.h * eta;
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w = z.map(|v| (v - max).exp());
    let total = w.sum();
    w /= total;
    w
}

/// Temporally-filtered covariate: row-wise weighted sum of current and
/// lagged values.
pub fn filter_covariate(lagged: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
    lagged * weights
}

/// A model bound to its data panel and spline designs, with the ridged
/// penalty matrices and their log-determinants precomputed.
pub struct Model<'a> {
    pub panel: &'a LagPanel,
    pub designs: &'a IndexMap<String, SplineDesign>,
    pub config: &'a ModelConfig,
    ridged: IndexMap<String, (DMatrix<f64>, f64)>,
}

impl<'a> Model<'a> {
    pub fn new(
        panel: &'a LagPanel,
        designs: &'a IndexMap<String, SplineDesign>,
        config: &'a ModelConfig,
    ) -> Model<'a> {
        let mut ridged = IndexMap::new();
        for var in config.spec.spline_vars() {
            let design = designs
                .get(var)
                .unwrap_or_else(|| panic!("no spline design for memory covariate `{var}`"));
            let k = design.basis_dim();
            let m = &design.s + DMatrix::identity(k, k).scale(RIDGE);
            let logdet = m
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .map(|e| e.ln())
                .sum();
            ridged.insert(var.clone(), (m, logdet));
        }
        Model {
            panel,
            designs,
            config,
            ridged,
        }
    }

    pub fn spline_vars(&self) -> Vec<&String> {
        self.config.spec.spline_vars().collect()
    }

    /// Uniform-weight, zero-coefficient starting state: mu at the link of
    /// the mean response, tau = 1, sigma2 = var(y).
    pub fn initial_state(&self) -> ModelState {
        let y = &self.panel.response;
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let mu = match self.config.family {
            Family::Gaussian => mean,
            Family::Poisson => mean.max(1e-3).ln(),
            Family::Binomial => {
                let trials = self.panel.trials.as_ref().expect("binomial needs trials");
                let p = (y.sum() / trials.sum()).clamp(1e-3, 1.0 - 1e-3);
                (p / (1.0 - p)).ln()
            }
        };
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        ModelState {
            mu,
            beta: DVector::zeros(self.config.formula.terms.len()),
            eta: self
                .spline_vars()
                .iter()
                .map(|v| {
                    let k = self.designs[v.as_str()].basis_dim();
                    ((*v).clone(), DVector::zeros(k))
                })
                .collect(),
            tau: self
                .spline_vars()
                .iter()
                .map(|v| ((*v).clone(), 1.0))
                .collect(),
            sigma2: var.max(1e-6),
        }
    }

    pub fn weights(&self, state: &ModelState, var: &str) -> DVector<f64> {
        compute_weights(&state.eta[var], &self.designs[var])
    }

    /// The covariate column a main effect contributes: filtered for memory
    /// covariates, the lag-0 column for degenerate L=0 memory covariates,
    /// and the plain column otherwise.
    pub fn main_column(&self, state: &ModelState, var: &str) -> DVector<f64> {
        if let Some(lagged) = self.panel.lagged.get(var) {
            if state.eta.contains_key(var) {
                filter_covariate(lagged, &self.weights(state, var))
            } else {
                lagged.column(0).into_owned()
            }
        } else {
            self.panel.plain[var].clone()
        }
    }

    /// n_eff x n_terms design of term columns; interactions are elementwise
    /// products of the (already filtered) main-effect columns.
    pub fn term_matrix(&self, state: &ModelState) -> DMatrix<f64> {
        let terms = &self.config.formula.terms;
        let mut cache: IndexMap<String, DVector<f64>> = IndexMap::new();
        let col = |model: &Model,
                   st: &ModelState,
                   v: &str,
                   cache: &mut IndexMap<String, DVector<f64>>| {
            if !cache.contains_key(v) {
                let c = model.main_column(st, v);
                cache.insert(v.to_string(), c);
            }
            cache[v].clone()
        };
        let mut m = DMatrix::zeros(self.panel.n_eff, terms.len());
        for (i, term) in terms.iter().enumerate() {
            let c = match term {
                Term::Main(v) => col(self, state, v, &mut cache),
                Term::Interaction(a, b) => {
                    let ca = col(self, state, a, &mut cache);
                    let cb = col(self, state, b, &mut cache);
                    ca.component_mul(&cb)
                }
            };
            m.set_column(i, &c);
        }
        m
    }

    pub fn linear_predictor(&self, state: &ModelState) -> DVector<f64> {
        let mut pred = self.term_matrix(state) * &state.beta;
        pred.add_scalar_mut(state.mu);
        pred
    }

    /// Sum of per-observation log densities; returns -inf when the linear
    /// predictor overflows the family's mean function (diverged proposal).
    pub fn log_likelihood(&self, state: &ModelState) -> f64 {
        let pred = self.linear_predictor(state);
        let y = &self.panel.response;
        let mut total = 0.0;
        match self.config.family {
            Family::Gaussian => {
                if state.sigma2 <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let s2 = state.sigma2;
                for (yi, pi) in y.iter().zip(pred.iter()) {
                    let r = yi - pi;
                    total += -0.5 * (LN_2PI + s2.ln()) - r * r / (2.0 * s2);
                }
            }
            Family::Poisson => {
                for (yi, pi) in y.iter().zip(pred.iter()) {
                    total += ln_poisson_pmf(*yi, *pi);
                }
            }
            Family::Binomial => {
                let trials = self.panel.trials.as_ref().expect("binomial needs trials");
                for ((yi, ni), pi) in y.iter().zip(trials.iter()).zip(pred.iter()) {
                    total += ln_binomial_pmf_logit(*yi, *ni, *pi);
                }
            }
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    /// eta_j prior precision: (S_j + RIDGE * I) / tau_j^2.
    pub fn ridged_penalty(&self, var: &str) -> &DMatrix<f64> {
        &self.ridged[var].0
    }

    /// The sampler keeps eta on the mean-centered slice (the softmax is
    /// invariant to constant shifts), so the prior is the (k-1)-dimensional
    /// Gaussian on that slice: the tau normalization exponent is k-1, not k.
    fn eta_log_prior(&self, var: &str, eta: &DVector<f64>, tau: f64) -> f64 {
        let (m, logdet) = &self.ridged[var];
        let km1 = eta.len() as f64 - 1.0;
        let quad = (eta.transpose() * m * eta)[(0, 0)];
        -0.5 * km1 * LN_2PI + 0.5 * (logdet - 2.0 * km1 * tau.ln()) - quad / (2.0 * tau * tau)
    }

    pub fn log_prior(&self, state: &ModelState) -> f64 {
        let p = &self.config.priors;
        let mut total = ln_normal_pdf(state.mu, 0.0, p.coef_sd);
        for b in state.beta.iter() {
            total += ln_normal_pdf(*b, 0.0, p.coef_sd);
        }
        for var in self.spline_vars() {
            let tau = state.tau[var.as_str()];
            if tau <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += self.eta_log_prior(var, &state.eta[var.as_str()], tau);
            total += ln_half_t_pdf(tau, p.tau_df, p.tau_scale);
        }
        if self.config.family == Family::Gaussian {
            if state.sigma2 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let sigma = state.sigma2.sqrt();
            // half-t density on sigma, mapped to a density over sigma^2
            total += ln_half_t_pdf(sigma, p.sigma_df, p.sigma_scale) - (2.0 * sigma).ln();
        }
        total
    }

    pub fn log_posterior(&self, state: &ModelState) -> f64 {
        // numerical truncation: reject spline states whose softmax would
        // saturate (a weight underflowing to exactly zero); the prior mass
        // beyond this spread is astronomically far from any data-supported
        // region
        for var in self.spline_vars() {
            let z = &self.designs[var.as_str()].h * &state.eta[var.as_str()];
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = z.iter().cloned().fold(f64::INFINITY, f64::min);
            if max - min > 600.0 {
                return f64::NEG_INFINITY;
            }
        }
        let prior = self.log_prior(state);
        if prior == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        prior + self.log_likelihood(state)
    }

    /// Target density in the sampled parameterization: positivity-bound
    /// parameters live on the log scale, so the log-Jacobian terms
    /// `ln tau_j` (and `ln sigma2` for Gaussian) are added.
    pub fn log_posterior_sampled(&self, state: &ModelState) -> f64 {
        let mut lp = self.log_posterior(state);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        for var in self.spline_vars() {
            lp += state.tau[var.as_str()].ln();
        }
        if self.config.family == Family::Gaussian {
            lp += state.sigma2.ln();
        }
        lp
    }
}
