//! Unconstrained parameterization and the analytic gradient of the sampled
//! log-posterior.
//!
//! Layout of the flat vector: `mu`, one entry per formula term (`beta`),
//! the spline coefficients per memory covariate, `ln tau` per memory
//! covariate, and `ln sigma2` for the Gaussian family. Positivity-bound
//! parameters are differentiated on the log scale including the Jacobian
//! term, matching [`Model::log_posterior_sampled`].

use nalgebra::DVector;

use super::dist::{ln_half_t_pdf_deriv, logistic};
use super::model::{Family, Model, ModelState};

impl<'a> Model<'a> {
    /// Names of the unconstrained parameter vector entries, in layout order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["mu".to_string()];
        for t in &self.config.formula.terms {
            names.push(format!("beta.{t}"));
        }
        for var in self.spline_vars() {
            let k = self.designs[var.as_str()].basis_dim();
            for i in 0..k {
                names.push(format!("eta.{var}.{i}"));
            }
        }
        for var in self.spline_vars() {
            names.push(format!("tau.{var}"));
        }
        if self.config.family == Family::Gaussian {
            names.push("sigma2".to_string());
        }
        names
    }

    pub fn n_params(&self) -> usize {
        let mut n = 1 + self.config.formula.terms.len();
        for var in self.spline_vars() {
            n += self.designs[var.as_str()].basis_dim() + 1;
        }
        if self.config.family == Family::Gaussian {
            n += 1;
        }
        n
    }

    pub fn state_to_vector(&self, state: &ModelState) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(state.mu);
        v.extend(state.beta.iter());
        for var in self.spline_vars() {
            v.extend(state.eta[var.as_str()].iter());
        }
        for var in self.spline_vars() {
            v.push(state.tau[var.as_str()].ln());
        }
        if self.config.family == Family::Gaussian {
            v.push(state.sigma2.ln());
        }
        DVector::from_vec(v)
    }

    pub fn state_from_vector(&self, v: &DVector<f64>) -> ModelState {
        let n_terms = self.config.formula.terms.len();
        let mut idx = 0;
        let mu = v[idx];
        idx += 1;
        let beta = DVector::from_iterator(n_terms, v.iter().skip(idx).take(n_terms).cloned());
        idx += n_terms;
        let mut eta = indexmap::IndexMap::new();
        for var in self.spline_vars() {
            let k = self.designs[var.as_str()].basis_dim();
            eta.insert(
                var.clone(),
                DVector::from_iterator(k, v.iter().skip(idx).take(k).cloned()),
            );
            idx += k;
        }
        let mut tau = indexmap::IndexMap::new();
        for var in self.spline_vars() {
            tau.insert(var.clone(), v[idx].exp());
            idx += 1;
        }
        let sigma2 = if self.config.family == Family::Gaussian {
            let s = v[idx].exp();
            idx += 1;
            s
        } else {
            1.0
        };
        debug_assert_eq!(idx, v.len());
        ModelState {
            mu,
            beta,
            eta,
            tau,
            sigma2,
        }
    }

    /// Sampled-space target as a function of the unconstrained vector.
    pub fn log_posterior_vec(&self, v: &DVector<f64>) -> f64 {
        self.log_posterior_sampled(&self.state_from_vector(v))
    }

    /// Analytic gradient of [`Model::log_posterior_sampled`] in the
    /// unconstrained layout.
    pub fn gradient(&self, state: &ModelState) -> DVector<f64> {
        let p = &self.config.priors;
        let n = self.panel.n_eff;
        let pred = self.linear_predictor(state);
        let y = &self.panel.response;

        // d loglik / d predictor
        let r: DVector<f64> = match self.config.family {
            Family::Gaussian => (y - &pred).unscale(state.sigma2),
            Family::Poisson => DVector::from_fn(n, |i, _| y[i] - pred[i].exp()),
            Family::Binomial => {
                let trials = self.panel.trials.as_ref().expect("binomial needs trials");
                DVector::from_fn(n, |i, _| y[i] - trials[i] * logistic(pred[i]))
            }
        };

        let tm = self.term_matrix(state);
        let coef_prec = 1.0 / (p.coef_sd * p.coef_sd);
        let mut grad = Vec::with_capacity(self.n_params());
        grad.push(r.sum() - state.mu * coef_prec);
        for (m, _) in self.config.formula.terms.iter().enumerate() {
            grad.push(tm.column(m).dot(&r) - state.beta[m] * coef_prec);
        }

        // spline coefficient blocks
        for var in self.spline_vars() {
            let design = &self.designs[var.as_str()];
            let lagged = &self.panel.lagged[var.as_str()];
            let w = self.weights(state, var);
            // u_t = d predictor_t / d (filtered column of var)
            let mut u = DVector::zeros(n);
            for (m, term) in self.config.formula.terms.iter().enumerate() {
                match term {
                    super::formula::Term::Main(v) if v == var.as_str() => {
                        u.add_scalar_mut(state.beta[m]);
                    }
                    super::formula::Term::Interaction(a, b) => {
                        if a == var.as_str() {
                            u += self.main_column(state, b).scale(state.beta[m]);
                        } else if b == var.as_str() {
                            u += self.main_column(state, a).scale(state.beta[m]);
                        }
                    }
                    _ => {}
                }
            }
            let v1 = lagged.transpose() * r.component_mul(&u);
            // softmax Jacobian: (diag(w) - w w') v1
            let av = w.component_mul(&v1) - w.scale(w.dot(&v1));
            let tau = state.tau[var.as_str()];
            let eta = &state.eta[var.as_str()];
            let prior = (self.ridged_penalty(var) * eta).unscale(-tau * tau);
            let g = design.h.transpose() * av + prior;
            grad.extend(g.iter());
        }

        // ln tau blocks
        for var in self.spline_vars() {
            let tau = state.tau[var.as_str()];
            let eta = &state.eta[var.as_str()];
            let km1 = eta.len() as f64 - 1.0;
            let q = (eta.transpose() * self.ridged_penalty(var) * eta)[(0, 0)];
            let g = -km1
                + q / (tau * tau)
                + tau * ln_half_t_pdf_deriv(tau, p.tau_df, p.tau_scale)
                + 1.0;
            grad.push(g);
        }

        if self.config.family == Family::Gaussian {
            let s2 = state.sigma2;
            let sigma = s2.sqrt();
            let rss = (y - &pred).norm_squared();
            let lik = -(n as f64) / 2.0 + rss / (2.0 * s2);
            let prior =
                sigma / 2.0 * ln_half_t_pdf_deriv(sigma, p.sigma_df, p.sigma_scale) - 0.5 + 1.0;
            grad.push(lik + prior);
        }

        DVector::from_vec(grad)
    }
}
