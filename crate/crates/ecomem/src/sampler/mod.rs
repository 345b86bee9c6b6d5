//! Multi-chain MCMC over the joint posterior: a conjugate (mu, beta) draw
//! for the Gaussian family, adaptive random-walk Metropolis blocks for the
//! GLM coefficients, the spline coefficients per memory covariate, and the
//! scalar scale parameters on the log scale.
//!
//! Chains are independent and run in parallel; chain `c` draws its RNG
//! stream from `base_seed + c`, so a run is deterministic given the data,
//! configuration, and base seed.

mod adapt;
mod store;

pub use adapt::AdaptiveBlock;
pub use store::{read_fit, write_fit, FitMeta};

use indexmap::IndexMap;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LagPanel;
use crate::memcore::{compute_weights, Family, Model, ModelConfig, ModelState};
use crate::splinebasis::SplineDesign;

#[derive(Error, Debug)]
pub enum SamplerError {
    #[error("initial state has non-finite log-posterior")]
    NonFiniteStart,
    #[error("block `{0}` rejected every proposal; check covariate scaling")]
    AllProposalsRejected(String),
    #[error("filtered design matrix is rank-deficient (collinear filtered covariates)")]
    SingularGram,
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub base_seed: u64,
    pub adapt_window: usize,
    pub target_accept: f64,
    /// Spline/regulator sweeps per iteration. The eta blocks mix much more
    /// slowly than the coefficients, so they get extra updates.
    #[serde(default = "default_eta_sweeps")]
    pub eta_sweeps: usize,
    /// Test hook: keep weights and regulators at their initial values and
    /// skip their updates.
    #[serde(default)]
    pub fix_weights: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 3,
            n_iter: 10_000,
            burn_in: 5_000,
            thin: 5,
            base_seed: 0,
            adapt_window: 50,
            target_accept: 0.3,
            eta_sweeps: default_eta_sweeps(),
            fix_weights: false,
        }
    }
}

fn default_eta_sweeps() -> usize {
    25
}

impl SamplerConfig {
    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn validate(&self) -> Result<(), SamplerError> {
        if self.n_chains < 1 {
            return Err(SamplerError::BadConfig("n_chains must be >= 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(SamplerError::BadConfig("burn_in must be < n_iter".into()));
        }
        if self.thin < 1 {
            return Err(SamplerError::BadConfig("thin must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockStats {
    pub name: String,
    pub proposals: u64,
    pub accepts: u64,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Retained draws of one chain, row-major over `names`-ordered columns.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub values: Vec<f64>,
    pub n_params: usize,
    pub acceptance: Vec<BlockStats>,
    /// Proposal kernels captured at the end of burn-in and at the end of
    /// the run; equal by the adaptation-freeze contract.
    pub proposal_at_burnin: Vec<(String, Vec<f64>)>,
    pub proposal_at_end: Vec<(String, Vec<f64>)>,
}

impl ChainDraws {
    pub fn n_retained(&self) -> usize {
        if self.n_params == 0 {
            0
        } else {
            self.values.len() / self.n_params
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_params..(i + 1) * self.n_params]
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        (0..self.n_retained()).map(|i| self.row(i)[idx]).collect()
    }
}

/// Posterior draws from all chains plus the parameter-name manifest
/// (sampled parameters followed by the derived `w.<var>.<lag>` weights).
#[derive(Debug, Clone)]
pub struct ChainSet {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub seeds: Vec<u64>,
    pub config: SamplerConfig,
}

impl ChainSet {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn pooled(&self, idx: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.chains {
            out.extend(c.column(idx));
        }
        out
    }

    pub fn per_chain(&self, idx: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(idx)).collect()
    }

    /// Names of the derived weight columns for one memory covariate.
    pub fn weight_indices(&self, var: &str) -> Vec<usize> {
        let prefix = format!("w.{var}.");
        let mut pairs: Vec<(usize, usize)> = self
            .names
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.strip_prefix(&prefix)
                    .and_then(|s| s.parse::<usize>().ok())
                    .map(|lag| (lag, i))
            })
            .collect();
        pairs.sort_unstable();
        pairs.into_iter().map(|(_, i)| i).collect()
    }

    pub fn memory_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.names {
            if let Some(rest) = n.strip_prefix("w.") {
                if let Some((var, _)) = rest.rsplit_once('.') {
                    if !out.iter().any(|v| v == var) {
                        out.push(var.to_string());
                    }
                }
            }
        }
        out
    }
}

/// Conditional mean and covariance of (mu, beta) given everything else in
/// the Gaussian family: normal likelihood with known sigma^2 against the
/// N(0, coef_sd^2 I) prior.
pub fn gaussian_conjugate_moments(
    model: &Model,
    state: &ModelState,
) -> Result<(DVector<f64>, DMatrix<f64>), SamplerError> {
    let tm = model.term_matrix(state);
    let n = model.panel.n_eff;
    let p = tm.ncols() + 1;
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    x.columns_mut(1, tm.ncols()).copy_from(&tm);
    let gram = x.transpose() * &x;
    let eigs = gram.clone().symmetric_eigenvalues();
    let max_eig = eigs.amax();
    if eigs.iter().any(|&e| e <= 1e-10 * max_eig) {
        return Err(SamplerError::SingularGram);
    }
    let prior_prec = 1.0 / (model.config.priors.coef_sd * model.config.priors.coef_sd);
    let mut prec = gram.unscale(state.sigma2);
    for i in 0..p {
        prec[(i, i)] += prior_prec;
    }
    let chol = Cholesky::new(prec).ok_or(SamplerError::SingularGram)?;
    let xty = (x.transpose() * &model.panel.response).unscale(state.sigma2);
    let mean = chol.solve(&xty);
    let cov = chol.inverse();
    Ok((mean, cov))
}

/// Exact draw of (mu, beta) from its multivariate normal full conditional.
pub fn update_gaussian_conjugate(
    model: &Model,
    state: &mut ModelState,
    rng: &mut impl Rng,
) -> Result<(), SamplerError> {
    let (mean, cov) = gaussian_conjugate_moments(model, state)?;
    let p = mean.len();
    let chol = Cholesky::new(cov).ok_or(SamplerError::SingularGram)?;
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let draw = mean + chol.l() * z;
    state.mu = draw[0];
    state.beta = draw.rows(1, p - 1).into_owned();
    Ok(())
}

/// Joint adaptive random-walk Metropolis step on (mu, beta) for the GLM
/// families. Returns the acceptance flag.
pub fn update_glm_block(
    model: &Model,
    state: &mut ModelState,
    lp: &mut f64,
    block: &mut AdaptiveBlock,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> bool {
    let mut current = DVector::zeros(1 + state.beta.len());
    current[0] = state.mu;
    current.rows_mut(1, state.beta.len()).copy_from(&state.beta);
    let proposal = block.propose(&current, rng);
    let mut cand = state.clone();
    cand.mu = proposal[0];
    cand.beta = proposal.rows(1, state.beta.len()).into_owned();
    let cand_lp = model.log_posterior_sampled(&cand);
    let accepted = (cand_lp - *lp) > rng.gen::<f64>().ln();
    if accepted {
        *state = cand;
        *lp = cand_lp;
        block.record(&proposal, true, cfg.adapt_window, cfg.target_accept);
    } else {
        block.record(&current, false, cfg.adapt_window, cfg.target_accept);
    }
    accepted
}

/// Multivariate random-walk Metropolis step on one memory covariate's
/// spline coefficients. On acceptance eta is re-centered along the
/// softmax's constant null direction (weights are unchanged by the shift).
pub fn update_eta_block(
    model: &Model,
    state: &mut ModelState,
    var: &str,
    lp: &mut f64,
    block: &mut AdaptiveBlock,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> bool {
    let current = state.eta[var].clone();
    let proposal = block.propose(&current, rng);
    let mut cand = state.clone();
    cand.eta.insert(var.to_string(), proposal.clone());
    let cand_lp = model.log_posterior_sampled(&cand);
    let accepted = (cand_lp - *lp) > rng.gen::<f64>().ln();
    if accepted {
        // subtract the mean of H*eta; identified quantities are untouched
        let design = &model.designs[var];
        let shift = (&design.h * &proposal).mean();
        let centered = proposal.add_scalar(-shift);
        state.eta.insert(var.to_string(), centered.clone());
        *lp = model.log_posterior_sampled(state);
        block.record(&centered, true, cfg.adapt_window, cfg.target_accept);
    } else {
        block.record(&current, false, cfg.adapt_window, cfg.target_accept);
    }
    accepted
}

/// Scalar random-walk Metropolis step on `ln tau_var` (Jacobian included
/// in the sampled-space target).
pub fn update_tau(
    model: &Model,
    state: &mut ModelState,
    var: &str,
    lp: &mut f64,
    block: &mut AdaptiveBlock,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> bool {
    let current = DVector::from_element(1, state.tau[var].ln());
    let proposal = block.propose(&current, rng);
    let mut cand = state.clone();
    cand.tau.insert(var.to_string(), proposal[0].exp());
    let cand_lp = model.log_posterior_sampled(&cand);
    let accepted = (cand_lp - *lp) > rng.gen::<f64>().ln();
    if accepted {
        *state = cand;
        *lp = cand_lp;
        block.record(&proposal, true, cfg.adapt_window, cfg.target_accept);
    } else {
        block.record(&current, false, cfg.adapt_window, cfg.target_accept);
    }
    accepted
}

/// Joint rescaling move: propose `ln tau'` and rescale eta by `tau'/tau`
/// in the same step. Under the hierarchical prior the quadratic form
/// Q/(2 tau^2) is invariant to this map and the prior normalization
/// cancels against the transformation Jacobian (tau'/tau)^(k-1), so the move
/// traverses the tau "funnel" that a fixed-eta update cannot.
pub fn update_tau_rescale(
    model: &Model,
    state: &mut ModelState,
    var: &str,
    lp: &mut f64,
    block: &mut AdaptiveBlock,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> bool {
    let tau = state.tau[var];
    let current = DVector::from_element(1, tau.ln());
    let proposal = block.propose(&current, rng);
    let new_tau = proposal[0].exp();
    let scale = new_tau / tau;
    // eta lives on the mean-centered slice, so the rescaling map has k-1
    // free dimensions and Jacobian (tau'/tau)^(k-1)
    let km1 = state.eta[var].len() as f64 - 1.0;
    let mut cand = state.clone();
    cand.tau.insert(var.to_string(), new_tau);
    cand.eta
        .insert(var.to_string(), state.eta[var].scale(scale));
    let cand_lp = model.log_posterior_sampled(&cand);
    let log_ratio = cand_lp - *lp + km1 * (proposal[0] - current[0]);
    let accepted = log_ratio > rng.gen::<f64>().ln();
    if accepted {
        *state = cand;
        *lp = cand_lp;
        block.record(&proposal, true, cfg.adapt_window, cfg.target_accept);
    } else {
        block.record(&current, false, cfg.adapt_window, cfg.target_accept);
    }
    accepted
}

/// Scalar random-walk Metropolis step on `ln sigma2` against the half-t
/// prior on sigma (Gaussian family).
pub fn update_sigma2(
    model: &Model,
    state: &mut ModelState,
    lp: &mut f64,
    block: &mut AdaptiveBlock,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> bool {
    let current = DVector::from_element(1, state.sigma2.ln());
    let proposal = block.propose(&current, rng);
    let mut cand = state.clone();
    cand.sigma2 = proposal[0].exp();
    let cand_lp = model.log_posterior_sampled(&cand);
    let accepted = (cand_lp - *lp) > rng.gen::<f64>().ln();
    if accepted {
        *state = cand;
        *lp = cand_lp;
        block.record(&proposal, true, cfg.adapt_window, cfg.target_accept);
    } else {
        block.record(&current, false, cfg.adapt_window, cfg.target_accept);
    }
    accepted
}

fn manifest(model: &Model) -> Vec<String> {
    let mut names = vec!["mu".to_string()];
    for t in &model.config.formula.terms {
        names.push(format!("beta.{t}"));
    }
    for var in model.spline_vars() {
        for i in 0..model.designs[var.as_str()].basis_dim() {
            names.push(format!("eta.{var}.{i}"));
        }
    }
    for var in model.spline_vars() {
        names.push(format!("tau.{var}"));
    }
    if model.config.family == Family::Gaussian {
        names.push("sigma2".to_string());
    }
    for var in &model.config.spec.mem_vars {
        for lag in 0..=model.config.spec.l[var.as_str()] {
            names.push(format!("w.{var}.{lag}"));
        }
    }
    names
}

fn record_draw(model: &Model, state: &ModelState, out: &mut Vec<f64>) {
    out.push(state.mu);
    out.extend(state.beta.iter());
    for var in model.spline_vars() {
        out.extend(state.eta[var.as_str()].iter());
    }
    for var in model.spline_vars() {
        out.push(state.tau[var.as_str()]);
    }
    if model.config.family == Family::Gaussian {
        out.push(state.sigma2);
    }
    for var in &model.config.spec.mem_vars {
        if state.eta.contains_key(var) {
            let w = compute_weights(&state.eta[var.as_str()], &model.designs[var.as_str()]);
            out.extend(w.iter());
        } else {
            // degenerate L = 0 memory covariate
            out.push(1.0);
        }
    }
}

fn run_one_chain(
    model: &Model,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<ChainDraws, SamplerError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut state = model.initial_state();
    let spline_vars: Vec<String> = model.spline_vars().into_iter().cloned().collect();

    // Overdispersed start: jitter the spline coefficients and their
    // regulators. All-zero eta is a degenerate point (tau's conditional
    // collapses toward zero there and the random-walk kernel cannot
    // escape), and distinct starting points make split-Rhat meaningful.
    if !cfg.fix_weights {
        for var in &spline_vars {
            let design = &model.designs[var.as_str()];
            let mut eta = DVector::from_fn(design.basis_dim(), |_, _| {
                0.3 * rng.sample::<f64, _>(StandardNormal)
            });
            let shift = (&design.h * &eta).mean();
            eta.add_scalar_mut(-shift);
            state.eta.insert(var.clone(), eta);
            state.tau.insert(
                var.clone(),
                (0.3 * rng.sample::<f64, _>(StandardNormal)).exp(),
            );
        }
    }
    let mut lp = model.log_posterior_sampled(&state);
    if !lp.is_finite() {
        return Err(SamplerError::NonFiniteStart);
    }

    let gaussian = model.config.family == Family::Gaussian;
    let n_coef = 1 + model.config.formula.terms.len();
    let mut coef_block = (!gaussian).then(|| AdaptiveBlock::new("coef", n_coef));
    let mut sigma_block = gaussian.then(|| AdaptiveBlock::new("sigma2", 1));
    let mut eta_blocks: Vec<AdaptiveBlock> = spline_vars
        .iter()
        .map(|v| AdaptiveBlock::new(format!("eta.{v}"), model.designs[v.as_str()].basis_dim()))
        .collect();
    let mut tau_blocks: Vec<AdaptiveBlock> = spline_vars
        .iter()
        .map(|v| AdaptiveBlock::new(format!("tau.{v}"), 1))
        .collect();
    let mut rescale_blocks: Vec<AdaptiveBlock> = spline_vars
        .iter()
        .map(|v| AdaptiveBlock::new(format!("tau_scale.{v}"), 1))
        .collect();

    let n_params = manifest(model).len();
    let mut values = Vec::with_capacity(cfg.n_retained() * n_params);
    let mut proposal_at_burnin = Vec::new();

    for iter in 0..cfg.n_iter {
        if iter == cfg.burn_in {
            for b in coef_block
                .iter_mut()
                .chain(sigma_block.iter_mut())
                .chain(eta_blocks.iter_mut())
                .chain(tau_blocks.iter_mut())
                .chain(rescale_blocks.iter_mut())
            {
                b.freeze();
                proposal_at_burnin.push((b.name.clone(), b.proposal_snapshot()));
            }
        }

        match (&mut coef_block, gaussian) {
            (None, true) => {
                update_gaussian_conjugate(model, &mut state, &mut rng)?;
                lp = model.log_posterior_sampled(&state);
                let block = sigma_block.as_mut().unwrap();
                update_sigma2(model, &mut state, &mut lp, block, cfg, &mut rng);
            }
            (Some(block), false) => {
                update_glm_block(model, &mut state, &mut lp, block, cfg, &mut rng);
            }
            _ => unreachable!(),
        }

        if !cfg.fix_weights {
            for _ in 0..cfg.eta_sweeps.max(1) {
                for (i, var) in spline_vars.iter().enumerate() {
                    update_eta_block(
                        model,
                        &mut state,
                        var,
                        &mut lp,
                        &mut eta_blocks[i],
                        cfg,
                        &mut rng,
                    );
                }
                for (i, var) in spline_vars.iter().enumerate() {
                    update_tau(
                        model,
                        &mut state,
                        var,
                        &mut lp,
                        &mut tau_blocks[i],
                        cfg,
                        &mut rng,
                    );
                    update_tau_rescale(
                        model,
                        &mut state,
                        var,
                        &mut lp,
                        &mut rescale_blocks[i],
                        cfg,
                        &mut rng,
                    );
                }
            }
        }

        if iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.thin == 0 {
            debug_assert!(lp.is_finite());
            record_draw(model, &state, &mut values);
        }
    }

    let all_blocks: Vec<&AdaptiveBlock> = coef_block
        .iter()
        .chain(sigma_block.iter())
        .chain(eta_blocks.iter())
        .chain(tau_blocks.iter())
        .chain(rescale_blocks.iter())
        .collect();
    for b in &all_blocks {
        if b.proposals > 0 && b.accepts == 0 {
            return Err(SamplerError::AllProposalsRejected(b.name.clone()));
        }
    }

    Ok(ChainDraws {
        values,
        n_params,
        acceptance: all_blocks
            .iter()
            .map(|b| BlockStats {
                name: b.name.clone(),
                proposals: b.proposals,
                accepts: b.accepts,
            })
            .collect(),
        proposal_at_burnin,
        proposal_at_end: all_blocks
            .iter()
            .map(|b| (b.name.clone(), b.proposal_snapshot()))
            .collect(),
    })
}

/// Runs `n_chains` independent chains in parallel. Chain `c` uses seed
/// `base_seed + c`; the result is deterministic for fixed inputs.
pub fn run_chains(
    panel: &LagPanel,
    designs: &IndexMap<String, SplineDesign>,
    config: &ModelConfig,
    sconfig: &SamplerConfig,
) -> Result<ChainSet, SamplerError> {
    sconfig.validate()?;
    let model = Model::new(panel, designs, config);
    let seeds: Vec<u64> = (0..sconfig.n_chains)
        .map(|c| sconfig.base_seed.wrapping_add(c as u64))
        .collect();
    let chains: Result<Vec<ChainDraws>, SamplerError> = seeds
        .par_iter()
        .map(|&seed| run_one_chain(&model, sconfig, seed))
        .collect();
    Ok(ChainSet {
        names: manifest(&model),
        chains: chains?,
        seeds,
        config: sconfig.clone(),
    })
}

#[cfg(test)]
mod tests;
