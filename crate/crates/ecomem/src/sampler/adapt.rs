//! Adaptive random-walk proposal machinery shared by the Metropolis blocks.
//!
//! Proposal covariance is `s^2 (Sigma_hat + 1e-8 I)` where `Sigma_hat` is
//! the running empirical covariance of the chain's history for the block
//! and `s` is a scalar adapted toward the target acceptance rate every
//! `adapt_window` proposals. Adaptation runs during burn-in only; at the
//! end of burn-in the proposal is frozen so the post-burn-in kernel is a
//! fixed Metropolis kernel.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const COV_RIDGE: f64 = 1e-8;
/// History length before the empirical covariance replaces the identity.
const MIN_HISTORY: usize = 100;

#[derive(Debug, Clone)]
pub struct AdaptiveBlock {
    pub name: String,
    dim: usize,
    log_scale: f64,
    // running moments of the chain history
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    // lower-triangular factor of the proposal shape (excludes the scalar s)
    chol: DMatrix<f64>,
    frozen: bool,
    window_proposals: usize,
    window_accepts: usize,
    windows_done: usize,
    pub proposals: u64,
    pub accepts: u64,
}

impl AdaptiveBlock {
    pub fn new(name: impl Into<String>, dim: usize) -> AdaptiveBlock {
        AdaptiveBlock {
            name: name.into(),
            dim,
            log_scale: (2.38 / (dim as f64).sqrt()).ln(),
            count: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
            chol: DMatrix::identity(dim, dim),
            frozen: false,
            window_proposals: 0,
            window_accepts: 0,
            windows_done: 0,
            proposals: 0,
            accepts: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn propose(&self, current: &DVector<f64>, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        current + (&self.chol * z).scale(self.log_scale.exp())
    }

    /// Books an accept/reject outcome and, during burn-in, updates the
    /// running moments with the (post-decision) current value and adapts
    /// the scalar step every `adapt_window` proposals.
    pub fn record(
        &mut self,
        current: &DVector<f64>,
        accepted: bool,
        adapt_window: usize,
        target_accept: f64,
    ) {
        self.proposals += 1;
        if accepted {
            self.accepts += 1;
        }
        if self.frozen {
            return;
        }
        self.window_proposals += 1;
        if accepted {
            self.window_accepts += 1;
        }

        // Welford update of mean / scatter
        self.count += 1;
        let delta = current - &self.mean;
        self.mean += delta.scale(1.0 / self.count as f64);
        let delta2 = current - &self.mean;
        self.m2 += &delta * delta2.transpose();

        if self.window_proposals >= adapt_window {
            let rate = self.window_accepts as f64 / self.window_proposals as f64;
            self.windows_done += 1;
            self.log_scale += (rate - target_accept) / (self.windows_done as f64).sqrt();
            self.window_proposals = 0;
            self.window_accepts = 0;
            self.refresh_shape();
        }
    }

    fn refresh_shape(&mut self) {
        if self.count < MIN_HISTORY {
            return;
        }
        let mut cov = self.m2.scale(1.0 / (self.count - 1) as f64);
        for i in 0..self.dim {
            cov[(i, i)] += COV_RIDGE;
        }
        if let Some(c) = Cholesky::new(cov) {
            self.chol = c.unpack();
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }

    /// Flattened proposal covariance factor times scale; used to assert the
    /// kernel does not change after burn-in.
    pub fn proposal_snapshot(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.chol.iter().map(|v| v * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_block_keeps_proposal_fixed() {
        let mut block = AdaptiveBlock::new("b", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = DVector::zeros(2);
        for _ in 0..500 {
            x = block.propose(&x, &mut rng);
            block.record(&x, true, 50, 0.3);
        }
        block.freeze();
        let snap = block.proposal_snapshot();
        for _ in 0..500 {
            x = block.propose(&x, &mut rng);
            block.record(&x, false, 50, 0.3);
        }
        assert_eq!(snap, block.proposal_snapshot());
    }

    #[test]
    fn scale_adapts_toward_target() {
        // all-reject feedback shrinks the step, all-accept grows it
        let mut shrink = AdaptiveBlock::new("s", 1);
        let mut grow = AdaptiveBlock::new("g", 1);
        let x = DVector::zeros(1);
        for _ in 0..200 {
            shrink.record(&x, false, 50, 0.3);
            grow.record(&x, true, 50, 0.3);
        }
        assert!(shrink.log_scale < (2.38f64).ln());
        assert!(grow.log_scale > (2.38f64).ln());
    }
}
