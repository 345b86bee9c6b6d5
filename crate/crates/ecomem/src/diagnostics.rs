//! Convergence diagnostics, posterior summaries, memory-function
//! extraction, and the memory-vs-no-memory effect comparison.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::ChainSet;

#[derive(Error, Debug)]
pub enum DiagnosticsError {
    #[error("need at least 2 chains with 4 retained draws each")]
    InsufficientDraws,
    #[error("term `{0}` not present in both fits")]
    TermNotFound(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagWeight {
    pub lag: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryFunction {
    pub var: String,
    pub lags: Vec<LagWeight>,
    /// Lags whose posterior-mean weight exceeds the threshold; their count
    /// is the memory length.
    pub memory_lags: Vec<usize>,
    pub cred_level: f64,
    pub threshold: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Type-7 quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Split-chain potential scale reduction factor: each chain is halved and
/// the classic between/within variance ratio is computed over the split
/// sequences. Returns NaN when the draws are degenerate (zero variance).
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64, DiagnosticsError> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return Err(DiagnosticsError::InsufficientDraws);
    }
    let half = chains.iter().map(|c| c.len()).min().unwrap() / 2;
    let mut splits: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        splits.push(&c[..half]);
        splits.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let vars: Vec<f64> = splits.iter().map(|s| sample_var(s)).collect();
    let w = mean(&vars);
    if w <= 0.0 {
        return Ok(f64::NAN);
    }
    let b = n * sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

fn geyer_ess_one(chain: &[f64]) -> f64 {
    let n = chain.len();
    let m = mean(chain);
    let gamma0: f64 = chain.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 || !gamma0.is_finite() {
        return f64::NAN;
    }
    let autocov = |t: usize| -> f64 {
        (0..n - t)
            .map(|i| (chain[i] - m) * (chain[i + t] - m))
            .sum::<f64>()
            / n as f64
    };
    // Geyer initial positive sequence: accumulate paired autocorrelations
    // while each pair sum stays positive.
    let mut tau = 1.0;
    let mut t = 1;
    while t + 1 < n {
        let pair = (autocov(t) + autocov(t + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        t += 2;
    }
    n as f64 / tau
}

/// Effective sample size: per-chain autocorrelation-sum estimator with
/// Geyer initial-positive-sequence truncation, summed over chains.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for c in chains {
        let e = geyer_ess_one(c);
        if e.is_nan() {
            return f64::NAN;
        }
        total += e;
    }
    total
}

/// Posterior summaries for every parameter plus one memory function per
/// memory covariate. Intervals are equal-tailed at level `cred`; the
/// memory length counts lags with posterior-mean weight above `threshold`.
pub fn summarize(
    chains: &ChainSet,
    cred: f64,
    threshold: f64,
) -> (Vec<ParameterSummary>, Vec<MemoryFunction>) {
    let lo_p = (1.0 - cred) / 2.0;
    let hi_p = 1.0 - lo_p;
    let mut summaries = Vec::with_capacity(chains.names.len());
    for (idx, name) in chains.names.iter().enumerate() {
        let mut pooled = chains.pooled(idx);
        let per_chain = chains.per_chain(idx);
        let m = mean(&pooled);
        let sd = sample_var(&pooled).sqrt();
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rhat = split_rhat(&per_chain).unwrap_or(f64::NAN);
        summaries.push(ParameterSummary {
            name: name.clone(),
            mean: m,
            sd,
            median: quantile_sorted(&pooled, 0.5),
            lower: quantile_sorted(&pooled, lo_p),
            upper: quantile_sorted(&pooled, hi_p),
            rhat,
            ess: effective_sample_size(&per_chain),
        });
    }

    let mut memories = Vec::new();
    for var in chains.memory_vars() {
        let idxs = chains.weight_indices(&var);
        let mut lags = Vec::with_capacity(idxs.len());
        for (lag, &idx) in idxs.iter().enumerate() {
            let s = &summaries[idx];
            lags.push(LagWeight {
                lag,
                mean: s.mean,
                lower: s.lower,
                upper: s.upper,
            });
        }
        let memory_lags = lags
            .iter()
            .filter(|l| l.mean > threshold)
            .map(|l| l.lag)
            .collect();
        memories.push(MemoryFunction {
            var,
            lags,
            memory_lags,
            cred_level: cred,
            threshold,
        });
    }
    (summaries, memories)
}

/// Marginal posterior samples of one regression coefficient from a memory
/// fit and a no-memory baseline fit, for overlaid density display.
#[derive(Debug, Clone)]
pub struct EffectComparison {
    pub term: String,
    pub fit_draws: Vec<f64>,
    pub baseline_draws: Vec<f64>,
}

pub fn effect_comparison(
    fit: &ChainSet,
    baseline: &ChainSet,
    term: &str,
) -> Result<EffectComparison, DiagnosticsError> {
    let name = format!("beta.{term}");
    let fit_idx = fit
        .param_index(&name)
        .ok_or_else(|| DiagnosticsError::TermNotFound(term.to_string()))?;
    let base_idx = baseline
        .param_index(&name)
        .ok_or_else(|| DiagnosticsError::TermNotFound(term.to_string()))?;
    Ok(EffectComparison {
        term: term.to_string(),
        fit_draws: fit.pooled(fit_idx),
        baseline_draws: baseline.pooled(base_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ChainDraws, SamplerConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn chainset_from_columns(names: &[&str], chains: Vec<Vec<Vec<f64>>>) -> ChainSet {
        // chains[c][param][draw]
        let n_params = names.len();
        let built = chains
            .into_iter()
            .map(|cols| {
                let n = cols[0].len();
                let mut values = Vec::with_capacity(n * n_params);
                for i in 0..n {
                    for col in &cols {
                        values.push(col[i]);
                    }
                }
                ChainDraws {
                    values,
                    n_params,
                    acceptance: Vec::new(),
                    proposal_at_burnin: Vec::new(),
                    proposal_at_end: Vec::new(),
                }
            })
            .collect();
        ChainSet {
            names: names.iter().map(|s| s.to_string()).collect(),
            chains: built,
            seeds: vec![],
            config: SamplerConfig::default(),
        }
    }

    #[test]
    fn rhat_degenerate_is_nan() {
        let chains = vec![vec![2.0; 100], vec![2.0; 100]];
        assert!(split_rhat(&chains).unwrap().is_nan());
    }

    #[test]
    fn rhat_iid_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..1000)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();
        let r = split_rhat(&chains).unwrap();
        assert!(r > 0.99 && r < 1.02, "rhat {r}");
    }

    #[test]
    fn rhat_detects_separated_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..500).map(|_| 10.0 + rng.gen::<f64>()).collect();
        assert!(split_rhat(&[a, b].to_vec()).unwrap() > 3.0);
    }

    #[test]
    fn rhat_too_few_draws() {
        assert!(matches!(
            split_rhat(&vec![vec![1.0, 2.0, 3.0]]),
            Err(DiagnosticsError::InsufficientDraws)
        ));
        assert!(matches!(
            split_rhat(&vec![vec![1.0; 3], vec![1.0; 3]]),
            Err(DiagnosticsError::InsufficientDraws)
        ));
    }

    #[test]
    fn rhat_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..400)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();
        let base = split_rhat(&chains).unwrap();
        let shifted: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|x| -3.5 * x + 10.0).collect())
            .collect();
        assert!((split_rhat(&shifted).unwrap() - base).abs() < 1e-10);
    }

    #[test]
    fn ess_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chain: Vec<f64> = (0..1000)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let ess = effective_sample_size(&[chain].to_vec());
        assert!(ess > 800.0 && ess < 1200.0, "ess {ess}");
    }

    #[test]
    fn ess_ar1_matches_theory() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = 0.9;
        let n = 10_000;
        let mut chain = Vec::with_capacity(n);
        let mut x = 0.0;
        for _ in 0..n {
            x = rho * x
                + (1.0 - rho * rho as f64).sqrt()
                    * rng.sample::<f64, _>(rand_distr::StandardNormal);
            chain.push(x);
        }
        let ess = effective_sample_size(&[chain].to_vec());
        let theory = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!(
            (ess - theory).abs() / theory < 0.3,
            "ess {ess} vs theory {theory}"
        );
    }

    #[test]
    fn ess_constant_is_nan() {
        assert!(effective_sample_size(&[vec![1.0; 100]].to_vec()).is_nan());
    }

    #[test]
    fn summarize_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // 11 weight columns jittering around 1/11
        let names: Vec<String> = (0..11).map(|l| format!("w.v1.{l}")).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let chains: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                (0..11)
                    .map(|_| {
                        (0..200)
                            .map(|_| 1.0 / 11.0 + rng.gen_range(-1e-4..1e-4))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let cs = chainset_from_columns(&name_refs, chains);
        let (_, mems) = summarize(&cs, 0.95, 0.01);
        assert_eq!(mems.len(), 1);
        assert_eq!(mems[0].memory_lags, (0..11).collect::<Vec<_>>());
        let total: f64 = mems[0].lags.iter().map(|l| l.mean).sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn interval_levels_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chains: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                vec![(0..500)
                    .map(|_| rng.sample(rand_distr::StandardNormal))
                    .collect()]
            })
            .collect();
        let cs = chainset_from_columns(&["mu"], chains);
        let (narrow, _) = summarize(&cs, 0.5, 0.01);
        let (wide, _) = summarize(&cs, 0.99, 0.01);
        assert!(wide[0].lower <= narrow[0].lower);
        assert!(wide[0].upper >= narrow[0].upper);
        assert!(narrow[0].lower <= narrow[0].median && narrow[0].median <= narrow[0].upper);
        assert!(narrow[0].ess <= 1000.0 + 1e-9);
    }

    #[test]
    fn cred_99_uses_half_percent_tails() {
        // 1..=1000: 0.5% and 99.5% type-7 quantiles
        let draws: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        let cs = chainset_from_columns(&["mu"], vec![vec![draws.clone()], vec![draws]]);
        let (s, _) = summarize(&cs, 0.99, 0.01);
        let mut sorted: Vec<f64> = (1..=1000).flat_map(|i| [i as f64, i as f64]).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((s[0].lower - quantile_sorted(&sorted, 0.005)).abs() < 1e-9);
        assert!((s[0].upper - quantile_sorted(&sorted, 0.995)).abs() < 1e-9);
    }

    #[test]
    fn memory_length_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let names: Vec<String> = (0..6).map(|l| format!("w.v.{l}")).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let weights = [0.5, 0.25, 0.12, 0.08, 0.04, 0.01];
        let chains: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                weights
                    .iter()
                    .map(|&w| (0..100).map(|_| w + rng.gen_range(-1e-3..1e-3)).collect())
                    .collect()
            })
            .collect();
        let cs = chainset_from_columns(&name_refs, chains);
        let mut prev = usize::MAX;
        for threshold in [0.005, 0.02, 0.05, 0.1, 0.3] {
            let (_, mems) = summarize(&cs, 0.95, threshold);
            let n = mems[0].memory_lags.len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn effect_comparison_identical_and_missing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let chains: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| vec![(0..100).map(|_| rng.gen::<f64>()).collect()])
            .collect();
        let cs = chainset_from_columns(&["beta.v1"], chains);
        let cmp = effect_comparison(&cs, &cs, "v1").unwrap();
        assert_eq!(cmp.fit_draws, cmp.baseline_draws);
        assert!(matches!(
            effect_comparison(&cs, &cs, "nope"),
            Err(DiagnosticsError::TermNotFound(_))
        ));
    }
}
