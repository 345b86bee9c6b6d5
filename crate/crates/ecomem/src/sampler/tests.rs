use super::*;
use crate::dataset::{LagPanel, MemorySpec, StandardizationRecord};
use crate::memcore::{parse_formula, Priors};
use crate::splinebasis::build_design;
use approx::assert_abs_diff_eq;
use rand_chacha::ChaCha8Rng;

/// Gaussian panel with one memory covariate (L=4, k=4) and one plain
/// covariate, response linear in the uniform-filtered memory column.
fn gaussian_fixture(
    n: usize,
    seed: u64,
) -> (LagPanel, IndexMap<String, SplineDesign>, ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = 4usize;
    let total = n + l;
    let series: Vec<f64> = (0..total).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let plain: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mut lagged = DMatrix::zeros(n, l + 1);
    for row in 0..n {
        for lag in 0..=l {
            lagged[(row, lag)] = series[row + l - lag];
        }
    }
    let w_true = DVector::from_element(l + 1, 1.0 / (l + 1) as f64);
    let filtered = &lagged * w_true;
    let response = DVector::from_fn(n, |i, _| {
        0.5 + 1.2 * filtered[i] - 0.7 * plain[i] + rng.sample::<f64, _>(StandardNormal)
    });
    let panel = LagPanel {
        response,
        trials: None,
        lagged: [("v1".to_string(), lagged)].into_iter().collect(),
        plain: [("v2".to_string(), DVector::from_vec(plain))]
            .into_iter()
            .collect(),
        n_eff: n,
        standardization: StandardizationRecord::default(),
        group_rows: vec![(String::new(), n)],
    };
    let designs: IndexMap<String, SplineDesign> = [("v1".to_string(), build_design(l, 4).unwrap())]
        .into_iter()
        .collect();
    let config = ModelConfig {
        family: Family::Poisson, // replaced below
        formula: parse_formula("y ~ v1 + v2").unwrap(),
        spec: MemorySpec::new(&[("v1", l)]).with_basis_dim("v1", 4),
        priors: Priors::default_for(1.0),
    };
    (
        panel,
        designs,
        ModelConfig {
            family: Family::Gaussian,
            ..config
        },
    )
}

fn small_config(seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_chains: 2,
        n_iter: 600,
        burn_in: 300,
        thin: 3,
        base_seed: seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_chains() {
    let (panel, designs, config) = gaussian_fixture(60, 42);
    let cfg = small_config(7);
    let a = run_chains(&panel, &designs, &config, &cfg).unwrap();
    let b = run_chains(&panel, &designs, &config, &cfg).unwrap();
    assert_eq!(a.names, b.names);
    for (ca, cb) in a.chains.iter().zip(b.chains.iter()) {
        assert_eq!(ca.values, cb.values);
    }
}

#[test]
fn different_seeds_differ() {
    let (panel, designs, config) = gaussian_fixture(60, 42);
    let a = run_chains(&panel, &designs, &config, &small_config(7)).unwrap();
    let b = run_chains(&panel, &designs, &config, &small_config(8)).unwrap();
    assert_ne!(a.chains[0].values, b.chains[0].values);
}

#[test]
fn retained_draw_count_matches_config() {
    let (panel, designs, config) = gaussian_fixture(40, 1);
    let cfg = SamplerConfig {
        n_chains: 1,
        n_iter: 105,
        burn_in: 40,
        thin: 7,
        base_seed: 3,
        ..SamplerConfig::default()
    };
    let out = run_chains(&panel, &designs, &config, &cfg).unwrap();
    assert_eq!(out.chains[0].n_retained(), (105 - 40) / 7);
}

#[test]
fn conjugate_moments_match_direct_linear_algebra() {
    let (panel, designs, config) = gaussian_fixture(80, 5);
    let model = Model::new(&panel, &designs, &config);
    let mut state = model.initial_state();
    state.sigma2 = 1.3;
    let (mean, cov) = gaussian_conjugate_moments(&model, &state).unwrap();

    // independent oracle: build the design by hand
    let tm = model.term_matrix(&state);
    let n = panel.n_eff;
    let mut x = DMatrix::zeros(n, 3);
    x.column_mut(0).fill(1.0);
    x.columns_mut(1, 2).copy_from(&tm);
    let prec = (x.transpose() * &x).unscale(1.3) + DMatrix::identity(3, 3).scale(1.0 / 10000.0);
    let cov_expected = prec.clone().try_inverse().unwrap();
    let mean_expected = &cov_expected * (x.transpose() * &panel.response).unscale(1.3);
    for i in 0..3 {
        assert_abs_diff_eq!(mean[i], mean_expected[i], epsilon = 1e-8);
        for j in 0..3 {
            assert_abs_diff_eq!(cov[(i, j)], cov_expected[(i, j)], epsilon = 1e-8);
        }
    }
}

#[test]
fn conjugate_draws_match_closed_form_moments() {
    let (panel, designs, config) = gaussian_fixture(80, 6);
    let model = Model::new(&panel, &designs, &config);
    let mut state = model.initial_state();
    state.sigma2 = 1.0;
    let (mean, cov) = gaussian_conjugate_moments(&model, &state).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n_draws = 20_000usize;
    let mut sums = DVector::<f64>::zeros(3);
    for _ in 0..n_draws {
        let mut s = state.clone();
        update_gaussian_conjugate(&model, &mut s, &mut rng).unwrap();
        sums[0] += s.mu;
        sums[1] += s.beta[0];
        sums[2] += s.beta[1];
    }
    for i in 0..3 {
        let se = (cov[(i, i)] / n_draws as f64).sqrt();
        assert!(
            (sums[i] / n_draws as f64 - mean[i]).abs() < 4.0 * se,
            "component {i}: {} vs {} (se {se})",
            sums[i] / n_draws as f64,
            mean[i]
        );
    }
}

#[test]
fn zero_variance_covariate_gives_singular_gram() {
    let (mut panel, designs, config) = gaussian_fixture(50, 9);
    panel
        .plain
        .insert("v2".to_string(), DVector::from_element(50, 2.0));
    let model = Model::new(&panel, &designs, &config);
    let state = model.initial_state();
    assert!(matches!(
        gaussian_conjugate_moments(&model, &state),
        Err(SamplerError::SingularGram)
    ));
}

#[test]
fn fixed_weight_fit_recovers_conjugate_posterior_mean() {
    let (panel, designs, config) = gaussian_fixture(120, 11);
    let cfg = SamplerConfig {
        n_chains: 2,
        n_iter: 4000,
        burn_in: 1000,
        thin: 1,
        base_seed: 77,
        fix_weights: true,
        ..SamplerConfig::default()
    };
    let out = run_chains(&panel, &designs, &config, &cfg).unwrap();

    // oracle: conjugate posterior mean at the true noise variance
    let model = Model::new(&panel, &designs, &config);
    let mut state = model.initial_state();
    state.sigma2 = 1.0;
    let (mean, _) = gaussian_conjugate_moments(&model, &state).unwrap();

    for (name, oracle_idx) in [("mu", 0usize), ("beta.v1", 1), ("beta.v2", 2)] {
        let idx = out.param_index(name).unwrap();
        let draws = out.pooled(idx);
        let n = draws.len() as f64;
        let m = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        // draws are conjugate given sigma2, so serial correlation is weak;
        // budget a 5x inflation for the sigma2 coupling
        let se = sd / n.sqrt() * 5.0;
        assert!(
            (m - mean[oracle_idx]).abs() < 3.0 * se.max(0.01),
            "{name}: {m} vs {} (se {se})",
            mean[oracle_idx]
        );
    }
}

#[test]
fn mh_log_ratio_is_antisymmetric() {
    let (panel, designs, config) = gaussian_fixture(40, 12);
    let model = Model::new(&panel, &designs, &config);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let mut a = model.initial_state();
        a.mu = rng.gen_range(-1.0..1.0);
        let mut b = a.clone();
        b.mu = rng.gen_range(-1.0..1.0);
        b.beta[0] = rng.gen_range(-1.0..1.0);
        let fwd = model.log_posterior_sampled(&b) - model.log_posterior_sampled(&a);
        let bwd = model.log_posterior_sampled(&a) - model.log_posterior_sampled(&b);
        assert_abs_diff_eq!(fwd, -bwd, epsilon = 1e-12);
    }
}

#[test]
fn draws_satisfy_support_and_simplex_invariants() {
    let (panel, designs, config) = gaussian_fixture(60, 13);
    let out = run_chains(&panel, &designs, &config, &small_config(21)).unwrap();
    let tau_idx = out.param_index("tau.v1").unwrap();
    let s2_idx = out.param_index("sigma2").unwrap();
    let w_idx = out.weight_indices("v1");
    assert_eq!(w_idx.len(), 5);
    for chain in &out.chains {
        for i in 0..chain.n_retained() {
            let row = chain.row(i);
            assert!(row[tau_idx] > 0.0);
            assert!(row[s2_idx] > 0.0);
            let total: f64 = w_idx.iter().map(|&j| row[j]).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(w_idx.iter().all(|&j| row[j] > 0.0));
        }
    }
}

#[test]
fn adaptation_is_frozen_after_burn_in() {
    let (panel, designs, config) = gaussian_fixture(60, 14);
    let out = run_chains(&panel, &designs, &config, &small_config(5)).unwrap();
    for chain in &out.chains {
        assert!(!chain.proposal_at_burnin.is_empty());
        assert_eq!(chain.proposal_at_burnin, chain.proposal_at_end);
    }
}

#[test]
fn nonfinite_response_is_rejected_at_start() {
    let (mut panel, designs, config) = gaussian_fixture(30, 15);
    panel.response[3] = f64::NAN;
    let err = run_chains(&panel, &designs, &config, &small_config(1)).unwrap_err();
    assert!(matches!(err, SamplerError::NonFiniteStart));
}

#[test]
fn bad_config_is_rejected() {
    let (panel, designs, config) = gaussian_fixture(30, 16);
    let cfg = SamplerConfig {
        burn_in: 700,
        n_iter: 600,
        ..small_config(1)
    };
    assert!(matches!(
        run_chains(&panel, &designs, &config, &cfg),
        Err(SamplerError::BadConfig(_))
    ));
}

#[test]
fn store_round_trip() {
    let (panel, designs, config) = gaussian_fixture(40, 17);
    let out = run_chains(&panel, &designs, &config, &small_config(2)).unwrap();
    let meta = FitMeta {
        formula: config.formula.to_string(),
        family: config.family,
        spec: config.spec.clone(),
        priors: config.priors.clone(),
        sampler: out.config.clone(),
        seeds: out.seeds.clone(),
        standardization: StandardizationRecord::default(),
        knots: designs
            .iter()
            .map(|(k, d)| (k.clone(), d.knots.clone()))
            .collect(),
        names: out.names.clone(),
        acceptance: out.chains.iter().map(|c| c.acceptance.clone()).collect(),
        wall_time_secs: 0.0,
        trials_column: None,
    };
    let dir = tempfile::tempdir().unwrap();
    write_fit(dir.path(), &out, &meta).unwrap();
    let (back, meta2) = read_fit(dir.path()).unwrap();
    assert_eq!(back.names, out.names);
    assert_eq!(meta2.formula, meta.formula);
    for (a, b) in back.chains.iter().zip(out.chains.iter()) {
        assert_eq!(a.n_retained(), b.n_retained());
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert_eq!(x, y);
        }
    }
}

/// With the likelihood flat in eta (beta = 0, coefficient block not
/// updated), the eta/tau Gibbs blocks must leave the weight prior
/// invariant. Oracle: direct sampling from the hierarchical prior.
#[test]
fn eta_chain_matches_prior_when_beta_zero() {
    let (panel, mut designs, config) = gaussian_fixture(40, 18);
    // full-rank penalty: the default second-difference penalty leaves the
    // linear-ramp direction essentially free (variance 1/ridge), which
    // saturates the softmax and is not traversable by a finite chain
    designs["v1"].s = DMatrix::identity(4, 4);
    let model = Model::new(&panel, &designs, &config);
    let mut state = model.initial_state();
    state.mu = panel.response.mean();
    state.beta = DVector::zeros(2);
    state.eta.insert(
        "v1".to_string(),
        DVector::from_vec(vec![0.4, -0.1, 0.2, -0.5]),
    );
    let cfg = SamplerConfig::default();
    let mut lp = model.log_posterior_sampled(&state);
    let mut eta_block = AdaptiveBlock::new("eta.v1", 4);
    let mut tau_block = AdaptiveBlock::new("tau.v1", 1);
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    let design = &designs["v1"];
    let n_keep = 6000;
    let mut mean_w = DVector::zeros(5);
    let mut kept = 0usize;
    for iter in 0..(2000 + n_keep * 5) {
        update_eta_block(
            &model,
            &mut state,
            "v1",
            &mut lp,
            &mut eta_block,
            &cfg,
            &mut rng,
        );
        update_tau(
            &model,
            &mut state,
            "v1",
            &mut lp,
            &mut tau_block,
            &cfg,
            &mut rng,
        );
        if iter >= 2000 && iter % 5 == 0 {
            mean_w += compute_weights(&state.eta["v1"], design);
            kept += 1;
        }
    }
    mean_w /= kept as f64;

    // direct prior sampling: tau ~ folded-t(3, 1), eta | tau ~ N(0, tau^2 (S+eps I)^-1)
    let ridged = design.s.clone() + DMatrix::identity(4, 4).scale(crate::memcore::RIDGE);
    let cov_chol = Cholesky::new(ridged.try_inverse().unwrap()).unwrap();
    let mut oracle_w = DVector::zeros(5);
    let n_oracle = 40_000;
    for _ in 0..n_oracle {
        let z: f64 = rng.sample(StandardNormal);
        let chi: f64 = (0..3)
            .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
            .sum();
        let tau = (z * (3.0 / chi).sqrt()).abs();
        let noise = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eta = (cov_chol.l() * noise).scale(tau);
        oracle_w += compute_weights(&eta, design);
    }
    oracle_w /= n_oracle as f64;

    for lag in 0..5 {
        assert!(
            (mean_w[lag] - oracle_w[lag]).abs() < 0.03,
            "lag {lag}: chain {} vs prior {}",
            mean_w[lag],
            oracle_w[lag]
        );
    }
}

/// With a flat likelihood and eta held fixed, the tau conditional is
/// folded-t(tau) * tau^-(k-1) * exp(-Q / (2 tau^2)) with Q the ridged
/// quadratic form. Oracle: inverse-CDF sampling on a dense grid.
#[test]
fn tau_chain_matches_grid_conditional() {
    let (panel, designs, config) = gaussian_fixture(40, 19);
    let model = Model::new(&panel, &designs, &config);
    let mut state = model.initial_state();
    state.beta = DVector::zeros(2);
    state.mu = panel.response.mean();
    let eta = DVector::from_vec(vec![0.8, -0.2, 0.3, -0.9]);
    state.eta.insert("v1".to_string(), eta.clone());
    let cfg = SamplerConfig::default();
    let mut lp = model.log_posterior_sampled(&state);
    let mut tau_block = AdaptiveBlock::new("tau.v1", 1);
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    let mut draws = Vec::new();
    for iter in 0..60_000 {
        update_tau(
            &model,
            &mut state,
            "v1",
            &mut lp,
            &mut tau_block,
            &cfg,
            &mut rng,
        );
        if iter >= 5000 && iter % 5 == 0 {
            draws.push(state.tau["v1"]);
        }
    }
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let ridged = designs["v1"].s.clone() + DMatrix::identity(4, 4).scale(crate::memcore::RIDGE);
    let q = (eta.transpose() * &ridged * &eta)[0];
    let grid: Vec<f64> = (1..400_000).map(|i| i as f64 * 1e-4).collect();
    let dens: Vec<f64> = grid
        .iter()
        .map(|&t| {
            (crate::memcore::ln_half_t_pdf(t, 3.0, 1.0) - 3.0 * t.ln() - q / (2.0 * t * t)).exp()
        })
        .collect();
    let total: f64 = dens.iter().sum();
    let oracle_quantile = |p: f64| {
        let mut acc = 0.0;
        for (t, d) in grid.iter().zip(dens.iter()) {
            acc += d;
            if acc >= total * p {
                return *t;
            }
        }
        *grid.last().unwrap()
    };
    for p in [0.25, 0.5, 0.75] {
        let chain_q = draws[(draws.len() as f64 * p) as usize];
        let oracle_q = oracle_quantile(p);
        assert!(
            (chain_q - oracle_q).abs() / oracle_q < 0.1,
            "p={p}: chain {chain_q} vs oracle {oracle_q}"
        );
    }
}

/// Doubling the folded-t scale moves the tau posterior upward under a flat
/// likelihood.
#[test]
fn tau_prior_scale_shifts_posterior() {
    let run = |scale: f64| {
        let (panel, designs, mut config) = gaussian_fixture(40, 20);
        config.priors.tau_scale = scale;
        let model = Model::new(&panel, &designs, &config);
        let mut state = model.initial_state();
        state.beta = DVector::zeros(2);
        state.eta.insert(
            "v1".to_string(),
            DVector::from_vec(vec![0.8, -0.2, 0.3, -0.9]),
        );
        let cfg = SamplerConfig::default();
        let mut lp = model.log_posterior_sampled(&state);
        let mut block = AdaptiveBlock::new("tau.v1", 1);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut draws = Vec::new();
        for iter in 0..30_000 {
            update_tau(
                &model, &mut state, "v1", &mut lp, &mut block, &cfg, &mut rng,
            );
            if iter >= 3000 && iter % 5 == 0 {
                draws.push(state.tau["v1"]);
            }
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        draws[draws.len() / 2]
    };
    assert!(run(2.0) > run(1.0));
}
