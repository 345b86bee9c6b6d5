//! Command-line pipeline: simulate -> fit -> summarize -> plot -> compare.
//!
//! Exit codes: 0 success, 2 usage/validation error, 3 fit completed with a
//! convergence warning (some split R-hat above 1.1; outputs are written
//! anyway).

pub mod svg;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;

use ecomem::dataset::write_csv;
use ecomem::diagnostics::{effect_comparison, summarize};
use ecomem::memcore::parse_formula;
use ecomem::sampler::{read_fit, run_chains, write_fit, FitMeta};
use ecomem::simulate::{canonical_scenario, generate, SimScenario};
use ecomem::{
    build_design, build_lag_panel, load_csv, standardize, CovariateKind, Family, MemorySpec,
    ModelConfig, Priors, SamplerConfig, SplineDesign,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CliError(pub String);

impl CliError {
    fn new(msg: impl std::fmt::Display) -> CliError {
        CliError(msg.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "ecomem",
    about = "Quantify ecological memory in environmental time series",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with known memory functions
    Simulate(SimulateArgs),
    /// Fit the memory model by MCMC and persist the chains
    Fit(FitArgs),
    /// Summarize a fit: parameter table and memory functions
    Summary(SummaryArgs),
    /// Render memory-function ribbon plots as SVG
    Plot(PlotArgs),
    /// Overlay a coefficient's posterior against a no-memory baseline fit
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON; the built-in recovery scenario when omitted
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model formula, e.g. "y ~ v1*v2 + v2*v3"
    #[arg(long)]
    pub formula: String,
    /// gaussian | poisson | binomial
    #[arg(long)]
    pub family: String,
    /// Comma-separated memory covariates, e.g. v1,v2
    #[arg(long, value_delimiter = ',')]
    pub mem_vars: Vec<String>,
    /// Comma-separated maximum lags, parallel to --mem-vars
    #[arg(long, value_delimiter = ',')]
    pub lags: Vec<usize>,
    #[arg(long, default_value = "time")]
    pub time_id: String,
    #[arg(long)]
    pub group_id: Option<String>,
    /// Covariates to treat as binary (skipped by standardization)
    #[arg(long, value_delimiter = ',')]
    pub binary_vars: Vec<String>,
    /// Trials column (binomial family)
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SummaryArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub cred: f64,
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// truth.json from the simulator, overlaid for reference
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub cred: f64,
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub term: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Summary(a) => cmd_summary(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut scenario: SimScenario = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(format!("bad scenario {}: {e}", path.display())))?
        }
        None => canonical_scenario(args.seed.unwrap_or(0)),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let (ds, truth) = generate(&scenario).map_err(CliError::new)?;
    std::fs::create_dir_all(&args.out).map_err(CliError::new)?;
    write_csv(args.out.join("data.csv"), &ds).map_err(CliError::new)?;
    let truth_json = serde_json::to_string_pretty(&truth).map_err(CliError::new)?;
    std::fs::write(args.out.join("truth.json"), truth_json).map_err(CliError::new)?;
    println!(
        "wrote {} rows x {} group(s) to {}",
        scenario.t,
        scenario.n_groups,
        args.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    if args.mem_vars.len() != args.lags.len() {
        return Err(CliError::new(format!(
            "--mem-vars lists {} name(s) but --lags lists {} value(s)",
            args.mem_vars.len(),
            args.lags.len()
        )));
    }
    if args.mem_vars.is_empty() {
        return Err(CliError::new("--mem-vars must name at least one covariate"));
    }
    let family = Family::parse(&args.family)
        .ok_or_else(|| CliError::new(format!("unknown family `{}`", args.family)))?;
    let formula = parse_formula(&args.formula).map_err(CliError::new)?;

    let kinds: IndexMap<String, CovariateKind> = formula
        .variables()
        .into_iter()
        .map(|v| {
            let kind = if args.binary_vars.contains(&v) {
                CovariateKind::Binary
            } else {
                CovariateKind::Continuous
            };
            (v, kind)
        })
        .collect();
    let ds = load_csv(&args.data, &args.time_id, args.group_id.as_deref(), &kinds)
        .map_err(CliError::new)?;
    let ds = standardize(&ds).map_err(CliError::new)?;

    let lag_pairs: Vec<(&str, usize)> = args
        .mem_vars
        .iter()
        .map(|v| v.as_str())
        .zip(args.lags.iter().cloned())
        .collect();
    let spec = MemorySpec::new(&lag_pairs);

    let panel =
        build_lag_panel(&ds, &spec, &formula, args.trials.as_deref()).map_err(CliError::new)?;
    if family == Family::Binomial {
        ecomem::dataset::validate_binomial(&panel).map_err(CliError::new)?;
    }

    let mut designs: IndexMap<String, SplineDesign> = IndexMap::new();
    for var in spec.spline_vars() {
        let design =
            build_design(spec.l[var.as_str()], spec.k[var.as_str()]).map_err(CliError::new)?;
        designs.insert(var.clone(), design);
    }

    let n = panel.response.len() as f64;
    let mean = panel.response.mean();
    let response_sd = (panel
        .response
        .iter()
        .map(|y| (y - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    let config = ModelConfig {
        family,
        formula,
        spec,
        priors: Priors::default_for(response_sd),
    };
    let sconfig = SamplerConfig {
        n_chains: args.chains,
        n_iter: args.iters,
        burn_in: args.burn_in,
        thin: args.thin,
        base_seed: args.seed,
        ..SamplerConfig::default()
    };

    let start = Instant::now();
    let chains = run_chains(&panel, &designs, &config, &sconfig).map_err(CliError::new)?;
    let wall = start.elapsed().as_secs_f64();

    let meta = FitMeta {
        formula: args.formula.clone(),
        family,
        spec: config.spec.clone(),
        priors: config.priors.clone(),
        sampler: sconfig,
        seeds: chains.seeds.clone(),
        standardization: panel.standardization.clone(),
        knots: designs
            .iter()
            .map(|(k, d)| (k.clone(), d.knots.clone()))
            .collect(),
        names: chains.names.clone(),
        acceptance: chains.chains.iter().map(|c| c.acceptance.clone()).collect(),
        wall_time_secs: wall,
        trials_column: args.trials.clone(),
    };
    write_fit(&args.out, &chains, &meta).map_err(CliError::new)?;

    for (c, chain) in chains.chains.iter().enumerate() {
        let rates: Vec<String> = chain
            .acceptance
            .iter()
            .map(|b| format!("{} {:.2}", b.name, b.rate()))
            .collect();
        println!("chain {}: acceptance {}", c + 1, rates.join(", "));
    }

    let (summaries, _) = summarize(&chains, 0.95, 0.01);
    let max_rhat = summaries
        .iter()
        .filter(|s| !s.rhat.is_nan())
        .map(|s| s.rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "wrote {} chains x {} draws to {} in {:.1}s; max split R-hat {:.3}",
        chains.chains.len(),
        chains.chains[0].n_retained(),
        args.out.display(),
        wall,
        max_rhat
    );
    if max_rhat > 1.1 {
        eprintln!("warning: split R-hat above 1.1; chains may not have converged");
        return Ok(EXIT_CONVERGENCE);
    }
    Ok(EXIT_OK)
}

pub fn cmd_summary(args: &SummaryArgs) -> Result<i32> {
    if !(args.cred > 0.0 && args.cred < 1.0) {
        return Err(CliError::new("--cred must lie in (0, 1)"));
    }
    let (chains, _) = read_fit(&args.fit).map_err(CliError::new)?;
    let (summaries, memories) = summarize(&chains, args.cred, args.threshold);

    let mut table = String::from("name,mean,sd,lower,upper,rhat,ess\n");
    for s in &summaries {
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.name, s.mean, s.sd, s.lower, s.upper, s.rhat, s.ess
        ));
    }
    std::fs::write(args.fit.join("summary.csv"), table).map_err(CliError::new)?;

    for mem in &memories {
        let mut rows = String::from("lag,mean,lower,upper\n");
        for l in &mem.lags {
            rows.push_str(&format!("{},{},{},{}\n", l.lag, l.mean, l.lower, l.upper));
        }
        std::fs::write(args.fit.join(format!("memory_{}.csv", mem.var)), rows)
            .map_err(CliError::new)?;
        println!(
            "{}: memory over lags {:?} (mean weight > {})",
            mem.var, mem.memory_lags, mem.threshold
        );
    }
    for s in summaries
        .iter()
        .filter(|s| !s.name.starts_with("eta.") && !s.name.starts_with("w."))
    {
        println!(
            "{:<14} mean {:>9.4}  sd {:>8.4}  [{:>9.4}, {:>9.4}]  rhat {:>6.3}  ess {:>7.0}",
            s.name, s.mean, s.sd, s.lower, s.upper, s.rhat, s.ess
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<i32> {
    let (chains, _) = read_fit(&args.fit).map_err(CliError::new)?;
    let (_, memories) = summarize(&chains, args.cred, args.threshold);
    if memories.is_empty() {
        return Err(CliError::new("fit has no memory covariates to plot"));
    }
    let truth = match &args.truth {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
            Some(serde_json::from_str(&text).map_err(CliError::new)?)
        }
        None => None,
    };
    let svg = svg::memory_plot(&memories, truth.as_ref());
    write_svg(&args.out, &svg)?;
    println!(
        "wrote {} panel(s) to {}",
        memories.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let (fit, _) = read_fit(&args.fit).map_err(CliError::new)?;
    let (baseline, _) = read_fit(&args.baseline).map_err(CliError::new)?;
    let cmp = effect_comparison(&fit, &baseline, &args.term).map_err(CliError::new)?;
    let svg = svg::compare_plot(&cmp);
    write_svg(&args.out, &svg)?;
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    println!(
        "beta.{}: memory fit mean {:.4}, baseline mean {:.4}",
        args.term,
        mean(&cmp.fit_draws),
        mean(&cmp.baseline_draws)
    );
    Ok(EXIT_OK)
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(CliError::new)?;
        }
    }
    std::fs::write(path, svg).map_err(CliError::new)
}
