//! Shared setup for the benchmarks: the canonical recovery scenario turned
//! into a ready-to-sample lag panel.

use indexmap::IndexMap;

use ecomem::simulate::{canonical_scenario, generate};
use ecomem::{
    build_design, build_lag_panel, standardize, Family, LagPanel, MemorySpec, ModelConfig, Priors,
    SplineDesign,
};

/// Canonical Poisson panel (T = 120, two memory covariates) plus the spline
/// designs and model configuration used throughout the benchmarks.
pub fn canonical_setup() -> (LagPanel, IndexMap<String, SplineDesign>, ModelConfig) {
    let scenario = canonical_scenario(21);
    let (ds, _) = generate(&scenario).expect("canonical scenario generates");
    let ds = standardize(&ds).expect("standardize");

    let formula = ecomem::parse_formula("y ~ v1*v2 + v2*v3").expect("formula parses");
    let spec = MemorySpec::new(&[("v1", 10), ("v2", 6)]);
    let panel = build_lag_panel(&ds, &spec, &formula, None).expect("panel builds");

    let mut designs = IndexMap::new();
    for var in spec.spline_vars() {
        let design = build_design(spec.l[var.as_str()], spec.k[var.as_str()]).expect("design");
        designs.insert(var.clone(), design);
    }

    let n = panel.response.len() as f64;
    let mean = panel.response.mean();
    let sd = (panel
        .response
        .iter()
        .map(|y| (y - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    let config = ModelConfig {
        family: Family::Poisson,
        formula,
        spec,
        priors: Priors::default_for(sd),
    };
    (panel, designs, config)
}
