//! Fit persistence: one wide CSV per chain (`chain_<c>.csv`, one row per
//! retained draw, header equal to the parameter manifest including the
//! derived `w.*` columns) plus `fit_meta.json` with everything needed to
//! reproduce or summarize the fit.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BlockStats, ChainDraws, ChainSet, SamplerConfig};
use crate::dataset::{MemorySpec, StandardizationRecord};
use crate::memcore::{Family, Priors};

#[derive(Error, Debug)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed chain file `{file}` at line {line}")]
    MalformedChain { file: String, line: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMeta {
    pub formula: String,
    pub family: Family,
    pub spec: MemorySpec,
    pub priors: Priors,
    pub sampler: SamplerConfig,
    pub seeds: Vec<u64>,
    pub standardization: StandardizationRecord,
    /// Knot vectors per memory covariate, for reproducibility of the basis.
    pub knots: IndexMap<String, Vec<f64>>,
    pub names: Vec<String>,
    /// Per chain, per block.
    pub acceptance: Vec<Vec<BlockStats>>,
    pub wall_time_secs: f64,
    pub trials_column: Option<String>,
}

pub fn write_fit(dir: &Path, chains: &ChainSet, meta: &FitMeta) -> Result<(), StoreError> {
    std::fs::create_dir_all(dir)?;
    for (c, chain) in chains.chains.iter().enumerate() {
        let path = dir.join(format!("chain_{}.csv", c + 1));
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", chains.names.join(","))?;
        for i in 0..chain.n_retained() {
            let row = chain.row(i);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{v}")?;
            }
            writeln!(f)?;
        }
    }
    let meta_file = std::fs::File::create(dir.join("fit_meta.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(meta_file), meta)?;
    Ok(())
}

pub fn read_fit(dir: &Path) -> Result<(ChainSet, FitMeta), StoreError> {
    let meta: FitMeta = serde_json::from_reader(std::fs::File::open(dir.join("fit_meta.json"))?)?;
    let mut chains = Vec::with_capacity(meta.sampler.n_chains);
    for c in 0..meta.sampler.n_chains {
        let name = format!("chain_{}.csv", c + 1);
        let path = dir.join(&name);
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| StoreError::MalformedChain {
            file: name.clone(),
            line: 1,
        })??;
        let n_params = header.split(',').count();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.parse::<f64>()).collect();
            let row = row.map_err(|_| StoreError::MalformedChain {
                file: name.clone(),
                line: lineno + 2,
            })?;
            if row.len() != n_params {
                return Err(StoreError::MalformedChain {
                    file: name.clone(),
                    line: lineno + 2,
                });
            }
            values.extend(row);
        }
        chains.push(ChainDraws {
            values,
            n_params,
            acceptance: meta.acceptance.get(c).cloned().unwrap_or_default(),
            proposal_at_burnin: Vec::new(),
            proposal_at_end: Vec::new(),
        });
    }
    Ok((
        ChainSet {
            names: meta.names.clone(),
            chains,
            seeds: meta.seeds.clone(),
            config: meta.sampler.clone(),
        },
        meta,
    ))
}
