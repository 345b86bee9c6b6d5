//! Long-format time-series ingestion, validation, standardization, and
//! construction of lagged covariate panels.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memcore::Formula;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-contiguous time in group `{group}`: step from {prev} to {next}")]
    NonContiguousTime { group: String, prev: i64, next: i64 },
    #[error("column `{column}` is declared binary but row {row} holds {value}")]
    NonBinaryValue {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("cannot parse `{value}` in column `{column}` at row {row}")]
    InvalidNumber {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{0}` has zero variance; cannot standardize")]
    ZeroVariance(String),
    #[error("no group is longer than the maximum lag {max_lag}; no usable rows")]
    SeriesTooShort { max_lag: usize },
    #[error("covariate `{0}` not present in the dataset")]
    UnknownCovariate(String),
    #[error("memory covariate `{name}`: need 1 <= k <= L+1, got k={k}, L={l}")]
    BadBasisDimension { name: String, k: usize, l: usize },
    #[error("response exceeds trials at row {row} ({response} > {trials})")]
    ResponseExceedsTrials {
        row: usize,
        response: f64,
        trials: f64,
    },
    #[error("trials column `{column}` must be a positive integer at row {row}")]
    InvalidTrials { column: String, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
}

/// One group's contiguous series. All numeric columns (response, trials,
/// covariates) are stored by name; the time axis is implied by
/// `start_time` plus the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: String,
    pub start_time: i64,
    pub columns: IndexMap<String, Vec<f64>>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.columns.values().next().map(|c| c.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-column (mean, sd) captured at standardization time so coefficients
/// can be mapped back to the raw covariate scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub columns: IndexMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub groups: Vec<Group>,
    /// Declared covariate kinds. Columns not listed here (e.g. the response)
    /// are carried through untouched.
    pub kinds: IndexMap<String, CovariateKind>,
    pub standardization: StandardizationRecord,
}

impl TimeSeriesDataset {
    pub fn column_names(&self) -> Vec<String> {
        self.groups
            .first()
            .map(|g| g.columns.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.groups.iter().all(|g| g.columns.contains_key(name))
    }

    /// All values of one column, groups concatenated in order.
    pub fn pooled_column(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let mut out = Vec::new();
        for g in &self.groups {
            let col = g
                .columns
                .get(name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
            out.extend_from_slice(col);
        }
        Ok(out)
    }
}

/// Which covariates receive a memory function and with what maximum lag and
/// basis dimension. `l == 0` marks a degenerate lag-0-only covariate (used
/// by the no-memory baseline model); it carries no spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySpec {
    pub mem_vars: Vec<String>,
    pub l: IndexMap<String, usize>,
    pub k: IndexMap<String, usize>,
}

impl MemorySpec {
    /// Builds a spec with the default basis dimension `min(10, L+1)`.
    pub fn new(lags: &[(&str, usize)]) -> Self {
        let mut mem_vars = Vec::new();
        let mut l = IndexMap::new();
        let mut k = IndexMap::new();
        for &(name, lag) in lags {
            mem_vars.push(name.to_string());
            l.insert(name.to_string(), lag);
            k.insert(name.to_string(), 10.min(lag + 1));
        }
        MemorySpec { mem_vars, l, k }
    }

    pub fn with_basis_dim(mut self, name: &str, k: usize) -> Self {
        self.k.insert(name.to_string(), k);
        self
    }

    /// Memory covariates that actually carry a spline (L >= 1).
    pub fn spline_vars(&self) -> impl Iterator<Item = &String> {
        self.mem_vars.iter().filter(|v| self.l[v.as_str()] >= 1)
    }

    pub fn max_lag(&self) -> usize {
        self.mem_vars
            .iter()
            .map(|v| self.l[v.as_str()])
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self, ds: &TimeSeriesDataset) -> Result<(), DataError> {
        for v in &self.mem_vars {
            if !ds.has_column(v) {
                return Err(DataError::UnknownCovariate(v.clone()));
            }
            let l = self.l[v.as_str()];
            let k = self.k[v.as_str()];
            if l >= 1 && (k < 1 || k > l + 1) {
                return Err(DataError::BadBasisDimension {
                    name: v.clone(),
                    k,
                    l,
                });
            }
        }
        Ok(())
    }
}

/// Lagged design data for one model fit. Rows without `max(L)` points of
/// history are dropped; earlier observations still serve as history for
/// the retained rows. Lag windows never cross group boundaries.
#[derive(Debug, Clone)]
pub struct LagPanel {
    pub response: DVector<f64>,
    pub trials: Option<DVector<f64>>,
    /// Memory covariate name -> n_eff x (L_j + 1) matrix; column l holds
    /// the covariate at lag l.
    pub lagged: IndexMap<String, DMatrix<f64>>,
    /// Non-memory covariate name -> n_eff column.
    pub plain: IndexMap<String, DVector<f64>>,
    pub n_eff: usize,
    pub standardization: StandardizationRecord,
    /// (group id, retained-row count) in panel order.
    pub group_rows: Vec<(String, usize)>,
}

fn parse_cell(raw: &str, column: &str, row: usize) -> Result<f64, DataError> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Err(DataError::MissingValue {
            column: column.to_string(),
            row,
        });
    }
    t.parse::<f64>().map_err(|_| DataError::InvalidNumber {
        column: column.to_string(),
        row,
        value: t.to_string(),
    })
}

/// Reads a long-format CSV. `time_id` must be unit-spaced integers within
/// each group; when `group_id` is `None` the whole file is one group. All
/// columns other than time and group are parsed as numeric.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    time_id: &str,
    group_id: Option<&str>,
    kinds: &IndexMap<String, CovariateKind>,
) -> Result<TimeSeriesDataset, DataError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();

    let time_idx = headers
        .iter()
        .position(|h| h == time_id)
        .ok_or_else(|| DataError::MissingColumn(time_id.to_string()))?;
    let group_idx = match group_id {
        Some(g) => Some(
            headers
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| DataError::MissingColumn(g.to_string()))?,
        ),
        None => None,
    };
    for name in kinds.keys() {
        if !headers.contains(name) {
            return Err(DataError::MissingColumn(name.clone()));
        }
    }

    let value_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != time_idx && Some(*i) != group_idx)
        .map(|(i, h)| (i, h.clone()))
        .collect();

    // Accumulate per group in order of first appearance.
    let mut groups: IndexMap<String, Group> = IndexMap::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let gid = match group_idx {
            Some(i) => record.get(i).unwrap_or("").trim().to_string(),
            None => String::new(),
        };
        let time = parse_cell(record.get(time_idx).unwrap_or(""), time_id, row_no)? as i64;

        let group = groups.entry(gid.clone()).or_insert_with(|| Group {
            id: gid,
            start_time: time,
            columns: value_cols
                .iter()
                .map(|(_, h)| (h.clone(), Vec::new()))
                .collect(),
        });
        let expected = group.start_time + group.len() as i64;
        if time != expected {
            return Err(DataError::NonContiguousTime {
                group: group.id.clone(),
                prev: expected - 1,
                next: time,
            });
        }
        for (idx, name) in &value_cols {
            let v = parse_cell(record.get(*idx).unwrap_or(""), name, row_no)?;
            if v.is_nan() {
                return Err(DataError::MissingValue {
                    column: name.clone(),
                    row: row_no,
                });
            }
            if kinds.get(name) == Some(&CovariateKind::Binary) && v != 0.0 && v != 1.0 {
                return Err(DataError::NonBinaryValue {
                    column: name.clone(),
                    row: row_no,
                    value: v,
                });
            }
            group.columns.get_mut(name).unwrap().push(v);
        }
    }

    Ok(TimeSeriesDataset {
        groups: groups.into_values().collect(),
        kinds: kinds.clone(),
        standardization: StandardizationRecord::default(),
    })
}

/// Writes a dataset back to CSV (column order: group, time, then value
/// columns in stored order). Inverse of [`load_csv`] up to numeric
/// formatting.
pub fn write_csv<P: AsRef<Path>>(path: P, ds: &TimeSeriesDataset) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    let names = ds.column_names();
    // a lone anonymous group is a plain single-series file
    let with_group = ds.groups.len() > 1 || ds.groups.iter().any(|g| !g.id.is_empty());
    if with_group {
        write!(f, "group,")?;
    }
    write!(f, "time")?;
    for n in &names {
        write!(f, ",{n}")?;
    }
    writeln!(f)?;
    for g in &ds.groups {
        for t in 0..g.len() {
            if with_group {
                write!(f, "{},", g.id)?;
            }
            write!(f, "{}", g.start_time + t as i64)?;
            for n in &names {
                write!(f, ",{}", g.columns[n.as_str()][t])?;
            }
            writeln!(f)?;
        }
    }
    Ok(())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Centers and scales each continuous covariate to sample mean 0 and sd 1
/// (n-1 denominator), pooled across groups. Binary covariates are left as
/// 0/1. Returns the transformed dataset with its standardization record.
pub fn standardize(ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset, DataError> {
    let mut out = ds.clone();
    let mut record = ds.standardization.clone();
    for (name, kind) in &ds.kinds {
        if *kind != CovariateKind::Continuous {
            continue;
        }
        let pooled = ds.pooled_column(name)?;
        let (mean, sd) = mean_sd(&pooled);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(DataError::ZeroVariance(name.clone()));
        }
        for g in &mut out.groups {
            for v in g.columns.get_mut(name.as_str()).unwrap() {
                *v = (*v - mean) / sd;
            }
        }
        record.columns.insert(name.clone(), (mean, sd));
    }
    out.standardization = record;
    Ok(out)
}

/// Assembles the lagged design panel for `formula` under `spec`. Rows whose
/// lag window would cross a group start are dropped; each retained row t of
/// a memory covariate's matrix holds (x_t, x_{t-1}, ..., x_{t-L}).
pub fn build_lag_panel(
    ds: &TimeSeriesDataset,
    spec: &MemorySpec,
    formula: &Formula,
    trials_col: Option<&str>,
) -> Result<LagPanel, DataError> {
    spec.validate(ds)?;
    if !ds.has_column(&formula.response) {
        return Err(DataError::MissingColumn(formula.response.clone()));
    }
    let mut plain_vars: BTreeSet<String> = BTreeSet::new();
    for name in formula.variables() {
        if !ds.has_column(&name) {
            return Err(DataError::UnknownCovariate(name.clone()));
        }
        if !spec.mem_vars.contains(&name) {
            plain_vars.insert(name);
        }
    }

    let max_lag = spec.max_lag();
    let n_eff: usize = ds
        .groups
        .iter()
        .map(|g| g.len().saturating_sub(max_lag))
        .sum();
    if n_eff == 0 {
        return Err(DataError::SeriesTooShort { max_lag });
    }

    let mut response = Vec::with_capacity(n_eff);
    let mut trials: Option<Vec<f64>> = trials_col.map(|_| Vec::with_capacity(n_eff));
    let mut lagged: IndexMap<String, DMatrix<f64>> = spec
        .mem_vars
        .iter()
        .map(|v| {
            let l = spec.l[v.as_str()];
            (v.clone(), DMatrix::zeros(n_eff, l + 1))
        })
        .collect();
    let mut plain: IndexMap<String, Vec<f64>> = plain_vars
        .iter()
        .map(|v| (v.clone(), Vec::with_capacity(n_eff)))
        .collect();
    let mut group_rows = Vec::new();

    let mut row = 0usize;
    for g in &ds.groups {
        if g.len() <= max_lag {
            continue;
        }
        let y = &g.columns[formula.response.as_str()];
        let tr = match trials_col {
            Some(c) => Some(
                g.columns
                    .get(c)
                    .ok_or_else(|| DataError::MissingColumn(c.to_string()))?,
            ),
            None => None,
        };
        let kept = g.len() - max_lag;
        for t in max_lag..g.len() {
            response.push(y[t]);
            if let (Some(acc), Some(col)) = (trials.as_mut(), tr) {
                acc.push(col[t]);
            }
            for v in &spec.mem_vars {
                let x = &g.columns[v.as_str()];
                let mat = lagged.get_mut(v.as_str()).unwrap();
                for lag in 0..=spec.l[v.as_str()] {
                    mat[(row, lag)] = x[t - lag];
                }
            }
            for v in &plain_vars {
                plain
                    .get_mut(v.as_str())
                    .unwrap()
                    .push(g.columns[v.as_str()][t]);
            }
            row += 1;
        }
        group_rows.push((g.id.clone(), kept));
    }
    debug_assert_eq!(row, n_eff);

    Ok(LagPanel {
        response: DVector::from_vec(response),
        trials: trials.map(DVector::from_vec),
        lagged,
        plain: plain
            .into_iter()
            .map(|(k, v)| (k, DVector::from_vec(v)))
            .collect(),
        n_eff,
        standardization: ds.standardization.clone(),
        group_rows,
    })
}

/// Binomial-family validation: trials positive integers and response within
/// [0, trials] row by row.
pub fn validate_binomial(panel: &LagPanel) -> Result<(), DataError> {
    let trials = panel.trials.as_ref().ok_or_else(|| {
        DataError::MissingColumn("trials column required for binomial family".into())
    })?;
    for (row, (&y, &n)) in panel.response.iter().zip(trials.iter()).enumerate() {
        if n < 1.0 || n.fract() != 0.0 {
            return Err(DataError::InvalidTrials {
                column: "trials".into(),
                row,
            });
        }
        if y > n {
            return Err(DataError::ResponseExceedsTrials {
                row,
                response: y,
                trials: n,
            });
        }
    }
    Ok(())
}
