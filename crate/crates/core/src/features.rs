//! Feature table assembly and the selection workflow: zero-variance
//! filter, correlation filter, importance ranking, threshold selection.

use crate::allometry::PlotTotals;
use crate::linalg::{lstsq, r_squared};
use crate::metrics::MetricVector;
use crate::stats::{mean, pearson, sample_variance};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Columns with sample variance below this are treated as constant.
pub const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least {need} rows, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("no feature columns remain")]
    NoColumns,
    #[error("column {name} has {got} values for {rows} rows")]
    RaggedColumn {
        name: String,
        got: usize,
        rows: usize,
    },
    #[error("unknown target {0:?} (expected AGBt or AGBm)")]
    UnknownTarget(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate plot id {0:?}")]
    DuplicatePlot(String),
}

/// Regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "AGBt")]
    Agbt,
    #[serde(rename = "AGBm")]
    Agbm,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Agbt, Target::Agbm];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Agbt => "AGBt",
            Target::Agbm => "AGBm",
        }
    }

    pub fn of(self, totals: &PlotTotals) -> f64 {
        match self {
            Target::Agbt => totals.agbt,
            Target::Agbm => totals.agbm,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AGBt" | "agbt" => Ok(Target::Agbt),
            "AGBm" | "agbm" => Ok(Target::Agbm),
            _ => Err(FeatureError::UnknownTarget(s.to_string())),
        }
    }
}

/// Plots as rows, named numeric columns, and one target.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub plot_ids: Vec<String>,
    pub names: Vec<String>,
    /// Column-major values, one vector per name.
    pub columns: Vec<Vec<f64>>,
    pub target_name: String,
    pub target: Vec<f64>,
}

impl FeatureTable {
    pub fn new(
        plot_ids: Vec<String>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        target_name: impl Into<String>,
        target: Vec<f64>,
    ) -> Result<Self, FeatureError> {
        let rows = plot_ids.len();
        if target.len() != rows {
            return Err(FeatureError::RaggedColumn {
                name: "target".into(),
                got: target.len(),
                rows,
            });
        }
        for (n, c) in names.iter().zip(&columns) {
            if c.len() != rows {
                return Err(FeatureError::RaggedColumn {
                    name: n.clone(),
                    got: c.len(),
                    rows,
                });
            }
        }
        Ok(Self {
            plot_ids,
            names,
            columns,
            target_name: target_name.into(),
            target,
        })
    }

    pub fn rows(&self) -> usize {
        self.plot_ids.len()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Keep only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Self, FeatureError> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| FeatureError::UnknownFeature(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            names: names.to_vec(),
            columns,
            ..self.clone()
        })
    }

    /// Subset of rows by index.
    pub fn rows_subset(&self, idx: &[usize]) -> Self {
        Self {
            plot_ids: idx.iter().map(|&i| self.plot_ids[i].clone()).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            target_name: self.target_name.clone(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
        }
    }

    /// Row-major feature matrix.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    fn retain_columns(&mut self, keep: impl Fn(&str) -> bool) {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for (n, c) in self.names.drain(..).zip(self.columns.drain(..)) {
            if keep(&n) {
                names.push(n);
                columns.push(c);
            }
        }
        self.names = names;
        self.columns = columns;
    }
}

/// Join metric rows with plot totals on `plot_id`. Plots missing from
/// either side are skipped; columns with any missing cell are dropped and
/// their names returned. Rows follow the metric order.
pub fn assemble(
    metrics: &[MetricVector],
    totals: &[PlotTotals],
    target: Target,
) -> Result<(FeatureTable, Vec<String>), FeatureError> {
    let by_id: BTreeMap<&str, &PlotTotals> =
        totals.iter().map(|t| (t.plot_id.as_str(), t)).collect();
    let mut seen = BTreeSet::new();
    let rows: Vec<(&MetricVector, f64)> = metrics
        .iter()
        .filter_map(|m| by_id.get(m.plot_id.as_str()).map(|t| (m, target.of(t))))
        .collect();
    for (m, _) in &rows {
        if !seen.insert(m.plot_id.as_str()) {
            return Err(FeatureError::DuplicatePlot(m.plot_id.clone()));
        }
    }
    if rows.len() < 2 {
        return Err(FeatureError::TooFewRows {
            need: 2,
            have: rows.len(),
        });
    }
    let names: Vec<String> = rows[0].0.names().map(str::to_string).collect();
    let mut kept_names = Vec::new();
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for name in names {
        let col: Option<Vec<f64>> = rows
            .iter()
            .map(|(m, _)| m.get(&name).filter(|v| v.is_finite()))
            .collect();
        match col {
            Some(c) => {
                kept_names.push(name);
                columns.push(c);
            }
            None => dropped.push(name),
        }
    }
    let table = FeatureTable::new(
        rows.iter().map(|(m, _)| m.plot_id.clone()).collect(),
        kept_names,
        columns,
        target.as_str(),
        rows.iter().map(|r| r.1).collect(),
    )?;
    Ok((table, dropped))
}

/// Remove columns whose sample variance is below [`ZERO_VARIANCE`].
pub fn drop_zero_variance(
    table: &FeatureTable,
) -> Result<(FeatureTable, Vec<String>), FeatureError> {
    let mut out = table.clone();
    let dropped: Vec<String> = table
        .names
        .iter()
        .zip(&table.columns)
        .filter(|(_, c)| sample_variance(c) < ZERO_VARIANCE)
        .map(|(n, _)| n.clone())
        .collect();
    let gone: BTreeSet<&str> = dropped.iter().map(String::as_str).collect();
    out.retain_columns(|n| !gone.contains(n));
    if out.names.is_empty() {
        return Err(FeatureError::NoColumns);
    }
    Ok((out, dropped))
}

/// A column removed by the correlation filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedDrop {
    pub name: String,
    /// Already-kept column it correlated with.
    pub against: String,
    pub r: f64,
}

fn abs_r(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b).map_or(0.0, f64::abs)
}

/// Greedy correlation filter. Columns are visited by descending |r| with
/// the target (ties by name); a column is kept when its |r| with every
/// kept column is below `threshold`.
pub fn correlation_filter(
    table: &FeatureTable,
    threshold: f64,
) -> (FeatureTable, Vec<CorrelatedDrop>) {
    let mut order: Vec<(usize, f64)> = table
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (i, abs_r(c, &table.target)))
        .collect();
    order.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| table.names[a.0].cmp(&table.names[b.0]))
    });

    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for (i, _) in order {
        let clash = kept.iter().find_map(|&k| {
            let r = pearson(&table.columns[i], &table.columns[k]).unwrap_or(0.0);
            (r.abs() >= threshold).then_some((k, r))
        });
        match clash {
            Some((k, r)) => dropped.push(CorrelatedDrop {
                name: table.names[i].clone(),
                against: table.names[k].clone(),
                r,
            }),
            None => kept.push(i),
        }
    }
    let names: Vec<String> = kept.iter().map(|&i| table.names[i].clone()).collect();
    let out = table
        .project(&names)
        .expect("kept names come from the table");
    (out, dropped)
}

/// Fraction of target variance explained by a univariate polynomial
/// (degree up to 3) in `x`.
pub fn polynomial_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let degree = 3.min(n.saturating_sub(2));
    let m = mean(x);
    let s = sample_variance(x).sqrt();
    if degree == 0 || s <= 0.0 {
        return 0.0;
    }
    let z: Vec<f64> = x.iter().map(|v| (v - m) / s).collect();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| z[i].powi(j as i32));
    let yv = DVector::from_column_slice(y);
    let mut d = degree;
    let mut mat = design;
    loop {
        if let Some(b) = lstsq(&mat, &yv) {
            let fitted = &mat * b;
            return r_squared(y, fitted.as_slice()).max(0.0);
        }
        if d == 1 {
            return 0.0;
        }
        d -= 1;
        mat = mat.columns(0, d + 1).into_owned();
    }
}

/// Importance per column: polynomial R² with the target, min-max scaled to
/// [0, 1]. A single column, or all-equal raw scores, map to 1.0.
pub fn importance(table: &FeatureTable) -> Result<Vec<(String, f64)>, FeatureError> {
    if table.rows() < 3 {
        return Err(FeatureError::TooFewRows {
            need: 3,
            have: table.rows(),
        });
    }
    if table.names.is_empty() {
        return Err(FeatureError::NoColumns);
    }
    let raw: Vec<f64> = table
        .columns
        .iter()
        .map(|c| polynomial_r2(c, &table.target))
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(table
        .names
        .iter()
        .zip(raw)
        .map(|(n, r)| {
            let s = if span > 1e-15 { (r - lo) / span } else { 1.0 };
            (n.clone(), s)
        })
        .collect())
}

/// Thresholds and caps for [`select`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub correlation_threshold: f64,
    pub importance_threshold: f64,
    pub fallback_k: usize,
    pub min_vars: usize,
    pub max_vars: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            correlation_threshold: 0.5,
            importance_threshold: 0.5,
            fallback_k: 3,
            min_vars: 2,
            max_vars: 5,
        }
    }
}

/// Pick names by importance. Returns the names (best first) and whether
/// the fallback fired because nothing reached the threshold.
pub fn select(scores: &[(String, f64)], cfg: &SelectionConfig) -> (Vec<String>, bool) {
    let mut ranked: Vec<&(String, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let passing = ranked
        .iter()
        .filter(|s| s.1 >= cfg.importance_threshold)
        .count();
    let (take, fallback) = match passing {
        0 => (cfg.fallback_k, true),
        1 => (cfg.min_vars.max(1), false),
        k => (k, false),
    };
    let names = ranked
        .iter()
        .take(take.min(cfg.max_vars))
        .map(|s| s.0.clone())
        .collect();
    (names, fallback)
}

/// Record of one selection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub target: String,
    pub rows: usize,
    pub dropped_missing: Vec<String>,
    pub dropped_zero_variance: Vec<String>,
    pub dropped_correlated: Vec<CorrelatedDrop>,
    pub importance: Vec<(String, f64)>,
    pub selected: Vec<String>,
    pub fallback_used: bool,
}

impl SelectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Zero-variance filter, correlation filter, importance and selection.
pub fn run_selection(
    table: &FeatureTable,
    cfg: &SelectionConfig,
    dropped_missing: Vec<String>,
) -> Result<SelectionReport, FeatureError> {
    let (table, zero) = drop_zero_variance(table)?;
    let (table, correlated) = correlation_filter(&table, cfg.correlation_threshold);
    let scores = importance(&table)?;
    let (selected, fallback_used) = select(&scores, cfg);
    Ok(SelectionReport {
        target: table.target_name.clone(),
        rows: table.rows(),
        dropped_missing,
        dropped_zero_variance: zero,
        dropped_correlated: correlated,
        importance: scores,
        selected,
        fallback_used,
    })
}
