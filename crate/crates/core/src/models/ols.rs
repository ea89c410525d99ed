use super::{columns_for, ModelError};
use crate::features::FeatureTable;
use crate::linalg::lstsq;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Leave-one-out RMSE of the winning subset.
    pub loo_rmse: f64,
    /// Subsets skipped because their design was rank-deficient.
    pub skipped: Vec<Vec<String>>,
}

impl OlsModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

fn design(cols: &[&[f64]], rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            cols[j - 1][rows[i]]
        }
    })
}

fn solve(cols: &[&[f64]], y: &[f64], rows: &[usize]) -> Option<DVector<f64>> {
    let x = design(cols, rows);
    let yv = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    lstsq(&x, &yv)
}

fn loo_rmse(cols: &[&[f64]], y: &[f64]) -> Option<f64> {
    let n = y.len();
    let mut sse = 0.0;
    for out in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&i| i != out).collect();
        let b = solve(cols, y, &rows)?;
        let pred = b[0]
            + cols
                .iter()
                .enumerate()
                .map(|(j, c)| b[j + 1] * c[out])
                .sum::<f64>();
        sse += (pred - y[out]).powi(2);
    }
    Some((sse / n as f64).sqrt())
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| l + 1);
            for k in start..n {
                let mut t = s.clone();
                t.push(k);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Exhaustive subset search over `candidates` (including the
/// intercept-only model) up to `max_vars` terms. The subset with the lowest
/// leave-one-out RMSE wins; ties go to fewer terms, then earlier subsets.
pub fn fit_ols(
    table: &FeatureTable,
    candidates: &[String],
    max_vars: usize,
) -> Result<OlsModel, ModelError> {
    let n = table.rows();
    if n < 3 {
        return Err(ModelError::TooFewRows { need: 3, have: n });
    }
    let cols = columns_for(table, candidates)?;
    let y = &table.target;
    // LOO differences below this are numerical noise
    let floor = 1e-9 * crate::stats::sample_variance(y).sqrt();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut skipped = Vec::new();
    for subset in subsets(cols.len(), max_vars.min(cols.len())) {
        if n <= subset.len() + 1 {
            continue;
        }
        let sub: Vec<&[f64]> = subset.iter().map(|&k| cols[k]).collect();
        let score = solve(&sub, y, &(0..n).collect::<Vec<_>>()).and_then(|_| loo_rmse(&sub, y));
        match score {
            Some(s) => {
                let better = match &best {
                    None => true,
                    Some((b, _)) => s < b - floor.max(1e-12 * b.abs()),
                };
                if better {
                    best = Some((s, subset));
                }
            }
            None => skipped.push(subset.iter().map(|&k| candidates[k].clone()).collect()),
        }
    }
    let (loo, subset) = best.ok_or(ModelError::NoUsableSubset)?;
    let sub: Vec<&[f64]> = subset.iter().map(|&k| cols[k]).collect();
    let b = solve(&sub, y, &(0..n).collect::<Vec<_>>()).ok_or_else(|| {
        ModelError::RankDeficient(subset.iter().map(|&k| candidates[k].clone()).collect())
    })?;
    Ok(OlsModel {
        names: subset.iter().map(|&k| candidates[k].clone()).collect(),
        coefficients: b.iter().skip(1).copied().collect(),
        intercept: b[0],
        loo_rmse: loo,
        skipped,
    })
}
