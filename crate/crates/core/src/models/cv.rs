//! Seeded holdout splits and repeated-holdout grid search.

use super::svr::{fit_svr_rows, SvrParams};
use super::{columns_for, ModelError};
use crate::features::FeatureTable;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SIGMA_GRID: [f64; 7] = [0.2, 0.25, 0.3, 0.5, 1.0, 2.0, 3.0];
pub const DEFAULT_C_GRID: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

fn train_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil() as usize
}

/// Seeded shuffle; the first ⌈0.8 n⌉ indices train, the rest test.
pub fn split_80_20(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if n < 5 {
        return Err(ModelError::TooFewRows { need: 5, have: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let k = train_size(n, 0.8);
    let test = idx.split_off(k);
    Ok((idx, test))
}

/// Repeated random holdout: each repeat shuffles all rows and trains on
/// the first ⌈fraction · n⌉.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScheme {
    pub seed: u64,
    pub repeats: usize,
    pub train_fraction: f64,
}

impl Default for CvScheme {
    fn default() -> Self {
        Self {
            seed: 123,
            repeats: 9,
            train_fraction: 0.8,
        }
    }
}

impl CvScheme {
    /// `(train, validate)` index pairs, one per repeat.
    pub fn folds(&self, n: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = train_size(n, self.train_fraction).min(n);
        (0..self.repeats)
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                let val = idx.split_off(k);
                (idx, val)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub sigma: f64,
    pub cost: f64,
    pub mean_rmse: f64,
    pub rmses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_sigma: f64,
    pub best_cost: f64,
    pub best_rmse: f64,
    /// Every cell, sigma-major in grid order.
    pub surface: Vec<GridCell>,
}

impl GridResult {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let repeats = self.surface.first().map_or(0, |c| c.rmses.len());
        let mut header = vec![
            "sigma".to_string(),
            "C".to_string(),
            "mean_rmse".to_string(),
        ];
        header.extend((1..=repeats).map(|r| format!("rmse_{r}")));
        w.write_record(&header)?;
        for c in &self.surface {
            let mut rec = vec![
                c.sigma.to_string(),
                c.cost.to_string(),
                c.mean_rmse.to_string(),
            ];
            rec.extend(c.rmses.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate `eval(train, validate, sigma, cost)` (returning validation
/// RMSE) over every grid cell and fold. The winner has the lowest mean
/// RMSE; ties go to smaller cost, then smaller sigma.
pub fn grid_search<F>(
    n: usize,
    sigma_grid: &[f64],
    c_grid: &[f64],
    scheme: &CvScheme,
    eval: F,
) -> Result<GridResult, ModelError>
where
    F: Fn(&[usize], &[usize], f64, f64) -> Result<f64, ModelError> + Sync,
{
    if sigma_grid.is_empty() || c_grid.is_empty() || scheme.repeats == 0 {
        return Err(ModelError::EmptyGrid);
    }
    let folds = scheme.folds(n);
    for (r, (train, val)) in folds.iter().enumerate() {
        if train.len() < 3 || val.is_empty() {
            return Err(ModelError::DegenerateFold {
                repeat: r + 1,
                reason: format!("{} train / {} validate rows", train.len(), val.len()),
            });
        }
    }
    let cells: Vec<(f64, f64)> = sigma_grid
        .iter()
        .flat_map(|&s| c_grid.iter().map(move |&c| (s, c)))
        .collect();
    let surface: Vec<GridCell> = cells
        .par_iter()
        .map(|&(sigma, cost)| {
            let rmses = folds
                .iter()
                .map(|(t, v)| eval(t, v, sigma, cost))
                .collect::<Result<Vec<f64>, _>>()?;
            let mean_rmse = rmses.iter().sum::<f64>() / rmses.len() as f64;
            Ok(GridCell {
                sigma,
                cost,
                mean_rmse,
                rmses,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    let best = surface
        .iter()
        .min_by(|a, b| {
            a.mean_rmse
                .total_cmp(&b.mean_rmse)
                .then(a.cost.total_cmp(&b.cost))
                .then(a.sigma.total_cmp(&b.sigma))
        })
        .expect("non-empty grid");
    Ok(GridResult {
        best_sigma: best.sigma,
        best_cost: best.cost,
        best_rmse: best.mean_rmse,
        surface,
    })
}

/// Grid search for the SVR on the named columns of `table`.
pub fn svr_grid_search(
    table: &FeatureTable,
    names: &[String],
    sigma_grid: &[f64],
    c_grid: &[f64],
    scheme: &CvScheme,
    base: &SvrParams,
) -> Result<GridResult, ModelError> {
    let cols = columns_for(table, names)?;
    let rows: Vec<Vec<f64>> = (0..table.rows())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let y = &table.target;
    grid_search(
        table.rows(),
        sigma_grid,
        c_grid,
        scheme,
        |train, val, sigma, cost| {
            let tr: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let params = SvrParams {
                sigma,
                cost,
                ..base.clone()
            };
            let (m, _) = fit_svr_rows(names, &tr, &ty, &params)?;
            let sse: f64 = val
                .iter()
                .map(|&i| (m.predict_row(&rows[i]) - y[i]).powi(2))
                .sum();
            Ok((sse / val.len() as f64).sqrt())
        },
    )
}
