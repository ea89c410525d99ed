//! ε-SVR with an RBF kernel `exp(-sigma * |u - v|^2)`, solved in the dual
//! by sequential minimal optimization with second-order working-set
//! selection.

use super::{columns_for, ModelError};
use crate::features::FeatureTable;
use serde::{Deserialize, Serialize};

const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// Inverse kernel width.
    pub sigma: f64,
    pub cost: f64,
    /// Tube half-width on the standardized target scale.
    pub epsilon: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            cost: 1.0,
            epsilon: 0.1,
            tolerance: 1e-6,
            max_iter: 10_000_000,
        }
    }
}

impl SvrParams {
    pub fn new(sigma: f64, cost: f64) -> Self {
        Self {
            sigma,
            cost,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.sigma) && ok(self.cost) && ok(self.tolerance)) || !(self.epsilon >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "sigma {} cost {} epsilon {} tolerance {}",
                self.sigma, self.cost, self.epsilon, self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub names: Vec<String>,
    pub sigma: f64,
    pub cost: f64,
    pub epsilon: f64,
    /// Standardized support vectors.
    pub support: Vec<Vec<f64>>,
    /// Dual coefficients (alpha - alpha*) of the support vectors.
    pub coefficients: Vec<f64>,
    /// Bias on the standardized scale.
    pub bias: f64,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

/// Solver outcome on the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct SvrDiagnostics {
    /// alpha - alpha* for every training row.
    pub dual: Vec<f64>,
    pub iterations: usize,
    /// Largest primal-dual KKT violation on the standardized scale.
    pub kkt_violation: f64,
}

fn kernel(sigma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-sigma * d).exp()
}

fn standardize(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl SvrModel {
    fn decision(&self, z: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coefficients)
            .map(|(s, c)| c * kernel(self.sigma, s, z))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let z: Vec<f64> = row
            .iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.decision(&z) * self.y_std + self.y_mean
    }
}

struct Solution {
    beta: Vec<f64>,
    rho: f64,
    iterations: usize,
}

/// libsvm-style solver over 2l variables: the first l carry alpha (label
/// +1), the last l carry alpha* (label -1).
fn solve_dual(k: &[Vec<f64>], z: &[f64], p: &SvrParams) -> Result<Solution, ModelError> {
    let l = z.len();
    let n = 2 * l;
    let c = p.cost;
    let y = |t: usize| if t < l { 1.0 } else { -1.0 };
    let q = |a: usize, b: usize| y(a) * y(b) * k[a % l][b % l];
    let mut beta = vec![0.0; n];
    let mut grad: Vec<f64> = (0..n)
        .map(|t| {
            if t < l {
                p.epsilon - z[t]
            } else {
                p.epsilon + z[t - l]
            }
        })
        .collect();

    let in_up = |t: usize, b: &[f64]| if y(t) > 0.0 { b[t] < c } else { b[t] > 0.0 };
    let in_low = |t: usize, b: &[f64]| if y(t) > 0.0 { b[t] > 0.0 } else { b[t] < c };

    let mut iterations = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(t, &beta) {
                let v = -y(t) * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(t, &beta) {
                continue;
            }
            let v = -y(t) * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = q(i, i) + q(t, t) - 2.0 * y(i) * y(t) * q(i, t);
                let a = if a > 0.0 { a } else { TAU };
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < p.tolerance {
            break;
        }
        if iterations >= p.max_iter {
            return Err(ModelError::NonConvergence {
                iterations,
                violation: gmax - gmin,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let qij = q(i, j);
        if y(i) != y(j) {
            let a = (q(i, i) + q(j, j) + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / a;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let a = (q(i, i) + q(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / a;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        if di != 0.0 || dj != 0.0 {
            for t in 0..n {
                grad[t] += q(t, i) * di + q(t, j) * dj;
            }
        }
    }

    // bias: average over free variables, else midpoint of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y(t) * grad[t];
        if beta[t] >= c {
            if y(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if beta[t] <= 0.0 {
            if y(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(Solution {
        beta,
        rho,
        iterations,
    })
}

fn kkt_violation(dual: &[f64], residual: &[f64], c: f64, eps: f64) -> f64 {
    let tol = 1e-12 * c.max(1.0);
    dual.iter()
        .zip(residual)
        .map(|(&th, &r)| {
            if th.abs() <= tol {
                (r.abs() - eps).max(0.0)
            } else if th >= c - tol {
                (eps - r).max(0.0)
            } else if th <= -c + tol {
                (r + eps).max(0.0)
            } else if th > 0.0 {
                (r - eps).abs()
            } else {
                (r + eps).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Fit on row-major feature vectors. `names` labels the columns.
pub fn fit_svr_rows(
    names: &[String],
    rows: &[Vec<f64>],
    target: &[f64],
    params: &SvrParams,
) -> Result<(SvrModel, SvrDiagnostics), ModelError> {
    params.validate()?;
    let l = rows.len();
    if l < 3 {
        return Err(ModelError::TooFewRows { need: 3, have: l });
    }
    let d = names.len();
    let (x_mean, x_std): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|j| standardize(rows.iter().map(move |r| r[j])))
        .unzip();
    let (y_mean, y_std) = standardize(target.iter().copied());
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - x_mean[j]) / x_std[j]).collect())
        .collect();
    let z: Vec<f64> = target.iter().map(|v| (v - y_mean) / y_std).collect();
    let k: Vec<Vec<f64>> = xs
        .iter()
        .map(|a| xs.iter().map(|b| kernel(params.sigma, a, b)).collect())
        .collect();

    let sol = solve_dual(&k, &z, params)?;
    let dual: Vec<f64> = (0..l).map(|t| sol.beta[t] - sol.beta[t + l]).collect();
    let bias = -sol.rho;
    let residual: Vec<f64> = (0..l)
        .map(|t| z[t] - (dual.iter().zip(&k[t]).map(|(a, kv)| a * kv).sum::<f64>() + bias))
        .collect();
    let kkt = kkt_violation(&dual, &residual, params.cost, params.epsilon);

    let (support, coefficients): (Vec<Vec<f64>>, Vec<f64>) = xs
        .into_iter()
        .zip(&dual)
        .filter(|(_, &a)| a != 0.0)
        .map(|(x, &a)| (x, a))
        .unzip();
    let model = SvrModel {
        names: names.to_vec(),
        sigma: params.sigma,
        cost: params.cost,
        epsilon: params.epsilon,
        support,
        coefficients,
        bias,
        x_mean,
        x_std,
        y_mean,
        y_std,
    };
    Ok((
        model,
        SvrDiagnostics {
            dual,
            iterations: sol.iterations,
            kkt_violation: kkt,
        },
    ))
}

/// Fit on the named columns of `table`.
pub fn fit_svr(
    table: &FeatureTable,
    names: &[String],
    params: &SvrParams,
) -> Result<SvrModel, ModelError> {
    let cols = columns_for(table, names)?;
    let rows: Vec<Vec<f64>> = (0..table.rows())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    fit_svr_rows(names, &rows, &table.target, params).map(|(m, _)| m)
}
