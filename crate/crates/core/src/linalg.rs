//! Small dense least-squares helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative size below which an R diagonal entry marks a dependent column.
const RANK_TOL: f64 = 1e-10;

/// Least-squares solve of `x b ≈ y` through a Householder QR. Returns
/// `None` when `x` has fewer rows than columns or a column is numerically
/// dependent on the ones before it.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    if n < p || p == 0 {
        return None;
    }
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        if norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOL * norms[j] {
            return None;
        }
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Coefficient of determination of fitted values against `y`; zero when
/// `y` is constant.
pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}
