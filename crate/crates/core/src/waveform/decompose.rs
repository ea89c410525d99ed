//! Gaussian decomposition and ground finding.

use super::{Waveform, WaveformError};
use nalgebra::{DMatrix, DVector};

const SQRT_TAU: f64 = 2.506_628_274_631_000_5;
/// Local maxima below this fraction of the smoothed peak are ignored.
const PEAK_FLOOR: f64 = 0.01;
/// Components below this fraction of the fitted energy are discarded.
const PRUNE_FRACTION: f64 = 1e-4;
/// The ground component must carry at least this fraction of the energy.
const GROUND_FRACTION: f64 = 0.01;
const MAX_ITER: usize = 200;

/// One fitted Gaussian, in per-bin amplitude units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianComponent {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn value(&self, e: f64) -> f64 {
        let d = (e - self.mean) / self.sigma;
        self.amplitude * (-0.5 * d * d).exp()
    }

    /// Energy in amplitude-sum units for the given bin size.
    pub fn energy(&self, bin: f64) -> f64 {
        self.amplitude * self.sigma * SQRT_TAU / bin
    }
}

/// The three ground estimates and the decomposition they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundEstimate {
    /// Mean of the lowest significant Gaussian component.
    pub g_height: f64,
    /// Lowest local maximum of the smoothed waveform.
    pub max_ground: f64,
    /// Midpoint of the inflection points around the lowest maximum.
    pub infl_ground: f64,
    pub ground: GaussianComponent,
    /// All fitted components, lowest mean first.
    pub components: Vec<GaussianComponent>,
}

impl GroundEstimate {
    /// Fitted components other than the ground one.
    pub fn canopy_components(&self) -> impl Iterator<Item = &GaussianComponent> {
        let g = self.ground;
        self.components.iter().filter(move |c| **c != g)
    }
}

/// Convolve with a normalized Gaussian kernel of `sigma_bins` bins.
pub fn smooth(values: &[f64], sigma_bins: f64) -> Vec<f64> {
    if sigma_bins <= 0.0 || values.is_empty() {
        return values.to_vec();
    }
    let radius = (4.0 * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma_bins).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                let k = i + j as isize - radius;
                if (0..n).contains(&k) {
                    acc += w * values[k as usize];
                }
            }
            acc / norm
        })
        .collect()
}

fn local_maxima(sm: &[f64], first: usize, last: usize) -> Vec<usize> {
    let peak = sm[first..=last].iter().cloned().fold(0.0, f64::max);
    let floor = PEAK_FLOOR * peak;
    let mut out: Vec<usize> = (first..=last)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { sm[i - 1] };
            let right = if i + 1 == sm.len() {
                f64::NEG_INFINITY
            } else {
                sm[i + 1]
            };
            sm[i] > left && sm[i] >= right && sm[i] >= floor && sm[i] > 0.0
        })
        .collect();
    if out.is_empty() {
        let best = (first..=last)
            .max_by(|&a, &b| sm[a].total_cmp(&sm[b]))
            .unwrap_or(first);
        out.push(best);
    }
    out
}

fn half_width_sigma(sm: &[f64], i: usize, bin: f64) -> f64 {
    let half = sm[i] / 2.0;
    let mut up = i;
    while up > 0 && sm[up] > half {
        up -= 1;
    }
    let mut down = i;
    while down + 1 < sm.len() && sm[down] > half {
        down += 1;
    }
    (down - up) as f64 * bin / 2.0 / 1.177_410_022_515_474_7
}

fn model(params: &[f64], e: f64) -> f64 {
    params
        .chunks(3)
        .map(|c| {
            let d = (e - c[1]) / c[2];
            c[0] * (-0.5 * d * d).exp()
        })
        .sum()
}

fn cost(params: &[f64], e: &[f64], y: &[f64]) -> f64 {
    e.iter()
        .zip(y)
        .map(|(&ei, &yi)| (model(params, ei) - yi).powi(2))
        .sum()
}

/// Bounded Levenberg-Marquardt on a sum of Gaussians.
fn fit(params: &mut [f64], e: &[f64], y: &[f64], sigma_range: (f64, f64), mean_range: (f64, f64)) {
    let m = params.len();
    let clamp = |p: &mut [f64]| {
        for c in p.chunks_mut(3) {
            c[0] = c[0].max(0.0);
            c[1] = c[1].clamp(mean_range.0, mean_range.1);
            c[2] = c[2].clamp(sigma_range.0, sigma_range.1);
        }
    };
    clamp(params);
    let mut current = cost(params, e, y);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITER {
        let mut jtj = DMatrix::<f64>::zeros(m, m);
        let mut jtr = DVector::<f64>::zeros(m);
        let mut row = vec![0.0; m];
        for (&ei, &yi) in e.iter().zip(y) {
            let r = model(params, ei) - yi;
            for (k, c) in params.chunks(3).enumerate() {
                let d = ei - c[1];
                let g = (-0.5 * d * d / (c[2] * c[2])).exp();
                row[3 * k] = g;
                row[3 * k + 1] = c[0] * g * d / (c[2] * c[2]);
                row[3 * k + 2] = c[0] * g * d * d / (c[2] * c[2] * c[2]);
            }
            for a in 0..m {
                if row[a] == 0.0 {
                    continue;
                }
                jtr[a] += row[a] * r;
                for b in a..m {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut lhs = jtj.clone();
            for a in 0..m {
                lhs[(a, a)] += lambda * jtj[(a, a)].max(1e-12);
            }
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            clamp(&mut trial);
            let c = cost(&trial, e, y);
            if c < current {
                let gain = (current - c) / current.max(f64::MIN_POSITIVE);
                params.copy_from_slice(&trial);
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
}

/// Fit up to `max_components` Gaussians to the signal part of `wf`.
/// Components are returned lowest mean first.
pub fn decompose(
    wf: &Waveform,
    pulse_sigma: f64,
    max_components: usize,
) -> Result<Vec<GaussianComponent>, WaveformError> {
    let (first, last) = wf.signal_bins().ok_or(WaveformError::NoSignal)?;
    let bin = wf.bin_size;
    let sm = smooth(&wf.amplitudes, pulse_sigma / bin);
    let mut peaks = local_maxima(&sm, first, last);
    let lowest = *peaks.iter().max().expect("at least one peak");
    peaks.retain(|&i| i != lowest);
    peaks.sort_by(|&a, &b| sm[b].total_cmp(&sm[a]).then(a.cmp(&b)));
    peaks.truncate(max_components.max(1) - 1);
    peaks.push(lowest);

    let margin = (3.0 * pulse_sigma / bin).ceil() as usize;
    let lo = first.saturating_sub(margin);
    let hi = (last + margin).min(wf.len() - 1);
    let e: Vec<f64> = (lo..=hi).map(|i| wf.elevation(i)).collect();
    let y: Vec<f64> = wf.amplitudes[lo..=hi].to_vec();

    let mut params = Vec::with_capacity(peaks.len() * 3);
    for &i in &peaks {
        let s = half_width_sigma(&sm, i, bin).max(pulse_sigma);
        params.extend_from_slice(&[wf.amplitudes[i].max(sm[i]), wf.elevation(i), s]);
    }
    let extent = wf.elevation(lo) - wf.elevation(hi);
    fit(
        &mut params,
        &e,
        &y,
        (0.5 * pulse_sigma, extent.max(pulse_sigma)),
        (wf.elevation(hi), wf.elevation(lo)),
    );

    let mut comps: Vec<GaussianComponent> = params
        .chunks(3)
        .map(|c| GaussianComponent {
            amplitude: c[0],
            mean: c[1],
            sigma: c[2],
        })
        .collect();
    let total: f64 = comps.iter().map(|c| c.energy(bin)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(WaveformError::NoComponents);
    }
    comps.retain(|c| c.energy(bin) >= PRUNE_FRACTION * total);
    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    Ok(comps)
}

fn parabolic_peak(sm: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= sm.len() {
        return 0.0;
    }
    let (a, b, c) = (sm[i - 1], sm[i], sm[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    }
}

/// Position (fractional index) where the second difference changes sign
/// walking from `start` in direction `step`.
fn inflection(d2: &[f64], start: usize, step: isize) -> Option<f64> {
    let mut i = start as isize;
    loop {
        let j = i + step;
        if j < 1 || j as usize >= d2.len() - 1 {
            return None;
        }
        let (a, b) = (d2[i as usize], d2[j as usize]);
        if a < 0.0 && b >= 0.0 {
            let t = a / (a - b);
            return Some(i as f64 + step as f64 * t);
        }
        i = j;
    }
}

/// Estimate the ground elevation three ways.
///
/// Fails with `NoGround` when the waveform carries a ground annotation
/// holding no energy.
pub fn find_ground(wf: &Waveform, pulse_sigma: f64) -> Result<GroundEstimate, WaveformError> {
    if let Some(g) = &wf.ground_amplitudes {
        let ge: f64 = g.iter().sum();
        if !(ge > 0.0) {
            return Err(WaveformError::NoGround);
        }
    }
    let comps = decompose(wf, pulse_sigma, 10)?;
    let bin = wf.bin_size;
    let total: f64 = comps.iter().map(|c| c.energy(bin)).sum();
    let ground = *comps
        .iter()
        .find(|c| c.energy(bin) >= GROUND_FRACTION * total)
        .unwrap_or(&comps[0]);

    let (first, last) = wf.signal_bins().ok_or(WaveformError::NoSignal)?;
    let sm = smooth(&wf.amplitudes, pulse_sigma / bin);
    let peak = *local_maxima(&sm, first, last).iter().max().expect("peak");
    let max_ground = wf.elevation(peak) - parabolic_peak(&sm, peak) * bin;

    let mut d2 = vec![0.0; sm.len()];
    for i in 1..sm.len().saturating_sub(1) {
        d2[i] = sm[i - 1] - 2.0 * sm[i] + sm[i + 1];
    }
    let infl_ground = match (inflection(&d2, peak, -1), inflection(&d2, peak, 1)) {
        (Some(up), Some(down)) => wf.top - 0.5 * (up + down) * bin,
        _ => max_ground,
    };

    Ok(GroundEstimate {
        g_height: ground.mean,
        max_ground,
        infl_ground,
        ground,
        components: comps,
    })
}
