//! Large-footprint full-waveform simulation from discrete returns, and the
//! waveform metric suite (ground finding, RH profiles, cover, LAI profile).
//!
//! Each return inside the footprint adds a Gaussian pulse in elevation,
//! weighted by its horizontal distance to the footprint center and by the
//! reflectance of its class (`rho_g` for ground, `rho_v` otherwise). The
//! pulse is integrated exactly over each elevation bin, so a noise-free
//! waveform holds the summed weights as its total energy.

mod decompose;
mod metrics;

pub use decompose::{decompose, find_ground, smooth, GaussianComponent, GroundEstimate};
pub use metrics::{
    ancillary_metrics, cover_from_energies, cover_metrics, foliage_height_diversity,
    macarthur_horn_lai, ni_biomass, profile_metrics, rh_metrics, waveform_metrics,
    AncillaryMetrics, CoverMetrics, ProfileMetrics, RhProfile, WaveformMetrics, LAI_BINS,
    RH_REPORT_STEP,
};

use crate::las_io::{PointCloud, PointRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use thiserror::Error;

/// FWHM to standard deviation for a Gaussian.
const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3;
/// Pulses are evaluated out to this many pulse sigmas.
const PULSE_SUPPORT: f64 = 6.5;
/// Returns farther than this many footprint sigmas are ignored.
const FOOTPRINT_TRUNCATION: f64 = 3.0;
/// Detection threshold relative to the peak when no noise is simulated.
const NOISELESS_THRESHOLD: f64 = 1e-9;
/// Denoising threshold in noise standard deviations.
const DENOISE_SIGMAS: f64 = 5.0;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("no returns within the footprint")]
    EmptyFootprint,
    #[error("waveform has no signal above the noise threshold")]
    NoSignal,
    #[error("waveform has no ground return")]
    NoGround,
    #[error("no Gaussian component could be fitted")]
    NoComponents,
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("ground elevation {ground} lies above the signal top {top}")]
    GroundAboveSignal { ground: f64, top: f64 },
    #[error("invalid footprint configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed waveform dump: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Geometry, pulse and reflectance settings for one simulated footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct FootprintConfig {
    pub center: [f64; 2],
    /// Footprint diameter (m).
    pub diameter: f64,
    /// Horizontal Gaussian weighting width (m); `None` means `diameter / 4`.
    pub footprint_sigma: Option<f64>,
    /// Pulse full width at half maximum, in meters of range.
    pub pulse_fwhm: f64,
    /// Vertical bin size (m).
    pub bin_size: f64,
    /// White-noise standard deviation in amplitude units.
    pub noise_std: f64,
    pub rho_v: f64,
    pub rho_g: f64,
    /// Seed for the noise generator.
    pub seed: u64,
}

impl Default for FootprintConfig {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            diameter: 25.0,
            footprint_sigma: None,
            pulse_fwhm: 2.34,
            bin_size: 0.15,
            noise_std: 0.0,
            rho_v: 0.57,
            rho_g: 0.4,
            seed: 123,
        }
    }
}

impl FootprintConfig {
    pub fn at(center: [f64; 2]) -> Self {
        Self {
            center,
            ..Self::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        self.footprint_sigma.unwrap_or(self.diameter / 4.0)
    }

    pub fn pulse_sigma(&self) -> f64 {
        self.pulse_fwhm / FWHM_TO_SIGMA
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let reflectance = |v: f64| v > 0.0 && v <= 1.0;
        if !(positive(self.diameter)
            && positive(self.sigma())
            && positive(self.pulse_fwhm)
            && positive(self.bin_size))
        {
            return Err(WaveformError::InvalidConfig(
                "diameter, sigma, FWHM and bin size must be positive".into(),
            ));
        }
        if !(reflectance(self.rho_v) && reflectance(self.rho_g)) {
            return Err(WaveformError::InvalidConfig(format!(
                "reflectances must be in (0, 1], got rho_v {} rho_g {}",
                self.rho_v, self.rho_g
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(WaveformError::InvalidConfig("negative noise".into()));
        }
        Ok(())
    }

    fn horizontal_distance(&self, p: &PointRecord) -> f64 {
        (p.x - self.center[0]).hypot(p.y - self.center[1])
    }

    /// Horizontal Gaussian weight; zero beyond the truncation radius.
    pub fn spatial_weight(&self, p: &PointRecord) -> f64 {
        let s = self.sigma();
        let r = self.horizontal_distance(p);
        if r > FOOTPRINT_TRUNCATION * s {
            0.0
        } else {
            (-r * r / (2.0 * s * s)).exp()
        }
    }

    pub fn reflectance(&self, p: &PointRecord) -> f64 {
        if p.is_ground() {
            self.rho_g
        } else {
            self.rho_v
        }
    }

    /// Energy a return contributes to the waveform: spatial weight times
    /// the reflectance of its class.
    pub fn footprint_weight(&self, p: &PointRecord) -> f64 {
        self.spatial_weight(p) * self.reflectance(p)
    }

    /// Returns inside the truncated footprint.
    pub fn contributing<'a>(
        &'a self,
        cloud: &'a PointCloud,
    ) -> impl Iterator<Item = &'a PointRecord> + 'a {
        let limit = FOOTPRINT_TRUNCATION * self.sigma();
        cloud
            .iter()
            .filter(move |p| self.horizontal_distance(p) <= limit)
    }

    /// Returns inside the nominal footprint disk (`diameter / 2`).
    pub fn within_disk<'a>(
        &'a self,
        cloud: &'a PointCloud,
    ) -> impl Iterator<Item = &'a PointRecord> + 'a {
        let radius = self.diameter / 2.0;
        cloud
            .iter()
            .filter(move |p| self.horizontal_distance(p) <= radius)
    }
}

/// Received energy per elevation bin for one footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub wave_id: String,
    pub center: [f64; 2],
    pub bin_size: f64,
    /// Elevation of the first (highest) bin center.
    pub top: f64,
    /// Energy per bin, highest elevation first.
    pub amplitudes: Vec<f64>,
    /// Energy from ground-classified returns only, when simulated.
    pub ground_amplitudes: Option<Vec<f64>>,
    /// Elevation of the highest noise-free bin above the detection threshold.
    pub true_top: Option<f64>,
    pub noise_std: f64,
    /// Detection threshold applied to the amplitudes.
    pub threshold: f64,
}

impl Waveform {
    /// Build a waveform from explicit amplitudes (highest bin first) with a
    /// noise-free detection threshold.
    pub fn from_amplitudes(top: f64, bin_size: f64, amplitudes: Vec<f64>) -> Self {
        let max = amplitudes.iter().cloned().fold(0.0, f64::max);
        let mut wf = Self {
            wave_id: String::new(),
            center: [0.0, 0.0],
            bin_size,
            top,
            amplitudes,
            ground_amplitudes: None,
            true_top: None,
            noise_std: 0.0,
            threshold: NOISELESS_THRESHOLD * max,
        };
        wf.true_top = wf.signal_extent().map(|(t, _)| t);
        wf
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn elevation(&self, i: usize) -> f64 {
        self.top - i as f64 * self.bin_size
    }

    pub fn elevations(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.elevation(i))
    }

    pub fn total_energy(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    pub fn ground_energy(&self) -> Option<f64> {
        self.ground_amplitudes.as_ref().map(|g| g.iter().sum())
    }

    /// Indices of the first and last bins above the threshold.
    pub fn signal_bins(&self) -> Option<(usize, usize)> {
        let above = |a: &f64| *a > self.threshold && *a > 0.0;
        let first = self.amplitudes.iter().position(above)?;
        let last = self.amplitudes.iter().rposition(above)?;
        Some((first, last))
    }

    /// `(signal_top, signal_bottom)` elevations.
    pub fn signal_extent(&self) -> Option<(f64, f64)> {
        self.signal_bins()
            .map(|(a, b)| (self.elevation(a), self.elevation(b)))
    }

    /// Copy with every amplitude multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            amplitudes: self.amplitudes.iter().map(|a| a * k).collect(),
            ground_amplitudes: self
                .ground_amplitudes
                .as_ref()
                .map(|g| g.iter().map(|a| a * k).collect()),
            threshold: self.threshold * k,
            noise_std: self.noise_std * k,
            ..self.clone()
        }
    }

    /// Text dump: `wave_id`, `center`, `bin_size` and `noise` header lines,
    /// a column line, then one `elevation amplitude [ground]` row per bin.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "wave_id {}", self.wave_id);
        let _ = writeln!(s, "center {} {}", self.center[0], self.center[1]);
        let _ = writeln!(s, "bin_size {}", self.bin_size);
        let _ = writeln!(s, "noise {}", self.noise_std);
        match &self.ground_amplitudes {
            Some(g) => {
                let _ = writeln!(s, "elevation amplitude ground");
                for (i, (a, ga)) in self.amplitudes.iter().zip(g).enumerate() {
                    let _ = writeln!(s, "{} {} {}", self.elevation(i), a, ga);
                }
            }
            None => {
                let _ = writeln!(s, "elevation amplitude");
                for (i, a) in self.amplitudes.iter().enumerate() {
                    let _ = writeln!(s, "{} {}", self.elevation(i), a);
                }
            }
        }
        out.write_all(s.as_bytes())
    }

    pub fn read_text<R: Read>(input: R) -> Result<Self, WaveformError> {
        let bad = |m: &str| WaveformError::Parse(m.to_string());
        let mut lines = BufReader::new(input).lines();
        let mut next = |key: &str| -> Result<Vec<String>, WaveformError> {
            let line = lines
                .next()
                .ok_or_else(|| bad(&format!("missing {key}")))??;
            let mut parts = line.split_whitespace().map(str::to_string);
            match parts.next() {
                Some(k) if k == key => Ok(parts.collect()),
                _ => Err(bad(&format!("expected {key}, got {line:?}"))),
            }
        };
        let wave_id = next("wave_id")?.join(" ");
        let num = |v: Option<&String>, what: &str| -> Result<f64, WaveformError> {
            v.and_then(|s| s.parse().ok()).ok_or_else(|| bad(what))
        };
        let c = next("center")?;
        let center = [num(c.first(), "center x")?, num(c.get(1), "center y")?];
        let bin_size = num(next("bin_size")?.first(), "bin_size")?;
        let noise_std = num(next("noise")?.first(), "noise")?;
        let cols = next("elevation")?;
        let with_ground = cols.len() == 2;
        let mut elevations = Vec::new();
        let mut amplitudes = Vec::new();
        let mut ground = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("row value")))
                .collect::<Result<_, _>>()?;
            if f.len() != 2 + with_ground as usize {
                return Err(bad("row width"));
            }
            elevations.push(f[0]);
            amplitudes.push(f[1]);
            if with_ground {
                ground.push(f[2]);
            }
        }
        let top = *elevations.first().ok_or_else(|| bad("no rows"))?;
        let mut wf = Waveform::from_amplitudes(top, bin_size, amplitudes);
        wf.wave_id = wave_id;
        wf.center = center;
        wf.noise_std = noise_std;
        if noise_std > 0.0 {
            wf.threshold = DENOISE_SIGMAS * noise_std;
        }
        if with_ground {
            wf.ground_amplitudes = Some(ground);
        }
        Ok(wf)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn add_pulse(bins: &mut [f64], top: f64, bin: f64, z: f64, sigma: f64, weight: f64) {
    let n = bins.len();
    let half = 0.5 * bin;
    let reach = PULSE_SUPPORT * sigma;
    let first = (((top - (z + reach)) / bin).floor().max(0.0)) as usize;
    let last = ((((top - (z - reach)) / bin).ceil()) as usize).min(n - 1);
    for (i, slot) in bins.iter_mut().enumerate().take(last + 1).skip(first) {
        let e = top - i as f64 * bin;
        let upper = normal_cdf((e + half - z) / sigma);
        let lower = normal_cdf((e - half - z) / sigma);
        *slot += weight * (upper - lower);
    }
}

/// Simulate the waveform of one footprint from an un-normalized cloud.
pub fn simulate_footprint(
    cloud: &PointCloud,
    cfg: &FootprintConfig,
) -> Result<Waveform, WaveformError> {
    cfg.validate()?;
    let pts: Vec<&PointRecord> = cfg.contributing(cloud).collect();
    if pts.is_empty() {
        return Err(WaveformError::EmptyFootprint);
    }
    let sigma = cfg.pulse_sigma();
    let bin = cfg.bin_size;
    let zmax = pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let zmin = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let top = ((zmax + PULSE_SUPPORT * sigma) / bin).ceil() * bin;
    let bottom = ((zmin - PULSE_SUPPORT * sigma) / bin).floor() * bin;
    let n = ((top - bottom) / bin).round() as usize + 1;

    let mut amplitudes = vec![0.0; n];
    let mut ground = vec![0.0; n];
    for p in &pts {
        let w = cfg.footprint_weight(p);
        if w <= 0.0 {
            continue;
        }
        add_pulse(&mut amplitudes, top, bin, p.z, sigma, w);
        if p.is_ground() {
            add_pulse(&mut ground, top, bin, p.z, sigma, w);
        }
    }

    let mut wf = Waveform::from_amplitudes(top, bin, amplitudes);
    wf.center = cfg.center;
    wf.ground_amplitudes = Some(ground);
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.noise_std)
            .map_err(|e| WaveformError::InvalidConfig(e.to_string()))?;
        let threshold = DENOISE_SIGMAS * cfg.noise_std;
        for a in wf.amplitudes.iter_mut() {
            let noisy = *a + normal.sample(&mut rng);
            *a = if noisy > threshold { noisy } else { 0.0 };
        }
        wf.noise_std = cfg.noise_std;
        wf.threshold = threshold;
    }
    Ok(wf)
}
