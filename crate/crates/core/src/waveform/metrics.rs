//! Waveform metric suite: RH profiles, cover, vertical profile and
//! ancillary measures.

use super::decompose::{find_ground, smooth, GaussianComponent, GroundEstimate};
use super::{simulate_footprint, FootprintConfig, Waveform, WaveformError};
use crate::las_io::PointCloud;
use crate::metrics::{MetricVector, MetricsError, SystemTag};
use crate::stats::median_sorted;

/// RH columns are written every this many percent.
pub const RH_REPORT_STEP: usize = 5;
/// Height bins (m) for the LAI profile summaries.
pub const LAI_BINS: [(usize, usize); 3] = [(0, 10), (10, 20), (20, 30)];
const SATURATION: f64 = 1.0 - 1e-6;
/// One-sided z for a 90% detection probability.
const Z90: f64 = 1.281_551_565_545;
/// Tolerated excess of fitted ground energy over the total.
const GROUND_EXCESS: f64 = 0.05;

/// RH0 through RH100 in meters above the reference ground.
#[derive(Clone, Debug, PartialEq)]
pub struct RhProfile {
    pub values: Vec<f64>,
}

impl RhProfile {
    pub fn get(&self, p: usize) -> f64 {
        self.values[p]
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Relative heights: the elevation where the cumulative energy from the
/// signal bottom reaches p% of the total, minus `ground`.
pub fn rh_metrics(wf: &Waveform, ground: f64) -> Result<RhProfile, WaveformError> {
    let (first, last) = wf.signal_bins().ok_or(WaveformError::NoSignal)?;
    let top = wf.elevation(first);
    let bottom = wf.elevation(last);
    if ground > top {
        return Err(WaveformError::GroundAboveSignal { ground, top });
    }
    let bin = wf.bin_size;
    let energies: Vec<(f64, f64)> = (first..=last)
        .rev()
        .map(|i| (wf.elevation(i), wf.amplitudes[i].max(0.0)))
        .collect();
    let total: f64 = energies.iter().map(|e| e.1).sum();
    if !(total > 0.0) {
        return Err(WaveformError::NoSignal);
    }
    let mut values = Vec::with_capacity(101);
    let mut k = 0;
    let mut cum = 0.0;
    for p in 0..=100 {
        let elev = if p == 0 {
            bottom
        } else if p == 100 {
            top
        } else {
            let target = p as f64 / 100.0 * total;
            while k < energies.len() && cum + energies[k].1 < target {
                cum += energies[k].1;
                k += 1;
            }
            match energies.get(k) {
                Some(&(e, a)) if a > 0.0 => e - 0.5 * bin + (target - cum) / a * bin,
                _ => top,
            }
        };
        values.push(elev.clamp(bottom, top) - ground);
    }
    Ok(RhProfile { values })
}

/// Canopy cover from canopy and ground energies with the reflectance
/// correction. Zero total energy gives zero cover.
pub fn cover_from_energies(canopy: f64, ground: f64, rho_v: f64, rho_g: f64) -> f64 {
    let denom = canopy + ground * rho_v / rho_g;
    if denom > 0.0 {
        (canopy / denom).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn energy_below(wf: &Waveform, z: f64) -> f64 {
    let bin = wf.bin_size;
    wf.elevations()
        .zip(&wf.amplitudes)
        .map(|(e, a)| ((z - (e - 0.5 * bin)) / bin).clamp(0.0, 1.0) * a.max(0.0))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverMetrics {
    pub cover: f64,
    pub gauss_half_cov: f64,
    pub max_half_cov: f64,
    pub inf_half_cov: f64,
    pub bay_half_cov: f64,
    pub als_cover: Option<f64>,
}

/// Median of the three ground estimates.
fn consensus_ground(g: &GroundEstimate) -> f64 {
    let mut v = [g.g_height, g.max_ground, g.infl_ground];
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

pub fn cover_metrics(
    wf: &Waveform,
    ground: &GroundEstimate,
    cloud: &PointCloud,
    cfg: &FootprintConfig,
) -> Result<CoverMetrics, WaveformError> {
    let total = wf.total_energy();
    let ig = ground.ground.energy(wf.bin_size);
    if ig > total * (1.0 + GROUND_EXCESS) {
        return Err(WaveformError::DegenerateFit(format!(
            "ground energy {ig} exceeds total {total}"
        )));
    }
    let ig = ig.min(total);
    let iv = if ground.canopy_components().next().is_some() {
        total - ig
    } else {
        0.0
    };
    let (rv, rg) = (cfg.rho_v, cfg.rho_g);
    let half = |z: f64| {
        let g = (2.0 * energy_below(wf, z)).min(total);
        cover_from_energies(total - g, g, rv, rg)
    };

    let mut canopy_w = 0.0;
    let mut ground_w = 0.0;
    for p in cfg.contributing(cloud).filter(|p| p.return_number <= 1) {
        let w = cfg.spatial_weight(p);
        if p.is_ground() {
            ground_w += w * rg;
        } else {
            canopy_w += w * rv;
        }
    }
    let als_cover =
        (canopy_w + ground_w > 0.0).then(|| cover_from_energies(canopy_w, ground_w, rv, rg));

    Ok(CoverMetrics {
        cover: cover_from_energies(iv, ig, rv, rg),
        gauss_half_cov: half(ground.g_height),
        max_half_cov: half(ground.max_ground),
        inf_half_cov: half(ground.infl_ground),
        bay_half_cov: half(consensus_ground(ground)),
        als_cover,
    })
}

/// Shannon entropy of the normalized layer energies.
pub fn foliage_height_diversity(layers: &[f64]) -> f64 {
    let total: f64 = layers.iter().filter(|&&e| e > 0.0).sum();
    if !(total > 0.0) {
        return 0.0;
    }
    -layers
        .iter()
        .filter(|&&e| e > 0.0)
        .map(|&e| {
            let p = e / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Per-layer LAI from canopy energies listed bottom layer first, given the
/// reflectance-corrected total energy. Returns the LAI increments and
/// whether any cumulative cover had to be clamped below 1.
pub fn macarthur_horn_lai(layers: &[f64], denominator: f64) -> (Vec<f64>, bool) {
    let mut lai = vec![0.0; layers.len()];
    if !(denominator > 0.0) {
        return (lai, false);
    }
    let mut saturated = false;
    let mut above = 0.0;
    for j in (0..layers.len()).rev() {
        let mut c_above = above / denominator;
        above += layers[j].max(0.0);
        let mut c_here = above / denominator;
        if c_here > SATURATION {
            c_here = SATURATION;
            saturated = true;
        }
        c_above = c_above.min(SATURATION);
        lai[j] = (1.0 - c_above).ln() - (1.0 - c_here).ln();
    }
    (lai, saturated)
}

/// Sum of clamped RH values raised to `exponent`.
pub fn ni_biomass(rh: &[f64], exponent: f64) -> f64 {
    rh.iter().map(|&h| h.max(0.0).powf(exponent)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileMetrics {
    pub fhd: f64,
    pub g_lai: [f64; 3],
    pub hg_lai: [f64; 3],
    pub ni_m2: f64,
    pub ni_m2_1: f64,
    /// Some layer reached full cover and was clamped.
    pub saturated: bool,
}

fn canopy_layers(wf: &Waveform, ground: &GaussianComponent, reference: f64) -> Vec<f64> {
    let mut layers: Vec<f64> = Vec::new();
    for (e, a) in wf.elevations().zip(&wf.amplitudes) {
        let h = e - reference;
        if h < 0.0 {
            continue;
        }
        let c = (a - ground.value(e)).max(0.0);
        let j = h.floor() as usize;
        if layers.len() <= j {
            layers.resize(j + 1, 0.0);
        }
        layers[j] += c;
    }
    layers
}

fn binned(lai: &[f64]) -> [f64; 3] {
    LAI_BINS.map(|(lo, hi)| lai.iter().skip(lo).take(hi - lo).sum())
}

pub fn profile_metrics(
    wf: &Waveform,
    ground: &GroundEstimate,
    rh_gauss: &RhProfile,
    cfg: &FootprintConfig,
) -> ProfileMetrics {
    let ig = ground.ground.energy(wf.bin_size).min(wf.total_energy());
    let scale = cfg.rho_v / cfg.rho_g;
    let lai_for = |reference: f64| {
        let layers = canopy_layers(wf, &ground.ground, reference);
        let denom = layers.iter().sum::<f64>() + ig * scale;
        let (lai, sat) = macarthur_horn_lai(&layers, denom);
        (layers, binned(&lai), sat)
    };
    let (layers, g_lai, sat_g) = lai_for(ground.g_height);
    let (_, hg_lai, sat_h) = lai_for(ground.max_ground);
    ProfileMetrics {
        fhd: foliage_height_diversity(&layers),
        g_lai,
        hg_lai,
        ni_m2: ni_biomass(&rh_gauss.values, 2.0),
        ni_m2_1: ni_biomass(&rh_gauss.values, 2.1),
        saturated: sat_g || sat_h,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AncillaryMetrics {
    pub signal_top: f64,
    pub signal_bottom: f64,
    pub leading_edge: f64,
    pub trailing_edge: f64,
    pub blair_sense: f64,
    /// Set when no noise was simulated and `blair_sense` is nominal.
    pub blair_saturated: bool,
    pub ground_overlap: Option<f64>,
    pub ground_min: Option<f64>,
    pub ground_infl: Option<f64>,
    pub true_ground: Option<f64>,
    pub true_top: Option<f64>,
    pub ground_slope: f64,
    pub point_dense: f64,
    pub beam_dense: f64,
    pub wave_energy: f64,
    pub lon: f64,
    pub lat: f64,
}

/// Cover above which a ground return falls below 90% detection probability.
fn blair_sensitivity(
    wf: &Waveform,
    ground: &GaussianComponent,
    cfg: &FootprintConfig,
) -> (f64, bool) {
    if wf.noise_std <= 0.0 {
        return (1.0, true);
    }
    // peak amplitude a pure ground return of the same energy would have
    let k = wf.total_energy() * wf.bin_size / (ground.sigma * std::f64::consts::TAU.sqrt());
    let a_min = wf.threshold + Z90 * wf.noise_std;
    if k <= a_min {
        return (0.0, false);
    }
    let g_min = a_min * cfg.rho_v / (cfg.rho_g * (k - a_min) + a_min * cfg.rho_v);
    ((1.0 - g_min).clamp(0.0, 1.0), false)
}

pub fn ancillary_metrics(
    wf: &Waveform,
    ground: &GroundEstimate,
    cloud: &PointCloud,
    cfg: &FootprintConfig,
) -> Result<AncillaryMetrics, WaveformError> {
    let (first, last) = wf.signal_bins().ok_or(WaveformError::NoSignal)?;
    let signal_top = wf.elevation(first);
    let signal_bottom = wf.elevation(last);
    let g = &ground.ground;
    let bin = wf.bin_size;

    let residual: Vec<f64> = wf
        .elevations()
        .zip(&wf.amplitudes)
        .map(|(e, a)| a - g.value(e))
        .collect();
    let amp_max = wf.amplitudes.iter().cloned().fold(0.0, f64::max);
    let canopy_max = residual.iter().cloned().fold(0.0, f64::max);
    let profile = if canopy_max > 0.01 * amp_max {
        &residual
    } else {
        &wf.amplitudes
    };
    let half = 0.5 * profile.iter().cloned().fold(0.0, f64::max);
    let leading_edge = (first..=last)
        .find(|&i| profile[i] >= half)
        .map_or(0.0, |i| signal_top - wf.elevation(i));
    let trailing_edge = (first..=last)
        .rev()
        .find(|&i| wf.amplitudes[i] >= 0.5 * g.amplitude)
        .map_or(0.0, |i| wf.elevation(i) - signal_bottom);

    let (blair_sense, blair_saturated) = blair_sensitivity(wf, g, cfg);

    let canopy: Vec<&GaussianComponent> = ground
        .canopy_components()
        .filter(|c| c.mean > g.mean)
        .collect();
    let (ground_overlap, ground_min, ground_infl) = if canopy.is_empty() {
        (None, None, None)
    } else {
        let mut shared = 0.0;
        let mut gsum = 0.0;
        for e in wf.elevations() {
            let gv = g.value(e);
            let cv: f64 = canopy.iter().map(|c| c.value(e)).sum();
            shared += gv.min(cv);
            gsum += gv;
        }
        let sm = smooth(&wf.amplitudes, cfg.pulse_sigma() / bin);
        let index_of = |z: f64| (((wf.top - z) / bin).round().max(0.0) as usize).min(wf.len() - 1);
        let gi = index_of(g.mean);
        let ci = index_of(canopy[0].mean);
        let peak = sm[gi];
        let between = ci..=gi;
        let min = between.clone().map(|i| sm[i]).fold(f64::INFINITY, f64::min);
        let infl = between
            .filter(|&i| i > 0 && i + 1 < sm.len())
            .map(|i| sm[i - 1] - 2.0 * sm[i] + sm[i + 1])
            .fold(f64::NEG_INFINITY, f64::max);
        let norm = |v: f64| (peak > 0.0 && v.is_finite()).then(|| v / peak);
        (
            (gsum > 0.0).then(|| shared / gsum),
            norm(min),
            norm(infl / (bin * bin)),
        )
    };

    let mut wz = 0.0;
    let mut w = 0.0;
    for p in cfg.contributing(cloud).filter(|p| p.is_ground()) {
        let s = cfg.spatial_weight(p);
        wz += s * p.z;
        w += s;
    }
    let true_ground = (w > 0.0).then(|| wz / w);

    let sigma_p = cfg.pulse_sigma();
    let excess = g.sigma * g.sigma - sigma_p * sigma_p - bin * bin / 12.0;
    let ground_slope = (excess.max(0.0).sqrt() / cfg.sigma()).atan().to_degrees();

    let area = std::f64::consts::PI * (cfg.diameter / 2.0).powi(2);
    let (mut points, mut beams) = (0usize, 0usize);
    for p in cfg.within_disk(cloud) {
        points += 1;
        if p.return_number <= 1 {
            beams += 1;
        }
    }

    Ok(AncillaryMetrics {
        signal_top,
        signal_bottom,
        leading_edge,
        trailing_edge,
        blair_sense,
        blair_saturated,
        ground_overlap,
        ground_min,
        ground_infl,
        true_ground,
        true_top: wf.true_top,
        ground_slope,
        point_dense: points as f64 / area,
        beam_dense: beams as f64 / area,
        wave_energy: wf.total_energy(),
        lon: wf.center[0],
        lat: wf.center[1],
    })
}

/// Everything derived from one simulated footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformMetrics {
    pub wave_id: String,
    pub ground: GroundEstimate,
    pub rh_gauss: RhProfile,
    pub rh_max: RhProfile,
    pub rh_infl: RhProfile,
    pub rh_real: Option<RhProfile>,
    pub cover: CoverMetrics,
    pub profile: ProfileMetrics,
    pub ancillary: AncillaryMetrics,
}

impl WaveformMetrics {
    /// Compute the full suite for an already simulated waveform.
    pub fn from_waveform(
        wf: &Waveform,
        cloud: &PointCloud,
        cfg: &FootprintConfig,
    ) -> Result<Self, WaveformError> {
        let ground = find_ground(wf, cfg.pulse_sigma())?;
        let rh_gauss = rh_metrics(wf, ground.g_height)?;
        let rh_max = rh_metrics(wf, ground.max_ground)?;
        let rh_infl = rh_metrics(wf, ground.infl_ground)?;
        let cover = cover_metrics(wf, &ground, cloud, cfg)?;
        let profile = profile_metrics(wf, &ground, &rh_gauss, cfg);
        let ancillary = ancillary_metrics(wf, &ground, cloud, cfg)?;
        let rh_real = match ancillary.true_ground {
            Some(t) => rh_metrics(wf, t).ok(),
            None => None,
        };
        Ok(Self {
            wave_id: wf.wave_id.clone(),
            ground,
            rh_gauss,
            rh_max,
            rh_infl,
            rh_real,
            cover,
            profile,
            ancillary,
        })
    }

    /// Structural metrics as a named vector. Absolute elevations and the
    /// footprint coordinates are location descriptors and are left out.
    pub fn to_metric_vector(&self, plot_id: &str) -> Result<MetricVector, MetricsError> {
        let mut v = MetricVector::new(plot_id, SystemTag::SlsFw);
        let a = &self.ancillary;
        let c = &self.cover;
        let p = &self.profile;
        v.push("waveEnergy", Some(a.wave_energy))?;
        v.push("signalExtent", Some(a.signal_top - a.signal_bottom))?;
        v.push("leadingEdgeExt", Some(a.leading_edge))?;
        v.push("trailingEdgeExt", Some(a.trailing_edge))?;
        v.push("blairSense", Some(a.blair_sense))?;
        v.push("groundOverlap", a.ground_overlap)?;
        v.push("groundMin", a.ground_min)?;
        v.push("groundInfl", a.ground_infl)?;
        v.push("groundSlope", Some(a.ground_slope))?;
        v.push("pointDense", Some(a.point_dense))?;
        v.push("beamDense", Some(a.beam_dense))?;
        v.push("cover", Some(c.cover))?;
        v.push("gaussHalfCov", Some(c.gauss_half_cov))?;
        v.push("maxHalfCov", Some(c.max_half_cov))?;
        v.push("infHalfCov", Some(c.inf_half_cov))?;
        v.push("bayHalfCov", Some(c.bay_half_cov))?;
        v.push("ALScover", c.als_cover)?;
        v.push("FHD", Some(p.fhd))?;
        for (k, (lo, hi)) in LAI_BINS.iter().enumerate() {
            v.push(format!("gLAI{lo}t{hi}"), Some(p.g_lai[k]))?;
        }
        for (k, (lo, hi)) in LAI_BINS.iter().enumerate() {
            v.push(format!("hgLAI{lo}t{hi}"), Some(p.hg_lai[k]))?;
        }
        v.push("niM2", Some(p.ni_m2))?;
        v.push("niM2.1", Some(p.ni_m2_1))?;
        let rh_sets = [
            ("rhGauss", Some(&self.rh_gauss)),
            ("rhMax", Some(&self.rh_max)),
            ("rhInfl", Some(&self.rh_infl)),
            ("rhReal", self.rh_real.as_ref()),
        ];
        for (name, rh) in rh_sets {
            for pct in (0..=100).step_by(RH_REPORT_STEP) {
                v.push(format!("{name}.{pct}"), rh.map(|r| r.get(pct)))?;
            }
        }
        Ok(v)
    }
}

/// Simulate the footprint and compute its metrics in one call.
pub fn waveform_metrics(
    cloud: &PointCloud,
    cfg: &FootprintConfig,
) -> Result<(Waveform, WaveformMetrics), WaveformError> {
    let wf = simulate_footprint(cloud, cfg)?;
    let m = WaveformMetrics::from_waveform(&wf, cloud, cfg)?;
    Ok((wf, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::las_io::{PointRecord, CLASS_GROUND};

    fn spikes(top: f64, bin: f64, n: usize, at: &[(usize, f64)]) -> Waveform {
        let mut a = vec![0.0; n];
        for &(i, v) in at {
            a[i] = v;
        }
        Waveform::from_amplitudes(top, bin, a)
    }

    #[test]
    fn rh_symmetric_gaussian() {
        let bin = 0.15;
        let c = GaussianComponent {
            amplitude: 1.0,
            mean: 100.0,
            sigma: 1.0,
        };
        let amps = (0..201).map(|i| c.value(115.0 - i as f64 * bin)).collect();
        let wf = Waveform::from_amplitudes(115.0, bin, amps);
        let rh = rh_metrics(&wf, 100.0).unwrap();
        assert!(rh.get(50).abs() <= bin / 2.0);
        assert!(rh.is_nondecreasing());
    }

    #[test]
    fn rh_single_raised_spike() {
        // all energy 20 m above ground at 80 m
        let wf = spikes(100.0, 0.5, 60, &[(0, 1.0)]);
        let rh = rh_metrics(&wf, 80.0).unwrap();
        for p in 1..=100 {
            assert!((rh.get(p) - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rh_two_equal_spikes() {
        // ground bin at 100 (index 20), canopy bin at 110 (index 0)
        let wf = spikes(110.0, 0.5, 21, &[(0, 1.0), (20, 1.0)]);
        let rh = rh_metrics(&wf, 100.0).unwrap();
        assert!(rh.get(50) >= 0.0 && rh.get(50) <= 10.0);
        assert!((rh.get(75) - 10.0).abs() < 1e-9);
        assert!((rh.get(100) - rh.get(0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rh_ground_above_signal() {
        let wf = spikes(110.0, 0.5, 21, &[(5, 1.0)]);
        assert!(matches!(
            rh_metrics(&wf, 120.0),
            Err(WaveformError::GroundAboveSignal { .. })
        ));
    }

    #[test]
    fn cover_formula() {
        assert_eq!(cover_from_energies(0.0, 3.0, 0.57, 0.4), 0.0);
        assert_eq!(cover_from_energies(3.0, 0.0, 0.57, 0.4), 1.0);
        let c = cover_from_energies(1.0, 1.0, 0.57, 0.4);
        assert!((c - 1.0 / (1.0 + 0.57 / 0.4)).abs() < 1e-15);
        assert!((c - 0.412).abs() < 1e-3);
        assert!(cover_from_energies(2.0, 1.0, 0.57, 0.4) > c);
    }

    #[test]
    fn fhd_layers() {
        assert_eq!(foliage_height_diversity(&[0.0, 5.0, 0.0]), 0.0);
        assert!((foliage_height_diversity(&[2.0, 0.0, 2.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lai_totals_match_cover() {
        let layers = [0.1, 0.2, 0.3];
        let (lai, sat) = macarthur_horn_lai(&layers, 1.0);
        assert!(!sat);
        let total: f64 = lai.iter().sum();
        assert!((total + (1.0 - 0.6f64).ln()).abs() < 1e-12);
        assert!(lai.iter().all(|&v| v >= 0.0));
        let (_, sat) = macarthur_horn_lai(&[1.0], 1.0);
        assert!(sat);
    }

    #[test]
    fn ni_sums() {
        let rh = vec![7.5; 101];
        assert!((ni_biomass(&rh, 2.0) - 101.0 * 56.25).abs() < 1e-9);
        assert_eq!(ni_biomass(&[-3.0, 2.0], 2.0), 4.0);
    }

    fn two_layer_scene(gap: f64) -> PointCloud {
        // one return per 0.5 m cell: ground in gaps, canopy at 15 m otherwise
        let mut pts = Vec::new();
        let n = 80;
        let mut k = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = -20.0 + i as f64 * 0.5;
                let y = -20.0 + j as f64 * 0.5;
                // low-discrepancy split between gaps and canopy
                let u = ((k as f64) * 0.618_033_988_749_895).fract();
                k += 1;
                if u < gap {
                    pts.push(PointRecord::new(x, y, 100.0).with_class(CLASS_GROUND));
                } else {
                    pts.push(PointRecord::new(x, y, 115.0));
                }
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn two_layer_scene_metrics() {
        let cfg = FootprintConfig::default();
        let cloud = two_layer_scene(0.5);
        let (wf, m) = waveform_metrics(&cloud, &cfg).unwrap();
        for g in [m.ground.g_height, m.ground.max_ground, m.ground.infl_ground] {
            assert!((g - 100.0).abs() < 0.5, "{g}");
        }
        assert!((m.cover.cover - 0.5).abs() < 0.05, "{:?}", m.cover);
        assert!((m.cover.als_cover.unwrap() - 0.5).abs() < 0.05);
        assert!((m.ancillary.true_ground.unwrap() - 100.0).abs() < 0.1);
        let top = m.ancillary.true_top.unwrap();
        assert!((m.ground.g_height + m.rh_gauss.get(100) - top).abs() <= wf.bin_size);
        assert!(m.ancillary.ground_overlap.unwrap() < 0.01);
        assert!(m.ancillary.ground_slope < 1.0);
        let v = m.to_metric_vector("p").unwrap();
        assert!(v.contains("rhGauss.95") && v.contains("niM2.1"));
    }

    #[test]
    fn scale_invariance() {
        let cfg = FootprintConfig::default();
        let cloud = two_layer_scene(0.3);
        let wf = simulate_footprint(&cloud, &cfg).unwrap();
        let a = WaveformMetrics::from_waveform(&wf, &cloud, &cfg).unwrap();
        let b = WaveformMetrics::from_waveform(&wf.scaled(2.0), &cloud, &cfg).unwrap();
        for p in 0..=100 {
            assert!((a.rh_gauss.get(p) - b.rh_gauss.get(p)).abs() < 1e-6);
        }
        assert!((a.cover.cover - b.cover.cover).abs() < 1e-6);
        assert!((a.profile.fhd - b.profile.fhd).abs() < 1e-6);
        assert!((b.ancillary.wave_energy - 2.0 * a.ancillary.wave_energy).abs() < 1e-9);
    }

    #[test]
    fn point_density_in_disk() {
        let cfg = FootprintConfig::default();
        let mut pts = Vec::new();
        for k in 0..100 {
            let t = k as f64 * 0.1;
            pts.push(PointRecord::new(5.0 * t.cos(), 5.0 * t.sin(), 10.0).with_class(CLASS_GROUND));
        }
        let cloud = PointCloud::new(pts);
        let (_, m) = waveform_metrics(&cloud, &cfg).unwrap();
        let expected = 100.0 / (std::f64::consts::PI * 12.5 * 12.5);
        assert!((m.ancillary.point_dense - expected).abs() < 1e-12);
        assert!((expected - 0.204).abs() < 1e-3);
        assert!(m.ancillary.ground_overlap.is_none());
        assert!(m.ancillary.blair_saturated);
    }

    #[test]
    fn spike_extent() {
        let wf = spikes(50.0, 0.15, 40, &[(10, 1.0)]);
        let (t, b) = wf.signal_extent().unwrap();
        assert_eq!(t, b);
        assert!((t - wf.elevation(10)).abs() < 1e-12);
    }
}
