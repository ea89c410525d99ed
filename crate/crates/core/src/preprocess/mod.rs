//! Point-cloud cleaning and height normalization.
//!
//! The steps run in this order in the pipeline: [`dedupe`], [`remove_noise`],
//! [`classify_ground`], [`normalize_heights`]. Each is a pure function of its
//! input and can run per tile in parallel.

mod ground;
mod noise;

pub use ground::{classify_ground, GroundModel, GroundParams};
pub use noise::{remove_noise, NoiseParams};

use crate::las_io::{PointCloud, PointRecord};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cloud has {have} points, noise filter needs more than k = {k}")]
    TooFewPoints { have: usize, k: usize },
    #[error("no candidate ground points")]
    NoGroundCandidates,
    #[error("cloud is empty")]
    EmptyCloud,
    #[error("point ({x}, {y}) lies outside the ground model extent")]
    OutsideGround { x: f64, y: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed ground grid: {0}")]
    MalformedGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn canonical_bits(v: f64) -> u64 {
    // -0.0 and 0.0 compare equal; give them one key.
    (v + 0.0).to_bits()
}

/// Drop repeated returns, keyed on exact `(x, y, z, gps_time)`; the first
/// occurrence survives.
pub fn dedupe(cloud: &PointCloud) -> PointCloud {
    let mut seen = HashSet::with_capacity(cloud.len());
    let points = cloud
        .iter()
        .filter(|p| {
            seen.insert((
                canonical_bits(p.x),
                canonical_bits(p.y),
                canonical_bits(p.z),
                p.gps_time.map(canonical_bits),
            ))
        })
        .copied()
        .collect();
    cloud.derive(points)
}

/// Sanity counters for return and timing consistency.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoherenceReport {
    /// Consecutive pairs whose GPS time decreases.
    pub gps_time_reversals: usize,
    /// Points whose return number exceeds their return count.
    pub bad_return_numbers: usize,
}

impl CoherenceReport {
    pub fn is_clean(&self) -> bool {
        self.gps_time_reversals == 0 && self.bad_return_numbers == 0
    }
}

pub fn check_coherence(cloud: &PointCloud) -> CoherenceReport {
    let mut report = CoherenceReport::default();
    let mut last: Option<f64> = None;
    for p in cloud.iter() {
        if p.return_number > p.number_of_returns {
            report.bad_return_numbers += 1;
        }
        if let Some(t) = p.gps_time {
            if matches!(last, Some(prev) if t < prev) {
                report.gps_time_reversals += 1;
            }
            last = Some(t);
        }
    }
    report
}

/// A cloud whose z is height above ground in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedCloud {
    pub cloud: PointCloud,
}

impl NormalizedCloud {
    /// Wrap a cloud whose z values are already heights.
    pub fn from_heights(cloud: PointCloud) -> Self {
        Self { cloud }
    }

    pub fn points(&self) -> &[PointRecord] {
        &self.cloud.points
    }
}

/// Default lower clamp for normalized heights.
pub const DEFAULT_HEIGHT_FLOOR: f64 = -1.0;

/// Subtract the bilinear ground elevation from every point; heights below
/// `floor` are clamped to it.
pub fn normalize_heights(
    cloud: &PointCloud,
    ground: &GroundModel,
    floor: f64,
) -> Result<NormalizedCloud, PreprocessError> {
    let points = cloud
        .iter()
        .map(|p| {
            let g = ground
                .elevation_at(p.x, p.y)
                .ok_or(PreprocessError::OutsideGround { x: p.x, y: p.y })?;
            Ok(PointRecord {
                z: (p.z - g).max(floor),
                ..*p
            })
        })
        .collect::<Result<Vec<_>, PreprocessError>>()?;
    Ok(NormalizedCloud {
        cloud: cloud.derive(points),
    })
}
