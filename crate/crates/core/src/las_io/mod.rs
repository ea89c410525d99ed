//! LAS point-cloud I/O plus planar tiling and polygon clipping.
//!
//! Only uncompressed LAS 1.2 / 1.4 with point record formats 0, 1 and 6 is
//! handled. Anything else (including LAZ) is rejected with a dedicated error.

mod format;
mod spatial;

pub use format::{read_las, read_las_from, write_las, write_las_to, write_las_with, PointFormat};
pub use spatial::{clip_polygon, tile, Polygon, TileGrid, TileIndex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// LAS classification code for ground returns.
pub const CLASS_GROUND: u8 = 2;
/// LAS classification code for never-classified points.
pub const CLASS_UNCLASSIFIED: u8 = 1;

#[derive(Debug, Error)]
pub enum LasError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported LAS version {major}.{minor}")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("unsupported point record format {0} (only 0, 1 and 6 are supported)")]
    UnsupportedPointFormat(u8),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated point data: header announces {expected} points, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("cannot write an empty point cloud")]
    EmptyCloud,
    #[error(
        "{axis} coordinate {value} is not representable with scale {scale} and offset {offset}"
    )]
    OutOfRange {
        axis: char,
        value: f64,
        scale: f64,
        offset: f64,
    },
    #[error("invalid point: {0}")]
    InvalidPoint(String),
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("tile size must be positive, got {0}")]
    InvalidTileSize(f64),
}

/// A single georeferenced return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: u16,
    pub return_number: u8,
    pub number_of_returns: u8,
    pub classification: u8,
    pub gps_time: Option<f64>,
}

impl PointRecord {
    /// A single-return, unclassified point at `(x, y, z)`.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0,
            return_number: 1,
            number_of_returns: 1,
            classification: CLASS_UNCLASSIFIED,
            gps_time: None,
        }
    }

    pub fn with_class(mut self, classification: u8) -> Self {
        self.classification = classification;
        self
    }

    pub fn with_returns(mut self, return_number: u8, number_of_returns: u8) -> Self {
        self.return_number = return_number;
        self.number_of_returns = number_of_returns;
        self
    }

    pub fn with_intensity(mut self, intensity: u16) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn with_gps_time(mut self, t: f64) -> Self {
        self.gps_time = Some(t);
        self
    }

    pub fn is_ground(&self) -> bool {
        self.classification == CLASS_GROUND
    }

    pub fn validate(&self) -> Result<(), LasError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(LasError::InvalidPoint(format!(
                "non-finite coordinate ({}, {}, {})",
                self.x, self.y, self.z
            )));
        }
        if !(1..=15).contains(&self.return_number)
            || !(1..=15).contains(&self.number_of_returns)
            || self.return_number > self.number_of_returns
        {
            return Err(LasError::InvalidPoint(format!(
                "return {} of {}",
                self.return_number, self.number_of_returns
            )));
        }
        Ok(())
    }
}

/// Axis-aligned bounds of a cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a PointRecord>) -> Option<Bounds> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Bounds {
            min: [first.x, first.y, first.z],
            max: [first.x, first.y, first.z],
        };
        for p in it {
            for (k, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                b.min[k] = b.min[k].min(v);
                b.max[k] = b.max[k].max(v);
            }
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

/// Per-axis quantization used when the cloud is stored as LAS integers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantization {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl Default for Quantization {
    fn default() -> Self {
        Self {
            scale: [0.001; 3],
            offset: [0.0; 3],
        }
    }
}

impl Quantization {
    pub fn new(scale: [f64; 3], offset: [f64; 3]) -> Result<Self, LasError> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LasError::MalformedHeader(format!(
                "scale factors must be positive, got {scale:?}"
            )));
        }
        Ok(Self { scale, offset })
    }
}

/// An ordered set of returns sharing one CRS and quantization.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<PointRecord>,
    pub crs_label: String,
    pub quantization: Quantization,
}

impl PointCloud {
    pub fn new(points: Vec<PointRecord>) -> Self {
        Self {
            points,
            crs_label: String::new(),
            quantization: Quantization::default(),
        }
    }

    /// A cloud holding `points` with the CRS and quantization of `self`.
    pub fn derive(&self, points: Vec<PointRecord>) -> Self {
        Self {
            points,
            crs_label: self.crs_label.clone(),
            quantization: self.quantization,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<Bounds> {
        Bounds::of(&self.points)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PointRecord> {
        self.points.iter()
    }
}
