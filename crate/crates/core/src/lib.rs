//! Plot-level forest aboveground biomass estimation from discrete-return
//! and simulated full-waveform lidar.
//!
//! The crate covers LAS I/O, point-cloud preprocessing, canopy metrics,
//! large-footprint waveform simulation, biomass allometry, feature
//! selection, OLS and SVR models, and evaluation. [`pipeline`] wires them
//! into a staged run.

pub mod allometry;
mod error;
pub mod evaluate;
pub mod features;
pub mod las_io;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod stats;
pub mod synth;
pub mod waveform;

pub use error::{Error, ErrorKind, Result};

pub use allometry::{PlotInventory, PlotTotals, TreeRecord};
pub use features::{FeatureTable, SelectionReport, Target};
pub use las_io::{PointCloud, PointRecord, Polygon};
pub use metrics::{MetricVector, SystemTag};
pub use models::{Model, OlsModel, SvrModel};
pub use preprocess::{GroundModel, NormalizedCloud};
pub use waveform::{FootprintConfig, Waveform, WaveformMetrics};
