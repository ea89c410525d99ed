//! Run configuration, read from TOML.

use crate::error::{Error, Result};
use crate::features::{SelectionConfig, Target};
use crate::las_io::Polygon;
use crate::metrics::{SystemTag, DEFAULT_HEIGHT_CUTOFF};
use crate::models::{DEFAULT_C_GRID, DEFAULT_SIGMA_GRID};
use crate::preprocess::{GroundParams, NoiseParams};
use crate::waveform::FootprintConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub id: String,
    /// Polygon vertices in the cloud CRS.
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub tag: SystemTag,
    /// LAS files for a discrete-return system.
    #[serde(default)]
    pub clouds: Vec<PathBuf>,
    /// For a simulated waveform system: the discrete system to simulate from.
    #[serde(default)]
    pub source: Option<SystemTag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventoryConfig {
    /// Tree list CSV (`plot_id,species,dbh_cm,height_m[,rho]`).
    pub trees: Option<PathBuf>,
    /// Species wood density CSV (`species,rho`).
    pub density: Option<PathBuf>,
    /// Precomputed plot totals CSV, used instead of `trees`.
    pub totals: Option<PathBuf>,
    /// Plot area (m²) applied to every plot.
    pub area: f64,
    pub default_density: f64,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        Self {
            trees: None,
            density: None,
            totals: None,
            area: crate::allometry::DEFAULT_PLOT_AREA,
            default_density: crate::allometry::DEFAULT_WOOD_DENSITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub diameter: f64,
    pub footprint_sigma: Option<f64>,
    pub pulse_fwhm: f64,
    pub bin_size: f64,
    pub noise_std: f64,
    pub rho_v: f64,
    pub rho_g: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        let f = FootprintConfig::default();
        Self {
            diameter: f.diameter,
            footprint_sigma: f.footprint_sigma,
            pulse_fwhm: f.pulse_fwhm,
            bin_size: f.bin_size,
            noise_std: f.noise_std,
            rho_v: f.rho_v,
            rho_g: f.rho_g,
        }
    }
}

impl WaveformConfig {
    pub fn footprint(&self, center: [f64; 2], seed: u64) -> FootprintConfig {
        FootprintConfig {
            center,
            diameter: self.diameter,
            footprint_sigma: self.footprint_sigma,
            pulse_fwhm: self.pulse_fwhm,
            bin_size: self.bin_size,
            noise_std: self.noise_std,
            rho_v: self.rho_v,
            rho_g: self.rho_g,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub targets: Vec<Target>,
    pub ols_max_vars: usize,
    pub sigma_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub repeats: usize,
    pub epsilon: f64,
    pub selection: SelectionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            targets: Target::ALL.to_vec(),
            ols_max_vars: 3,
            sigma_grid: DEFAULT_SIGMA_GRID.to_vec(),
            c_grid: DEFAULT_C_GRID.to_vec(),
            repeats: 9,
            epsilon: 0.1,
            selection: SelectionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory.
    pub output: PathBuf,
    #[serde(default = "default_tile")]
    pub tile_size: f64,
    /// Extra margin (m) around each plot kept for ground filtering and
    /// waveform simulation.
    #[serde(default = "default_buffer")]
    pub buffer: f64,
    #[serde(default = "default_cutoff")]
    pub height_cutoff: f64,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub ground: GroundParams,
    #[serde(default)]
    pub waveform: WaveformConfig,
    pub plots: Vec<PlotConfig>,
    pub systems: Vec<SystemConfig>,
    #[serde(default)]
    pub inventory: InventoryConfig,
    #[serde(default)]
    pub models: ModelConfig,
}

fn default_seed() -> u64 {
    123
}
fn default_tile() -> f64 {
    125.0
}
fn default_buffer() -> f64 {
    20.0
}
fn default_cutoff() -> f64 {
    DEFAULT_HEIGHT_CUTOFF
}

impl RunConfig {
    /// Parse TOML text; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut cfg.output);
        for s in &mut cfg.systems {
            s.clouds.iter_mut().for_each(abs);
        }
        for p in [
            &mut cfg.inventory.trees,
            &mut cfg.inventory.density,
            &mut cfg.inventory.totals,
        ]
        .into_iter()
        .flatten()
        {
            abs(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.plots.is_empty() {
            return bad("no plots configured".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.plots {
            let safe = !p.id.is_empty()
                && p.id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !safe || p.id.starts_with('.') {
                return bad(format!("plot id {:?} is not usable as a file name", p.id));
            }
            if !ids.insert(&p.id) {
                return bad(format!("duplicate plot id {}", p.id));
            }
            Polygon::new(p.polygon.clone())
                .map_err(|e| Error::Config(format!("plot {}: {e}", p.id)))?;
        }
        let mut tags = std::collections::BTreeSet::new();
        for s in &self.systems {
            if !tags.insert(s.tag) {
                return bad(format!("system {} listed twice", s.tag));
            }
            match (&s.source, s.clouds.is_empty()) {
                (None, true) => {
                    return bad(format!("system {} has no clouds and no source", s.tag))
                }
                (Some(_), false) => {
                    return bad(format!("system {} has both clouds and a source", s.tag))
                }
                _ => {}
            }
        }
        for s in &self.systems {
            if let Some(src) = s.source {
                let ok = self
                    .systems
                    .iter()
                    .any(|o| o.tag == src && o.source.is_none());
                if !ok {
                    return bad(format!(
                        "system {} simulates from unknown discrete system {src}",
                        s.tag
                    ));
                }
            }
        }
        if self.systems.is_empty() {
            return bad("no systems configured".into());
        }
        if self.inventory.trees.is_none() && self.inventory.totals.is_none() {
            return bad("inventory needs `trees` or `totals`".into());
        }
        if !(self.tile_size > 0.0 && self.buffer >= 0.0) {
            return bad("tile_size must be positive and buffer non-negative".into());
        }
        if self.models.sigma_grid.is_empty() || self.models.c_grid.is_empty() {
            return bad("empty hyperparameter grid".into());
        }
        if self.models.targets.is_empty() {
            return bad("no targets".into());
        }
        Ok(())
    }

    /// Fail with a config error if any referenced input file is missing.
    pub fn check_inputs(&self) -> Result<()> {
        let inv = &self.inventory;
        let files = self.systems.iter().flat_map(|s| s.clouds.iter()).chain(
            [&inv.trees, &inv.density, &inv.totals]
                .into_iter()
                .flatten(),
        );
        for f in files {
            if !f.is_file() {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    f.display()
                )));
            }
        }
        Ok(())
    }

    pub fn polygon(&self, plot: &PlotConfig) -> Polygon {
        Polygon::new(plot.polygon.clone()).expect("validated polygon")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output = "out"
[[plots]]
id = "A"
polygon = [[0.0, 0.0], [20.0, 0.0], [20.0, 50.0], [0.0, 50.0]]
[[systems]]
tag = "ALS_D"
clouds = ["als.las"]
[[systems]]
tag = "SLS_FW"
source = "ALS_D"
[inventory]
trees = "trees.csv"
"#;

    #[test]
    fn minimal_config() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.seed, 123);
        assert_eq!(cfg.output, PathBuf::from("/data/out"));
        assert_eq!(cfg.systems[0].clouds[0], PathBuf::from("/data/als.las"));
        assert_eq!(cfg.models.sigma_grid.len(), 7);
        assert_eq!(cfg.inventory.area, 1000.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = MINIMAL.replace("output", "outptu");
        assert!(RunConfig::from_toml(&unknown, Path::new(".")).is_err());
        let bad_source = MINIMAL.replace("source = \"ALS_D\"", "source = \"ULS_D\"");
        assert!(RunConfig::from_toml(&bad_source, Path::new(".")).is_err());
        let degenerate = MINIMAL.replace("[20.0, 50.0], ", "");
        let degenerate = degenerate.replace(
            "[[0.0, 0.0], [20.0, 0.0], [0.0, 50.0]]",
            "[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]",
        );
        assert!(RunConfig::from_toml(&degenerate, Path::new(".")).is_err());
        let bad_id = MINIMAL.replace("id = \"A\"", "id = \"../A\"");
        assert!(RunConfig::from_toml(&bad_id, Path::new(".")).is_err());
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = cfg.check_inputs().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
