//! A self-contained synthetic project: ten plots spanning young to mature
//! stands, a dense drone-like cloud, a sparse airborne cloud, a simulated
//! waveform system, and the matching tree list.

use super::config::{InventoryConfig, PlotConfig, RunConfig, SystemConfig};
use super::create_file;
use crate::allometry::{write_inventory_csv, TreeRecord};
use crate::error::Result;
use crate::las_io::{write_las, PointCloud};
use crate::metrics::{SystemTag, DEFAULT_HEIGHT_CUTOFF};
use crate::synth::{decimate, generate, truth_rows, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSpec {
    pub plots: usize,
    /// Dense cloud density (pts/m²).
    pub dense_density: f64,
    /// Sparse cloud density (pts/m²), obtained by pulse decimation.
    pub sparse_density: f64,
    pub seed: u64,
    pub tile_size: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            plots: 10,
            dense_density: 40.0,
            sparse_density: 12.0,
            seed: 123,
            tile_size: 125.0,
        }
    }
}

impl DemoSpec {
    /// Scene for plot `k`: mean height rises from 8 to 20 m and stem
    /// density from 890 to 1450 per hectare, with seeded jitter.
    pub fn scene(&self, k: usize) -> SceneSpec {
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let t = if self.plots > 1 {
            k as f64 / (self.plots - 1) as f64
        } else {
            0.0
        };
        let h = 8.0 + 12.0 * t;
        let density = (890.0 + 560.0 * t) * rng.random_range(0.92..1.08);
        SceneSpec {
            plot_id: format!("P{:02}", k + 1),
            origin: [k as f64 * self.tile_size + 40.0, 40.0],
            stem_density: density.round(),
            height_min: 0.825 * h,
            height_max: 1.175 * h,
            ground_elevation: 120.0 + 4.0 * rng.random::<f64>(),
            slope: [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)],
            point_density: self.dense_density,
            seed: rng.random(),
            ..SceneSpec::default()
        }
    }
}

/// Files written by [`write_demo_project`].
#[derive(Clone, Debug)]
pub struct DemoProject {
    pub config: PathBuf,
    pub dense: PathBuf,
    pub sparse: PathBuf,
    pub trees: PathBuf,
}

/// Generate the scenes and write clouds, tree list and `run.toml` into
/// `dir`. The config's output directory is `dir/out`.
pub fn write_demo_project(dir: &Path, spec: &DemoSpec) -> Result<DemoProject> {
    std::fs::create_dir_all(dir).map_err(|source| crate::Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let scenes = (0..spec.plots)
        .into_par_iter()
        .map(|k| {
            let scene_spec = spec.scene(k);
            let scene = generate(&scene_spec)?;
            let [w, l] = [
                scene_spec.width + 2.0 * scene_spec.margin,
                scene_spec.length + 2.0 * scene_spec.margin,
            ];
            let sparse = decimate(
                &scene.cloud,
                spec.sparse_density,
                w * l,
                scene_spec.seed ^ 1,
            );
            Ok((scene_spec, scene, sparse))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dense = PointCloud::default();
    let mut sparse = PointCloud::default();
    let mut trees: Vec<(String, TreeRecord)> = Vec::new();
    let mut plots = Vec::new();
    for (s, scene, thin) in scenes {
        dense.points.extend(scene.cloud.points.iter().copied());
        sparse.points.extend(thin.points);
        trees.extend(truth_rows(&scene));
        plots.push(PlotConfig {
            id: s.plot_id.clone(),
            polygon: scene.plot.vertices().to_vec(),
        });
    }
    let project = DemoProject {
        config: dir.join("run.toml"),
        dense: dir.join("uls.las"),
        sparse: dir.join("als.las"),
        trees: dir.join("trees.csv"),
    };
    write_las(&dense, &project.dense)?;
    write_las(&sparse, &project.sparse)?;
    write_inventory_csv(&trees, create_file(&project.trees)?)?;

    let cfg = RunConfig {
        seed: spec.seed,
        output: "out".into(),
        tile_size: spec.tile_size,
        buffer: 20.0,
        height_cutoff: DEFAULT_HEIGHT_CUTOFF,
        noise: Default::default(),
        ground: Default::default(),
        waveform: Default::default(),
        plots,
        systems: vec![
            SystemConfig {
                tag: SystemTag::AlsD,
                clouds: vec!["als.las".into()],
                source: None,
            },
            SystemConfig {
                tag: SystemTag::UlsD,
                clouds: vec!["uls.las".into()],
                source: None,
            },
            SystemConfig {
                tag: SystemTag::SlsFw,
                clouds: vec![],
                source: Some(SystemTag::AlsD),
            },
        ],
        inventory: InventoryConfig {
            trees: Some("trees.csv".into()),
            ..Default::default()
        },
        models: Default::default(),
    };
    let text = toml::to_string(&cfg).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut out = create_file(&project.config)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(project)
}
