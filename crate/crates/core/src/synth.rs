//! Synthetic forest scenes with known per-tree truth.
//!
//! Stems are placed uniformly in the plot and in a surrounding margin,
//! crowns are paraboloids of revolution, and pulses are cast vertically:
//! each pulse returns from the highest crown surface it meets, and may
//! continue to the ground with a fixed penetration probability.

use crate::allometry::{PlotInventory, TreeRecord};
use crate::las_io::Polygon;
use crate::las_io::{PointCloud, PointRecord, CLASS_GROUND, CLASS_UNCLASSIFIED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Allometric rule from height (m) to DBH (cm): `DBH = a * H^b`.
pub const DBH_COEFFICIENT: f64 = 4.4;
pub const DBH_EXPONENT: f64 = 0.37;
/// Upper bound on summed crown projection area over scene area.
pub const MAX_CROWN_OVERLAP: f64 = 25.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("crowns cover {ratio:.1}x the scene area (cap {MAX_CROWN_OVERLAP})")]
    CrownOverlap { ratio: f64 },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub plot_id: String,
    /// Lower-left plot corner (m).
    pub origin: [f64; 2],
    /// Plot extent along x and y (m).
    pub width: f64,
    pub length: f64,
    /// Forested buffer around the plot (m).
    pub margin: f64,
    /// Trees per hectare.
    pub stem_density: f64,
    /// Uniform tree-height range (m).
    pub height_min: f64,
    pub height_max: f64,
    /// Crown radius as a fraction of tree height.
    pub crown_ratio: f64,
    /// Crown depth as a fraction of tree height.
    pub crown_depth: f64,
    /// Terrain elevation at the origin (m) and gradient (m/m).
    pub ground_elevation: f64,
    pub slope: [f64; 2],
    /// Pulses per m².
    pub point_density: f64,
    /// Chance that a pulse hitting a crown also returns from the ground.
    pub penetration: f64,
    pub wood_density: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            plot_id: "P1".into(),
            origin: [0.0, 0.0],
            width: 20.0,
            length: 50.0,
            margin: 10.0,
            stem_density: 1000.0,
            height_min: 8.0,
            height_max: 12.0,
            crown_ratio: 0.25,
            crown_depth: 0.5,
            ground_elevation: 100.0,
            slope: [0.0, 0.0],
            point_density: 40.0,
            penetration: 0.3,
            wood_density: 0.6,
            seed: 123,
        }
    }
}

/// A generated tree.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTree {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub dbh: f64,
    pub crown_radius: f64,
    pub in_plot: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub inventory: PlotInventory,
    pub trees: Vec<SynthTree>,
    pub plot: Polygon,
}

pub fn dbh_from_height(h: f64) -> f64 {
    DBH_COEFFICIENT * h.powf(DBH_EXPONENT)
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let bad = |m: &str| Err(SynthError::Invalid(m.into()));
        if !(pos(self.width) && pos(self.length)) {
            return bad("plot dimensions must be positive");
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be non-negative");
        }
        if !(self.stem_density >= 0.0 && self.stem_density.is_finite()) {
            return bad("stem density must be non-negative");
        }
        if !(pos(self.height_min) && self.height_max >= self.height_min) {
            return bad("height range must be positive and ordered");
        }
        if !(pos(self.crown_ratio) && pos(self.crown_depth) && self.crown_depth <= 1.0) {
            return bad("crown ratio and depth must be positive, depth at most 1");
        }
        if !pos(self.point_density) {
            return bad("point density must be positive");
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return bad("penetration must be in [0, 1]");
        }
        if dbh_from_height(self.height_min) < crate::allometry::MIN_DBH_CM {
            return bad("minimum height gives DBH below the census threshold");
        }
        Ok(())
    }

    pub fn plot_polygon(&self) -> Polygon {
        let [x, y] = self.origin;
        Polygon::rectangle(x, y, self.width, self.length).expect("validated dimensions")
    }

    pub fn plot_center(&self) -> [f64; 2] {
        [
            self.origin[0] + self.width / 2.0,
            self.origin[1] + self.length / 2.0,
        ]
    }

    fn ground_at(&self, x: f64, y: f64) -> f64 {
        self.ground_elevation
            + self.slope[0] * (x - self.origin[0])
            + self.slope[1] * (y - self.origin[1])
    }
}

fn count(density: f64, area: f64) -> usize {
    (density * area / 1e4).round() as usize
}

/// Build the scene for `spec`.
pub fn generate(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [x0, y0] = spec.origin;
    let (x1, y1) = (x0 + spec.width, y0 + spec.length);
    let m = spec.margin;
    let (sx0, sy0, sx1, sy1) = (x0 - m, y0 - m, x1 + m, y1 + m);
    let plot_area = spec.width * spec.length;
    let scene_area = (sx1 - sx0) * (sy1 - sy0);

    let mut trees = Vec::new();
    let new_tree = |x: f64, y: f64, in_plot: bool, rng: &mut ChaCha8Rng| {
        let height = if spec.height_max > spec.height_min {
            rng.random_range(spec.height_min..spec.height_max)
        } else {
            spec.height_min
        };
        SynthTree {
            x,
            y,
            height,
            dbh: dbh_from_height(height),
            crown_radius: spec.crown_ratio * height,
            in_plot,
        }
    };
    for _ in 0..count(spec.stem_density, plot_area) {
        let (x, y) = (rng.random_range(x0..x1), rng.random_range(y0..y1));
        trees.push(new_tree(x, y, true, &mut rng));
    }
    let buffer = count(spec.stem_density, scene_area - plot_area);
    while trees.len() < buffer + count(spec.stem_density, plot_area) {
        let (x, y) = (rng.random_range(sx0..sx1), rng.random_range(sy0..sy1));
        if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
            continue;
        }
        trees.push(new_tree(x, y, false, &mut rng));
    }
    let crown_area: f64 = trees
        .iter()
        .map(|t| std::f64::consts::PI * t.crown_radius.powi(2))
        .sum();
    if crown_area / scene_area > MAX_CROWN_OVERLAP {
        return Err(SynthError::CrownOverlap {
            ratio: crown_area / scene_area,
        });
    }

    // bucket trees on a coarse grid for crown lookups
    let cell = 5.0;
    let mut buckets: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, t) in trees.iter().enumerate() {
        let r = t.crown_radius;
        let (cx0, cx1) = (
            ((t.x - r) / cell).floor() as i64,
            ((t.x + r) / cell).floor() as i64,
        );
        let (cy0, cy1) = (
            ((t.y - r) / cell).floor() as i64,
            ((t.y + r) / cell).floor() as i64,
        );
        for cx in cx0..=cx1 {
            for cy in cy0..=cy1 {
                buckets.entry((cx, cy)).or_default().push(i);
            }
        }
    }
    let canopy_at = |x: f64, y: f64| -> Option<f64> {
        let key = ((x / cell).floor() as i64, (y / cell).floor() as i64);
        buckets
            .get(&key)?
            .iter()
            .filter_map(|&i| {
                let t = &trees[i];
                let d2 = (x - t.x).powi(2) + (y - t.y).powi(2);
                let r2 = t.crown_radius * t.crown_radius;
                (d2 <= r2).then(|| t.height - spec.crown_depth * t.height * d2 / r2)
            })
            .fold(None, |acc: Option<f64>, h| {
                Some(acc.map_or(h, |a| a.max(h)))
            })
    };

    let intensity = |rho: f64, rng: &mut ChaCha8Rng| -> u16 {
        (rho * 1000.0 * rng.random_range(0.8..1.2)).round() as u16
    };
    let pulses = (spec.point_density * scene_area).round() as usize;
    let mut points = Vec::with_capacity(pulses * 2 + trees.len());
    for k in 0..pulses {
        let (x, y) = (rng.random_range(sx0..sx1), rng.random_range(sy0..sy1));
        let g = spec.ground_at(x, y);
        let t = k as f64 * 1e-5;
        match canopy_at(x, y) {
            Some(h) => {
                let through = rng.random_bool(spec.penetration);
                let n = if through { 2 } else { 1 };
                let i = intensity(0.57, &mut rng);
                points.push(
                    PointRecord::new(x, y, g + h)
                        .with_class(CLASS_UNCLASSIFIED)
                        .with_returns(1, n)
                        .with_intensity(i)
                        .with_gps_time(t),
                );
                if through {
                    let i = intensity(0.4, &mut rng);
                    points.push(
                        PointRecord::new(x, y, g)
                            .with_class(CLASS_GROUND)
                            .with_returns(2, 2)
                            .with_intensity(i)
                            .with_gps_time(t),
                    );
                }
            }
            None => {
                let i = intensity(0.4, &mut rng);
                points.push(
                    PointRecord::new(x, y, g)
                        .with_class(CLASS_GROUND)
                        .with_returns(1, 1)
                        .with_intensity(i)
                        .with_gps_time(t),
                );
            }
        }
    }
    for (k, t) in trees.iter().enumerate() {
        let g = spec.ground_at(t.x, t.y);
        points.push(
            PointRecord::new(t.x, t.y, g + t.height)
                .with_class(CLASS_UNCLASSIFIED)
                .with_returns(1, 1)
                .with_intensity(570)
                .with_gps_time((pulses + k) as f64 * 1e-5),
        );
    }

    let records = trees
        .iter()
        .filter(|t| t.in_plot)
        .map(|t| TreeRecord::new("synthetic", spec.wood_density, t.dbh, t.height))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SynthError::Invalid(e.to_string()))?;
    Ok(Scene {
        cloud: PointCloud::new(points),
        inventory: PlotInventory::new(spec.plot_id.clone(), plot_area, records),
        trees,
        plot: spec.plot_polygon(),
    })
}

/// Thin a cloud to about `density` pulses per m² over `area` m². Returns
/// of one pulse (same GPS time) are kept or dropped together; points
/// without GPS time are treated as single-return pulses.
pub fn decimate(cloud: &PointCloud, density: f64, area: f64, seed: u64) -> PointCloud {
    let pulses: BTreeMap<u64, usize> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| (p.gps_time.map_or(i as u64 | 1 << 63, f64::to_bits), 0))
        .collect();
    let current = pulses.len() as f64 / area;
    if current <= density {
        return cloud.clone();
    }
    let keep_p = density / current;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: BTreeMap<u64, bool> = pulses
        .keys()
        .map(|&k| (k, rng.random_bool(keep_p)))
        .collect();
    let points = cloud
        .iter()
        .enumerate()
        .filter(|(i, p)| keep[&p.gps_time.map_or(*i as u64 | 1 << 63, f64::to_bits)])
        .map(|(_, p)| *p)
        .collect();
    cloud.derive(points)
}

/// Write the per-tree truth with plot ids as an inventory CSV.
pub fn truth_rows(scene: &Scene) -> Vec<(String, TreeRecord)> {
    scene
        .inventory
        .trees
        .iter()
        .map(|t| (scene.inventory.plot_id.clone(), t.clone()))
        .collect()
}
