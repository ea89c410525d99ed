use super::PreprocessError;
use crate::las_io::PointCloud;
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::num::NonZero;

/// Statistical outlier removal settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Neighbors used for the mean neighbor distance.
    pub k: usize,
    /// Cut-off in global standard deviations above the mean.
    pub sigma_mult: f64,
    /// A point must also sit this many times farther than the median
    /// neighbor distance; keeps the borders of regular grids intact.
    pub median_ratio: f64,
    pub max_passes: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            k: 8,
            sigma_mult: 3.0,
            median_ratio: 2.0,
            max_passes: 20,
        }
    }
}

struct Knn {
    /// Mean distance to the `k` nearest neighbors.
    mean: f64,
    /// Indices of the neighbors, into the original point list.
    neighbors: Vec<usize>,
}

/// kNN statistics for the points in `query`, searching among `alive`.
fn knn(coords: &[[f64; 3]], alive: &[usize], query: &[usize], k: usize) -> Vec<Knn> {
    let live: Vec<[f64; 3]> = alive.iter().map(|&i| coords[i]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&live);
    let qty = NonZero::new(k + 1).expect("k + 1 > 0");
    query
        .par_iter()
        .map(|&i| {
            // The query point itself is among the k + 1 nearest at distance 0.
            let found = tree.nearest_n::<SquaredEuclidean>(&coords[i], qty);
            Knn {
                mean: found.iter().map(|n| n.distance.sqrt()).sum::<f64>() / k as f64,
                neighbors: found.iter().map(|n| alive[n.item as usize]).collect(),
            }
        })
        .collect()
}

/// Remove isolated returns whose mean distance to their `k` nearest
/// neighbors exceeds `mean + sigma_mult * stddev` of that statistic.
///
/// Passes repeat until nothing more is removed, so the filter is idempotent.
/// After the first pass only points that lost a neighbor are re-queried.
pub fn remove_noise(
    cloud: &PointCloud,
    params: &NoiseParams,
) -> Result<PointCloud, PreprocessError> {
    if params.k == 0 || !(params.sigma_mult >= 0.0) {
        return Err(PreprocessError::InvalidParameter(format!(
            "k = {}, sigma_mult = {}",
            params.k, params.sigma_mult
        )));
    }
    if cloud.len() <= params.k {
        return Err(PreprocessError::TooFewPoints {
            have: cloud.len(),
            k: params.k,
        });
    }
    let coords: Vec<[f64; 3]> = cloud.iter().map(|p| [p.x, p.y, p.z]).collect();
    let mut alive: Vec<usize> = (0..coords.len()).collect();
    let mut keep = vec![true; coords.len()];
    let mut stats: Vec<Option<Knn>> = (0..coords.len()).map(|_| None).collect();
    let mut stale = alive.clone();
    for _ in 0..params.max_passes {
        if alive.len() <= params.k {
            break;
        }
        for (i, s) in stale.iter().zip(knn(&coords, &alive, &stale, params.k)) {
            stats[*i] = Some(s);
        }
        let d: Vec<f64> = alive
            .iter()
            .map(|&i| stats[i].as_ref().expect("computed").mean)
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = d.clone();
        sorted.sort_by(f64::total_cmp);
        let median = crate::stats::median_sorted(&sorted);
        let cut = (mean + params.sigma_mult * std).max(params.median_ratio * median);
        let mut removed = false;
        for (&i, &di) in alive.iter().zip(&d) {
            if di > cut {
                keep[i] = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
        alive.retain(|&i| keep[i]);
        stale = alive
            .iter()
            .copied()
            .filter(|&i| {
                stats[i]
                    .as_ref()
                    .is_some_and(|s| s.neighbors.iter().any(|&j| !keep[j]))
            })
            .collect();
    }
    Ok(cloud.derive(alive.iter().map(|&i| cloud.points[i]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::las_io::PointRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, spacing: f64, z: f64) -> Vec<PointRecord> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(PointRecord::new(i as f64 * spacing, j as f64 * spacing, z));
            }
        }
        pts
    }

    #[test]
    fn isolated_point_above_canopy_removed() {
        let mut pts = grid(30, 1.0, 0.0);
        pts.push(PointRecord::new(15.0, 15.0, 500.0));
        let out = remove_noise(&PointCloud::new(pts), &NoiseParams::default()).unwrap();
        assert_eq!(out.len(), 900);
        assert!(out.iter().all(|p| p.z < 1.0));
    }

    #[test]
    fn uniform_grid_untouched() {
        let pts = grid(25, 0.5, 10.0);
        let out = remove_noise(&PointCloud::new(pts), &NoiseParams::default()).unwrap();
        assert_eq!(out.len(), 625);
    }

    #[test]
    fn planted_isolates_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = grid(60, 1.0, 0.0);
        let n_iso = pts.len() / 100;
        for _ in 0..n_iso {
            let x = rng.random_range(0.0..59.0);
            let y = rng.random_range(0.0..59.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            pts.push(PointRecord::new(x, y, sign * 10.0).with_class(7));
        }
        let out = remove_noise(&PointCloud::new(pts), &NoiseParams::default()).unwrap();
        let survivors = out.iter().filter(|p| p.classification == 7).count();
        assert!(
            (n_iso - survivors) as f64 >= 0.95 * n_iso as f64,
            "{survivors} of {n_iso} isolates survived"
        );
        assert_eq!(out.iter().filter(|p| p.classification != 7).count(), 3600);
    }

    #[test]
    fn idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..2000)
            .map(|_| {
                let scale = if rng.random_bool(0.02) { 40.0 } else { 10.0 };
                PointRecord::new(
                    rng.random_range(0.0..scale),
                    rng.random_range(0.0..scale),
                    rng.random_range(0.0..scale),
                )
            })
            .collect();
        let once = remove_noise(&PointCloud::new(pts), &NoiseParams::default()).unwrap();
        let twice = remove_noise(&once, &NoiseParams::default()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn too_small_cloud() {
        let pts = grid(2, 1.0, 0.0);
        assert!(matches!(
            remove_noise(&PointCloud::new(pts), &NoiseParams::default()),
            Err(PreprocessError::TooFewPoints { have: 4, k: 8 })
        ));
    }
}
