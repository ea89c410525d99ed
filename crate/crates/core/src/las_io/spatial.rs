use super::{GeometryError, PointCloud};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Column/row index of a square tile.
pub type TileIndex = (i64, i64);

/// Regular square tiling anchored at `origin`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub origin: [f64; 2],
    pub tile_size: f64,
}

impl Default for TileGrid {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0],
            tile_size: 125.0,
        }
    }
}

impl TileGrid {
    pub fn new(origin: [f64; 2], tile_size: f64) -> Result<Self, GeometryError> {
        if !(tile_size.is_finite() && tile_size > 0.0) {
            return Err(GeometryError::InvalidTileSize(tile_size));
        }
        Ok(Self { origin, tile_size })
    }

    pub fn index_of(&self, x: f64, y: f64) -> TileIndex {
        (
            ((x - self.origin[0]) / self.tile_size).floor() as i64,
            ((y - self.origin[1]) / self.tile_size).floor() as i64,
        )
    }
}

/// Partition `cloud` into tiles; tiles come back ordered by index.
pub fn tile(cloud: &PointCloud, grid: &TileGrid) -> Vec<(TileIndex, PointCloud)> {
    let mut tiles: BTreeMap<TileIndex, Vec<_>> = BTreeMap::new();
    for p in cloud.iter() {
        tiles.entry(grid.index_of(p.x, p.y)).or_default().push(*p);
    }
    tiles
        .into_iter()
        .map(|(idx, pts)| (idx, cloud.derive(pts)))
        .collect()
}

/// A simple planar polygon (implicitly closed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeometryError::DegeneratePolygon(format!(
                "{} distinct vertices, need at least 3",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::DegeneratePolygon("non-finite vertex".into()));
        }
        let poly = Self { vertices };
        if poly.signed_area().abs() < 1e-12 {
            return Err(GeometryError::DegeneratePolygon("zero area".into()));
        }
        if !poly.is_simple() {
            return Err(GeometryError::DegeneratePolygon(
                "edges self-intersect".into(),
            ));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle with lower-left corner `(x0, y0)`.
    pub fn rectangle(x0: f64, y0: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(vec![
            [x0, y0],
            [x0 + width, y0],
            [x0 + width, y0 + height],
            [x0, y0 + height],
        ])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let a = self.signed_area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_intersect(edges[i], edges[j]) {
                    return false;
                }
            }
        }
        true
    }

    /// Inclusive containment: points on an edge or vertex are inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if on_segment([x, y], a, b) {
                return true;
            }
            if (a[1] > y) != (b[1] > y) {
                let xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let tol = 1e-9 * len.max(1.0);
    cross(a, b, p).abs() <= tol * len.max(1e-300)
        && p[0] >= a[0].min(b[0]) - tol
        && p[0] <= a[0].max(b[0]) + tol
        && p[1] >= a[1].min(b[1]) - tol
        && p[1] <= a[1].max(b[1]) + tol
}

fn segments_intersect(s: ([f64; 2], [f64; 2]), t: ([f64; 2], [f64; 2])) -> bool {
    let d1 = cross(t.0, t.1, s.0);
    let d2 = cross(t.0, t.1, s.1);
    let d3 = cross(s.0, s.1, t.0);
    let d4 = cross(s.0, s.1, t.1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(s.0, t.0, t.1)
        || on_segment(s.1, t.0, t.1)
        || on_segment(t.0, s.0, s.1)
        || on_segment(t.1, s.0, s.1)
}

/// Keep the points inside `poly` (boundary inclusive).
pub fn clip_polygon(cloud: &PointCloud, poly: &Polygon) -> PointCloud {
    cloud.derive(
        cloud
            .iter()
            .filter(|p| poly.contains(p.x, p.y))
            .copied()
            .collect(),
    )
}
