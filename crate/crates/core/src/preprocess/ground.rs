//! Progressive morphological ground filter and the raster ground model.

use super::PreprocessError;
use crate::las_io::{PointCloud, CLASS_GROUND, CLASS_UNCLASSIFIED};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

/// Progressive morphological filter settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundParams {
    /// Raster cell size (m).
    pub cell: f64,
    /// Largest opening window (m).
    pub max_window: f64,
    /// Terrain slope tolerance (rise over run).
    pub slope: f64,
    /// Elevation threshold at the smallest window (m).
    pub initial_threshold: f64,
    /// Cap on the elevation threshold (m).
    pub max_threshold: f64,
    /// Points this close above the filtered surface are ground (m).
    pub ground_tolerance: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            cell: 1.0,
            max_window: 20.0,
            slope: 0.3,
            initial_threshold: 0.3,
            max_threshold: 2.5,
            ground_tolerance: 0.3,
        }
    }
}

impl GroundParams {
    fn validate(&self) -> Result<(), PreprocessError> {
        let ok = self.cell > 0.0
            && self.max_window >= self.cell
            && self.slope >= 0.0
            && self.initial_threshold >= 0.0
            && self.max_threshold >= self.initial_threshold
            && self.ground_tolerance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(PreprocessError::InvalidParameter(format!("{self:?}")))
        }
    }

    /// Odd window widths in cells: 3, 5, 7, ... up to `max_window`.
    fn windows(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut w = 3usize;
        while w as f64 * self.cell <= self.max_window + 1e-9 {
            out.push(w);
            w += 2;
        }
        out
    }

    fn threshold(&self, window: usize) -> f64 {
        (self.initial_threshold + self.slope * (window - 1) as f64 * self.cell)
            .min(self.max_threshold)
    }
}

/// Ground elevations on a regular raster, sampled at cell centers and
/// interpolated bilinearly.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundModel {
    origin: [f64; 2],
    cell: f64,
    ncols: usize,
    nrows: usize,
    /// Row-major, row 0 at `origin[1]` (southernmost).
    values: Vec<f64>,
}

impl GroundModel {
    pub fn new(
        origin: [f64; 2],
        cell: f64,
        ncols: usize,
        nrows: usize,
        values: Vec<f64>,
    ) -> Result<Self, PreprocessError> {
        if !(cell > 0.0) || ncols == 0 || nrows == 0 {
            return Err(PreprocessError::MalformedGrid(format!(
                "cell {cell}, {ncols} x {nrows}"
            )));
        }
        if values.len() != ncols * nrows {
            return Err(PreprocessError::MalformedGrid(format!(
                "{} values for a {ncols} x {nrows} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::MalformedGrid("non-finite cell".into()));
        }
        Ok(Self {
            origin,
            cell,
            ncols,
            nrows,
            values,
        })
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ncols, self.nrows)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let eps = 1e-9 * self.cell;
        x >= self.origin[0] - eps
            && y >= self.origin[1] - eps
            && x <= self.origin[0] + self.ncols as f64 * self.cell + eps
            && y <= self.origin[1] + self.nrows as f64 * self.cell + eps
    }

    /// Bilinear interpolation between cell centers, extrapolating linearly
    /// over the outer half cell. `None` outside the raster extent.
    pub fn elevation_at(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let (c0, tx) = axis_stencil((x - self.origin[0]) / self.cell - 0.5, self.ncols);
        let (r0, ty) = axis_stencil((y - self.origin[1]) / self.cell - 0.5, self.nrows);
        let c1 = (c0 + 1).min(self.ncols - 1);
        let r1 = (r0 + 1).min(self.nrows - 1);
        let v00 = self.value(c0, r0);
        let v10 = self.value(c1, r0);
        let v01 = self.value(c0, r1);
        let v11 = self.value(c1, r1);
        let bottom = v00 + tx * (v10 - v00);
        let top = v01 + tx * (v11 - v01);
        Some(bottom + ty * (top - bottom))
    }

    /// Plain-text grid: `ncols`, `nrows`, `xorigin`, `yorigin`, `cellsize`
    /// header lines, then one line of values per row starting at the
    /// southern edge.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "ncols {}", self.ncols);
        let _ = writeln!(s, "nrows {}", self.nrows);
        let _ = writeln!(s, "xorigin {}", self.origin[0]);
        let _ = writeln!(s, "yorigin {}", self.origin[1]);
        let _ = writeln!(s, "cellsize {}", self.cell);
        for row in self.values.chunks(self.ncols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        out.write_all(s.as_bytes())
    }

    pub fn read_text<R: Read>(input: R) -> Result<Self, PreprocessError> {
        let mut lines = BufReader::new(input).lines();
        let mut header = |key: &str| -> Result<String, PreprocessError> {
            let line = lines
                .next()
                .ok_or_else(|| PreprocessError::MalformedGrid(format!("missing {key}")))??;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(k), Some(v)) if k.eq_ignore_ascii_case(key) => Ok(v.to_string()),
                _ => Err(PreprocessError::MalformedGrid(format!(
                    "expected `{key} <value>`, got {line:?}"
                ))),
            }
        };
        let parse_err = |what: &str| PreprocessError::MalformedGrid(format!("bad {what}"));
        let ncols: usize = header("ncols")?.parse().map_err(|_| parse_err("ncols"))?;
        let nrows: usize = header("nrows")?.parse().map_err(|_| parse_err("nrows"))?;
        let x0: f64 = header("xorigin")?
            .parse()
            .map_err(|_| parse_err("xorigin"))?;
        let y0: f64 = header("yorigin")?
            .parse()
            .map_err(|_| parse_err("yorigin"))?;
        let cell: f64 = header("cellsize")?
            .parse()
            .map_err(|_| parse_err("cellsize"))?;
        let mut values = Vec::with_capacity(ncols * nrows);
        for line in lines {
            for tok in line?.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| parse_err("cell value"))?);
            }
        }
        Self::new([x0, y0], cell, ncols, nrows, values)
    }
}

fn axis_stencil(f: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let i0 = (f.floor().max(0.0) as usize).min(n - 2);
    (i0, f - i0 as f64)
}

/// Raster of per-cell values (`None` when the cell is empty).
struct Raster {
    ncols: usize,
    nrows: usize,
    cells: Vec<Option<f64>>,
}

impl Raster {
    /// Fill empty cells from the nearest filled cell (breadth-first over
    /// 4-neighbors). Returns `None` if every cell is empty.
    fn filled(&self) -> Option<Vec<f64>> {
        let mut out: Vec<Option<f64>> = self.cells.clone();
        let mut queue: VecDeque<usize> = (0..out.len()).filter(|&i| out[i].is_some()).collect();
        if queue.is_empty() {
            return None;
        }
        while let Some(i) = queue.pop_front() {
            let v = out[i];
            let (c, r) = (i % self.ncols, i / self.ncols);
            let mut visit = |j: usize| {
                if out[j].is_none() {
                    out[j] = v;
                    queue.push_back(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < self.ncols {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - self.ncols);
            }
            if r + 1 < self.nrows {
                visit(i + self.ncols);
            }
        }
        Some(out.into_iter().map(|v| v.unwrap()).collect())
    }
}

fn filter_1d(
    src: &[f64],
    ncols: usize,
    nrows: usize,
    half: usize,
    horizontal: bool,
    pick: fn(f64, f64) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..nrows {
        for c in 0..ncols {
            let (pos, len) = if horizontal { (c, ncols) } else { (r, nrows) };
            let lo = pos.saturating_sub(half);
            let hi = (pos + half).min(len - 1);
            let mut acc = src[r * ncols + c];
            for k in lo..=hi {
                let idx = if horizontal {
                    r * ncols + k
                } else {
                    k * ncols + c
                };
                acc = pick(acc, src[idx]);
            }
            out[r * ncols + c] = acc;
        }
    }
    out
}

fn morph(
    src: &[f64],
    ncols: usize,
    nrows: usize,
    window: usize,
    pick: fn(f64, f64) -> f64,
) -> Vec<f64> {
    let half = window / 2;
    let tmp = filter_1d(src, ncols, nrows, half, true, pick);
    filter_1d(&tmp, ncols, nrows, half, false, pick)
}

fn opening(src: &[f64], ncols: usize, nrows: usize, window: usize) -> Vec<f64> {
    let eroded = morph(src, ncols, nrows, window, f64::min);
    morph(&eroded, ncols, nrows, window, f64::max)
}

/// Label ground returns (class 2) with a progressive morphological filter and
/// build the ground model from them. All other returns become class 1.
pub fn classify_ground(
    cloud: &PointCloud,
    params: &GroundParams,
) -> Result<(PointCloud, GroundModel), PreprocessError> {
    params.validate()?;
    let bounds = cloud.bounds().ok_or(PreprocessError::EmptyCloud)?;
    let cell = params.cell;
    let origin = [bounds.min[0], bounds.min[1]];
    let ncols = ((bounds.width() / cell).floor() as usize + 1).max(1);
    let nrows = ((bounds.height() / cell).floor() as usize + 1).max(1);
    let cell_of = |x: f64, y: f64| -> usize {
        let c = (((x - origin[0]) / cell).floor() as usize).min(ncols - 1);
        let r = (((y - origin[1]) / cell).floor() as usize).min(nrows - 1);
        r * ncols + c
    };

    let mut minima = Raster {
        ncols,
        nrows,
        cells: vec![None; ncols * nrows],
    };
    for p in cloud.iter() {
        let slot = &mut minima.cells[cell_of(p.x, p.y)];
        *slot = Some(slot.map_or(p.z, |m: f64| m.min(p.z)));
    }
    let mut surface = minima.filled().ok_or(PreprocessError::EmptyCloud)?;
    let mut off_ground = vec![false; surface.len()];
    for w in params.windows() {
        let opened = opening(&surface, ncols, nrows, w);
        let dh = params.threshold(w);
        for (i, flag) in off_ground.iter_mut().enumerate() {
            if surface[i] - opened[i] > dh {
                *flag = true;
            }
        }
        surface = opened;
    }

    let candidates = Raster {
        ncols,
        nrows,
        cells: minima
            .cells
            .iter()
            .zip(&off_ground)
            .map(|(m, &off)| if off { None } else { *m })
            .collect(),
    };
    let provisional_values = candidates
        .filled()
        .ok_or(PreprocessError::NoGroundCandidates)?;
    let provisional = GroundModel::new(origin, cell, ncols, nrows, provisional_values)?;

    let mut points = cloud.points.clone();
    let mut sums = vec![(0.0f64, 0usize); ncols * nrows];
    for p in points.iter_mut() {
        let g = provisional
            .elevation_at(p.x, p.y)
            .unwrap_or(f64::NEG_INFINITY);
        if p.z - g <= params.ground_tolerance {
            p.classification = CLASS_GROUND;
            let s = &mut sums[cell_of(p.x, p.y)];
            s.0 += p.z;
            s.1 += 1;
        } else {
            p.classification = CLASS_UNCLASSIFIED;
        }
    }
    let ground_cells = Raster {
        ncols,
        nrows,
        cells: sums
            .iter()
            .map(|&(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
    };
    let values = ground_cells
        .filled()
        .ok_or(PreprocessError::NoGroundCandidates)?;
    let model = GroundModel::new(origin, cell, ncols, nrows, values)?;
    Ok((cloud.derive(points), model))
}
