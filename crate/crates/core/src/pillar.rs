//! Pillarization of a local-frame cloud and scatter into a BEV pseudo-image.
//!
//! Grid cells are addressed `(row, col)`: `col` indexes x, `row` indexes y,
//! so the pseudo-image is `H = ny` rows by `W = nx` columns. Pillars span the
//! full `z_range`; there is no vertical discretization.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, Region};

/// Number of augmented per-point channels:
/// `[x, y, z, r, x^m, y^m, z^m, x^c, y^c, z^c]`.
pub const PFE_CHANNELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub pillar_size: (f64, f64),
    pub max_points_per_pillar: usize,
    pub max_pillars: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::search_default()
    }
}

impl GridSpec {
    /// 6.4 m x 6.4 m search grid of 0.05 m pillars (128 x 128).
    pub fn search_default() -> Self {
        Self::from_region(&Region::search_default(), (0.05, 0.05))
    }

    /// 3.2 m x 3.2 m template grid (64 x 64).
    pub fn template_default() -> Self {
        Self::from_region(&Region::template_default(), (0.05, 0.05))
    }

    pub fn from_region(region: &Region, pillar_size: (f64, f64)) -> Self {
        Self {
            x_range: (region.min[0], region.max[0]),
            y_range: (region.min[1], region.max[1]),
            z_range: (region.min[2], region.max[2]),
            pillar_size,
            max_points_per_pillar: 32,
            max_pillars: 16384,
        }
    }

    pub fn region(&self) -> Region {
        Region {
            min: [self.x_range.0, self.y_range.0, self.z_range.0],
            max: [self.x_range.1, self.y_range.1, self.z_range.1],
        }
    }

    fn cells(extent: f64, size: f64) -> Option<usize> {
        let n = extent / size;
        let r = n.round();
        (r >= 1.0 && (n - r).abs() < 1e-6).then_some(r as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let (sx, sy) = self.pillar_size;
        if !(sx > 0.0 && sy > 0.0) {
            return Err(Error::InvalidGrid("pillar size must be positive".into()));
        }
        self.region()
            .validate()
            .map_err(|_| Error::InvalidGrid("ranges must have min < max".into()))?;
        if Self::cells(self.x_range.1 - self.x_range.0, sx).is_none()
            || Self::cells(self.y_range.1 - self.y_range.0, sy).is_none()
        {
            return Err(Error::InvalidGrid(
                "range extents must be integer multiples of the pillar size".into(),
            ));
        }
        if self.max_points_per_pillar == 0 || self.max_pillars == 0 {
            return Err(Error::InvalidGrid("capacities must be at least 1".into()));
        }
        Ok(())
    }

    /// Grid width (number of x cells).
    pub fn width(&self) -> usize {
        Self::cells(self.x_range.1 - self.x_range.0, self.pillar_size.0).unwrap_or(0)
    }

    /// Grid height (number of y cells).
    pub fn height(&self) -> usize {
        Self::cells(self.y_range.1 - self.y_range.0, self.pillar_size.1).unwrap_or(0)
    }

    /// Cell of a local point, or `None` when it falls outside the ranges.
    pub fn cell_of(&self, p: &Point) -> Option<(usize, usize)> {
        if !self.region().contains(p.xyz()) {
            return None;
        }
        let col = ((p.x - self.x_range.0) / self.pillar_size.0).floor();
        let row = ((p.y - self.y_range.0) / self.pillar_size.1).floor();
        // A point just below the upper bound can round onto the one-past-last index.
        Some(((row as usize).min(self.height() - 1), (col as usize).min(self.width() - 1)))
    }

    /// Center of a pillar: the `(x, y)` cell center and the middle of `z_range`.
    pub fn pillar_center(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.x_range.0 + (col as f64 + 0.5) * self.pillar_size.0,
            self.y_range.0 + (row as f64 + 0.5) * self.pillar_size.1,
            0.5 * (self.z_range.0 + self.z_range.1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pillar {
    pub row: usize,
    pub col: usize,
    /// Retained raw points, at most `max_points_per_pillar`, in input order.
    pub points: Vec<Point>,
}

/// Pillar buckets plus a dense per-point feature tensor.
///
/// `features` is `pillars.len() x max_points_per_pillar x width`, row-major,
/// with padded rows all zero and `mask` false. `width` is 0 until
/// [`augment_points`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarSet {
    pub grid: GridSpec,
    pub pillars: Vec<Pillar>,
    pub width: usize,
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PillarSet {
    pub fn slots(&self) -> usize {
        self.grid.max_points_per_pillar
    }

    /// Feature row of point slot `slot` in pillar `pillar`.
    pub fn row(&self, pillar: usize, slot: usize) -> &[f64] {
        let start = (pillar * self.slots() + slot) * self.width;
        &self.features[start..start + self.width]
    }

    pub fn is_valid(&self, pillar: usize, slot: usize) -> bool {
        self.mask[pillar * self.slots() + slot]
    }

    /// Feature rows of all valid points, pillar by pillar.
    pub fn valid_rows(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for p in 0..self.pillars.len() {
            for s in 0..self.slots() {
                if self.is_valid(p, s) {
                    out.push(self.row(p, s).to_vec());
                }
            }
        }
        out
    }

    pub fn point_count(&self) -> usize {
        self.pillars.iter().map(|p| p.points.len()).sum()
    }
}

/// Buckets `cloud` (already in the crop's local frame) into pillars.
///
/// Points outside the grid ranges are dropped. A pillar keeps its first
/// `max_points_per_pillar` points in input order. When more than
/// `max_pillars` cells are occupied, pillars are dropped in order of
/// ascending point count, ties broken by ascending `(row, col)`. Surviving
/// pillars are ordered by `(row, col)`.
pub fn pillarize(cloud: &PointCloud, grid: &GridSpec) -> Result<PillarSet> {
    grid.validate()?;
    let mut buckets: BTreeMap<(usize, usize), (usize, Vec<Point>)> = BTreeMap::new();
    for p in &cloud.points {
        let Some(cell) = grid.cell_of(p) else { continue };
        let entry = buckets.entry(cell).or_default();
        entry.0 += 1;
        if entry.1.len() < grid.max_points_per_pillar {
            entry.1.push(*p);
        }
    }
    if buckets.len() > grid.max_pillars {
        let mut order: Vec<((usize, usize), usize)> =
            buckets.iter().map(|(k, v)| (*k, v.0)).collect();
        order.sort_by_key(|&(cell, count)| (count, cell));
        let excess = buckets.len() - grid.max_pillars;
        for (cell, _) in order.into_iter().take(excess) {
            buckets.remove(&cell);
        }
    }
    let pillars: Vec<Pillar> = buckets
        .into_iter()
        .map(|((row, col), (_, points))| Pillar { row, col, points })
        .collect();
    let slots = grid.max_points_per_pillar;
    let mut mask = vec![false; pillars.len() * slots];
    for (i, p) in pillars.iter().enumerate() {
        mask[i * slots..i * slots + p.points.len()].fill(true);
    }
    Ok(PillarSet {
        grid: *grid,
        pillars,
        width: 0,
        features: Vec::new(),
        mask,
    })
}

/// Fills the 10-channel augmented features:
/// channels 0-3 raw `(x, y, z, r)`, 4-6 offset from the mean of the pillar's
/// points, 7-9 offset from the pillar center.
pub fn augment_points(mut set: PillarSet) -> PillarSet {
    let slots = set.slots();
    let mut features = vec![0.0; set.pillars.len() * slots * PFE_CHANNELS];
    for (i, pillar) in set.pillars.iter().enumerate() {
        let n = pillar.points.len() as f64;
        let mut mean = [0.0; 3];
        for p in &pillar.points {
            mean[0] += p.x;
            mean[1] += p.y;
            mean[2] += p.z;
        }
        let mean = mean.map(|m| m / n);
        let center = set.grid.pillar_center(pillar.row, pillar.col);
        for (s, p) in pillar.points.iter().enumerate() {
            let start = (i * slots + s) * PFE_CHANNELS;
            features[start..start + PFE_CHANNELS].copy_from_slice(&[
                p.x,
                p.y,
                p.z,
                p.r,
                p.x - mean[0],
                p.y - mean[1],
                p.z - mean[2],
                p.x - center[0],
                p.y - center[1],
                p.z - center[2],
            ]);
        }
    }
    set.width = PFE_CHANNELS;
    set.features = features;
    set
}

/// Per-pillar channel-wise max over valid points; the vector that gets scattered.
pub fn max_pool(set: &PillarSet) -> Vec<((usize, usize), Vec<f32>)> {
    (0..set.pillars.len())
        .map(|i| {
            let mut v = vec![f64::NEG_INFINITY; set.width];
            for s in 0..set.slots() {
                if set.is_valid(i, s) {
                    for (acc, x) in v.iter_mut().zip(set.row(i, s)) {
                        *acc = acc.max(*x);
                    }
                }
            }
            let v = v
                .into_iter()
                .map(|x| if x.is_finite() { x as f32 } else { 0.0 })
                .collect();
            ((set.pillars[i].row, set.pillars[i].col), v)
        })
        .collect()
}

/// Dense `C x H x W` map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl PseudoImage {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, row: usize, col: usize) -> &mut f32 {
        &mut self.data[(c * self.height + row) * self.width + col]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Debug dump: raw little-endian `f32` data at `path` plus a JSON header
    /// next to it (`<path>.json`).
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path)?;
        for v in &self.data {
            f.write_all(&v.to_le_bytes())?;
        }
        let header = serde_json::json!({
            "dtype": "float32",
            "byte_order": "little",
            "layout": "CHW",
            "shape": [self.channels, self.height, self.width],
        });
        let mut header_path = path.as_os_str().to_owned();
        header_path.push(".json");
        fs::write(header_path, serde_json::to_vec_pretty(&header)?)?;
        Ok(())
    }
}

/// Places each pillar vector at its cell; every other cell stays zero.
pub fn scatter(vectors: &[((usize, usize), Vec<f32>)], channels: usize, grid: &GridSpec) -> Result<PseudoImage> {
    let (height, width) = (grid.height(), grid.width());
    let mut img = PseudoImage::zeros(channels, height, width);
    let mut seen = vec![false; height * width];
    for ((row, col), v) in vectors {
        let (row, col) = (*row, *col);
        if row >= height || col >= width {
            return Err(Error::IndexOutOfGrid {
                row,
                col,
                height,
                width,
            });
        }
        if v.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "pillar vector has {} channels, expected {channels}",
                v.len()
            )));
        }
        let cell = row * width + col;
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::DuplicateIndex { row, col });
        }
        for (c, x) in v.iter().enumerate() {
            *img.at_mut(c, row, col) = *x;
        }
    }
    Ok(img)
}
