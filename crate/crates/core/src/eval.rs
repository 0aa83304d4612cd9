//! Rotated 3D IoU, center error and One-Pass-Evaluation scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box7;

const AREA_FLOOR: f64 = 1e-9;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman clipping of `subject` by the convex CCW polygon `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let p_in = cross(a, b, p) >= 0.0;
            let q_in = cross(a, b, q) >= 0.0;
            if p_in {
                out.push(p);
                if !q_in {
                    out.push(line_intersection(p, q, a, b));
                }
            } else if q_in {
                out.push(line_intersection(p, q, a, b));
            }
        }
    }
    out
}

/// Bird's-eye-view overlap area of two yawed boxes.
pub fn bev_intersection(a: &Box7, b: &Box7) -> f64 {
    let area = polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()));
    if area < AREA_FLOOR { 0.0 } else { area }
}

pub fn iou3d(a: &Box7, b: &Box7) -> f64 {
    if a.to_array().map(f64::to_bits) == b.to_array().map(f64::to_bits) {
        return 1.0;
    }
    let bottom = (a.cz - 0.5 * a.h).max(b.cz - 0.5 * b.h);
    let top = (a.cz + 0.5 * a.h).min(b.cz + 0.5 * b.h);
    let dz = (top - bottom).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if !(union > 0.0) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn center_distance(a: &Box7, b: &Box7) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2) + (ca[2] - cb[2]).powi(2)).sqrt()
}

/// `count` uniform thresholds on `[0, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub count: usize,
    pub max: f64,
}

impl ThresholdGrid {
    pub const SUCCESS: Self = Self { count: 101, max: 1.0 };
    pub const PRECISION: Self = Self { count: 101, max: 2.0 };

    pub fn threshold(&self, i: usize) -> f64 {
        self.max * i as f64 / (self.count - 1) as f64
    }

    /// Normalized trapezoidal area under `curve` sampled on this grid.
    fn auc(&self, curve: impl Fn(f64) -> f64) -> f64 {
        let values: Vec<f64> = (0..self.count).map(|i| curve(self.threshold(i))).collect();
        let sum: f64 = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        sum / (self.count - 1) as f64
    }
}

/// 100 x AUC of `t -> fraction(iou > t)`. A frame with IoU 1 counts at
/// every threshold, so a perfect track scores exactly 100.
pub fn success_score_on(ious: &[f64], grid: &ThresholdGrid) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = ious.len() as f64;
    Ok(100.0
        * grid.auc(|t| ious.iter().filter(|&&v| v > t || v >= 1.0).count() as f64 / n))
}

pub fn success_score(ious: &[f64]) -> Result<f64> {
    success_score_on(ious, &ThresholdGrid::SUCCESS)
}

/// 100 x AUC of `t -> fraction(dist < t)`. A frame with zero error counts at
/// every threshold.
pub fn precision_score_on(dists: &[f64], grid: &ThresholdGrid) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = dists.len() as f64;
    Ok(100.0
        * grid.auc(|t| dists.iter().filter(|&&d| d < t || d == 0.0).count() as f64 / n))
}

pub fn precision_score(dists: &[f64]) -> Result<f64> {
    precision_score_on(dists, &ThresholdGrid::PRECISION)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub sequence_id: String,
    pub category: String,
    pub frame: usize,
    pub iou: f64,
    pub center_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub category: String,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeSummary {
    pub per_category: Vec<ReportRow>,
    pub mean_by_class: ReportRow,
    pub mean_by_frame: ReportRow,
}

impl OpeSummary {
    pub const MEAN_BY_CLASS: &'static str = "mean-by-class";
    pub const MEAN_BY_FRAME: &'static str = "mean-by-frame";

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = self.per_category.clone();
        rows.push(self.mean_by_class.clone());
        rows.push(self.mean_by_frame.clone());
        rows
    }

    pub fn category(&self, name: &str) -> Option<&ReportRow> {
        self.per_category.iter().find(|r| r.category == name)
    }
}

pub fn ope_report(results: &[FrameResult]) -> Result<OpeSummary> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<&str, Vec<&FrameResult>> = BTreeMap::new();
    for r in results {
        groups.entry(&r.category).or_default().push(r);
    }
    let per_category = groups
        .into_iter()
        .map(|(category, rs)| {
            let ious: Vec<f64> = rs.iter().map(|r| r.iou).collect();
            let dists: Vec<f64> = rs.iter().map(|r| r.center_dist).collect();
            Ok(ReportRow {
                category: category.to_string(),
                frames: rs.len(),
                success: success_score(&ious)?,
                precision: precision_score(&dists)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = per_category.len() as f64;
    let total: usize = per_category.iter().map(|r| r.frames).sum();
    let weighted = |f: fn(&ReportRow) -> f64| {
        per_category.iter().map(|r| r.frames as f64 * f(r)).sum::<f64>() / total as f64
    };
    let mean_by_class = ReportRow {
        category: OpeSummary::MEAN_BY_CLASS.into(),
        frames: total,
        success: per_category.iter().map(|r| r.success).sum::<f64>() / k,
        precision: per_category.iter().map(|r| r.precision).sum::<f64>() / k,
    };
    let mean_by_frame = ReportRow {
        category: OpeSummary::MEAN_BY_FRAME.into(),
        frames: total,
        success: weighted(|r| r.success),
        precision: weighted(|r| r.precision),
    };
    Ok(OpeSummary {
        per_category,
        mean_by_class,
        mean_by_frame,
    })
}

pub fn write_frame_results(path: impl AsRef<Path>, results: &[FrameResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads per-frame results from a CSV with at least the [`FrameResult`]
/// columns; other columns are ignored.
pub fn read_frame_results(path: impl AsRef<Path>) -> Result<Vec<FrameResult>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<FrameResult>, _>>()?;
    Ok(rows)
}

pub fn write_report_csv(path: impl AsRef<Path>, summary: &OpeSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in summary.rows() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON array of the same rows as the CSV report.
pub fn write_report_json(path: impl AsRef<Path>, summary: &OpeSummary) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(&summary.rows())?)?;
    Ok(())
}
