//! Offline conversion of KITTI tracking labels (camera frame) into LiDAR-frame
//! boxes for the sequence manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Box7;

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn transpose(m: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [m[0][i], m[1][i], m[2][i]])
}

fn invert(m: &Mat3) -> Option<Mat3> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
        [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
        [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
    ];
    Some(adj.map(|row| row.map(|v| v / det)))
}

/// The two calibration matrices needed to go from rectified camera to LiDAR.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub r_rect: Mat3,
    pub velo_to_cam_rot: Mat3,
    pub velo_to_cam_trans: [f64; 3],
}

impl Calibration {
    /// Accepts both the tracking (`R_rect`, `Tr_velo_cam`) and the detection
    /// (`R0_rect`, `Tr_velo_to_cam`) key spellings, with or without a colon.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let vals: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let vals = vals.map_err(|e| Error::Config(format!("calib key {key}: {e}")))?;
            entries.insert(key.trim_end_matches(':').to_string(), vals);
        }
        let find = |names: &[&str], n: usize| -> Result<Vec<f64>> {
            names
                .iter()
                .find_map(|k| entries.get(*k))
                .filter(|v| v.len() == n)
                .cloned()
                .ok_or_else(|| Error::Config(format!("calib is missing {names:?} with {n} values")))
        };
        let r = find(&["R_rect", "R0_rect"], 9)?;
        let tr = find(&["Tr_velo_cam", "Tr_velo_to_cam"], 12)?;
        Ok(Self {
            r_rect: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            velo_to_cam_rot: [[tr[0], tr[1], tr[2]], [tr[4], tr[5], tr[6]], [tr[8], tr[9], tr[10]]],
            velo_to_cam_trans: [tr[3], tr[7], tr[11]],
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn rect_to_velo_dir(&self, d: [f64; 3]) -> Result<[f64; 3]> {
        let r_inv = invert(&self.r_rect).ok_or_else(|| Error::Config("singular R_rect".into()))?;
        let unrect = mat_vec(&r_inv, d);
        Ok(mat_vec(&transpose(&self.velo_to_cam_rot), unrect))
    }

    /// Rectified camera point to LiDAR point.
    pub fn rect_to_velo(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let r_inv = invert(&self.r_rect).ok_or_else(|| Error::Config("singular R_rect".into()))?;
        let c = mat_vec(&r_inv, p);
        let t = self.velo_to_cam_trans;
        Ok(mat_vec(
            &transpose(&self.velo_to_cam_rot),
            [c[0] - t[0], c[1] - t[1], c[2] - t[2]],
        ))
    }

    /// Camera-frame KITTI box (bottom-center location, `rotation_y`) to a LiDAR [`Box7`].
    pub fn camera_box_to_lidar(&self, h: f64, w: f64, l: f64, loc: [f64; 3], rotation_y: f64) -> Result<Box7> {
        // camera y points down; the label location is the bottom face center
        let center = self.rect_to_velo([loc[0], loc[1] - 0.5 * h, loc[2]])?;
        let heading = self.rect_to_velo_dir([rotation_y.cos(), 0.0, -rotation_y.sin()])?;
        Box7::new(center[0], center[1], center[2], h, w, l, heading[1].atan2(heading[0]))
    }
}

/// One object row of a KITTI tracking label file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingLabel {
    pub frame: usize,
    pub track_id: i64,
    pub category: String,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub location: [f64; 3],
    pub rotation_y: f64,
}

pub fn parse_tracking_labels(text: &str) -> Result<Vec<TrackingLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::MalformedLine { line: i + 1, reason };
        if f.len() < 17 {
            return Err(bad(format!("expected 17 fields, got {}", f.len())));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|e| bad(format!("field {j}: {e}")));
        out.push(TrackingLabel {
            frame: f[0].parse().map_err(|e| bad(format!("frame: {e}")))?,
            track_id: f[1].parse().map_err(|e| bad(format!("track id: {e}")))?,
            category: f[2].to_string(),
            h: num(10)?,
            w: num(11)?,
            l: num(12)?,
            location: [num(13)?, num(14)?, num(15)?],
            rotation_y: num(16)?,
        });
    }
    Ok(out)
}

/// Boxes of one track in LiDAR coordinates, ordered by frame.
pub fn track_boxes(labels: &[TrackingLabel], track_id: i64, calib: &Calibration) -> Result<Vec<(usize, String, Box7)>> {
    let mut rows: Vec<_> = labels
        .iter()
        .filter(|l| l.track_id == track_id)
        .map(|l| {
            calib
                .camera_box_to_lidar(l.h, l.w, l.l, l.location, l.rotation_y)
                .map(|b| (l.frame, l.category.clone(), b))
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    Ok(rows)
}
