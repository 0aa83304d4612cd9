//! Point clouds, oriented boxes and the rigid/scale transforms applied to them.
//!
//! Frames: every box is expressed in the LiDAR frame. A box's *local frame*
//! has its origin at the box center, x along the heading, y to the left and
//! z up. Length `l` runs along local x, width `w` along local y, height `h`
//! along z.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = theta - 2.0 * PI * ((theta - PI) / (2.0 * PI)).ceil();
    // Rounding can land exactly on -π.
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Rotates `(x, y)` by `yaw` about the origin.
#[inline]
pub fn rotate_xy(x: f64, y: f64, yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// One LiDAR return. Reflectance is normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, r: f64) -> Self {
        Self { x, y, z, r }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.r.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: i64,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame_id: i64) -> Self {
        Self { points, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean xyz, or `None` for an empty cloud.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let mut acc = [0.0; 3];
        for p in &self.points {
            acc[0] += p.x;
            acc[1] += p.y;
            acc[2] += p.z;
        }
        Some([acc[0] / n, acc[1] / n, acc[2] / n])
    }
}

/// 7-DOF oriented box `[cx, cy, cz, h, w, l, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
}

impl Box7 {
    /// Validates sizes and normalizes the heading.
    pub fn new(cx: f64, cy: f64, cz: f64, h: f64, w: f64, l: f64, theta: f64) -> Result<Self> {
        let vals = [cx, cy, cz, h, w, l, theta];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {vals:?}")));
        }
        if h <= 0.0 || w <= 0.0 || l <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "sizes must be positive, got h={h} w={w} l={l}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            cz,
            h,
            w,
            l,
            theta: normalize_angle(theta),
        })
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.h, self.w, self.l, self.theta]
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.h > 0.0
            && self.w > 0.0
            && self.l > 0.0
            && self.theta > -PI
            && self.theta <= PI
    }

    /// Expresses a global point in this box's local frame.
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (x, y) = rotate_xy(p[0] - self.cx, p[1] - self.cy, -self.theta);
        [x, y, p[2] - self.cz]
    }

    /// Maps a point from this box's local frame back to the global frame.
    pub fn to_global(&self, p: [f64; 3]) -> [f64; 3] {
        let (x, y) = rotate_xy(p[0], p[1], self.theta);
        [self.cx + x, self.cy + y, self.cz + p[2]]
    }

    /// True if `p` (global) lies inside the box scaled by `inflate` about its center.
    pub fn contains(&self, p: [f64; 3], inflate: f64) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= 0.5 * self.l * inflate
            && q[1].abs() <= 0.5 * self.w * inflate
            && q[2].abs() <= 0.5 * self.h * inflate
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        let local = [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]];
        local.map(|[x, y]| {
            let (gx, gy) = rotate_xy(x, y, self.theta);
            [self.cx + gx, self.cy + gy]
        })
    }
}

/// The 8 box corners: bottom face counter-clockwise (seen from above) starting at
/// local `(+l/2, -w/2)`, then the top face in the same order.
pub fn box_corners(b: &Box7) -> [[f64; 3]; 8] {
    let bev = b.bev_corners();
    let (z0, z1) = (b.cz - 0.5 * b.h, b.cz + 0.5 * b.h);
    let mut out = [[0.0; 3]; 8];
    for (i, [x, y]) in bev.iter().enumerate() {
        out[i] = [*x, *y, z0];
        out[i + 4] = [*x, *y, z1];
    }
    out
}

/// `p -> pivot + scale * R(yaw) * (p - pivot) + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidScaleTransform {
    pub yaw: f64,
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Default for RigidScaleTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidScaleTransform {
    pub fn new(yaw: f64, translation: [f64; 3], scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidParams(format!(
                "transform needs finite yaw and scale > 0, got yaw={yaw} scale={scale}"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite translation".into()));
        }
        Ok(Self {
            yaw,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            yaw: 0.0,
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.yaw == 0.0 && self.scale == 1.0 && self.translation == [0.0; 3]
    }

    /// The transform undoing `self` about the same pivot.
    pub fn inverse(&self) -> Self {
        let s = 1.0 / self.scale;
        let (tx, ty) = rotate_xy(self.translation[0], self.translation[1], -self.yaw);
        Self {
            yaw: -self.yaw,
            translation: [-s * tx, -s * ty, -s * self.translation[2]],
            scale: s,
        }
    }

    pub fn apply(&self, p: [f64; 3], pivot: [f64; 3]) -> [f64; 3] {
        let (dx, dy) = rotate_xy(p[0] - pivot[0], p[1] - pivot[1], self.yaw);
        [
            pivot[0] + self.scale * dx + self.translation[0],
            pivot[1] + self.scale * dy + self.translation[1],
            pivot[2] + self.scale * (p[2] - pivot[2]) + self.translation[2],
        ]
    }
}

/// Applies `t` to every point about `pivot` (the cloud centroid when `None`).
/// Reflectance is left untouched.
pub fn transform_cloud(
    cloud: &PointCloud,
    t: &RigidScaleTransform,
    pivot: Option<[f64; 3]>,
) -> PointCloud {
    if t.is_identity() {
        return cloud.clone();
    }
    let Some(pivot) = pivot.or_else(|| cloud.centroid()) else {
        return cloud.clone();
    };
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let [x, y, z] = t.apply(p.xyz(), pivot);
            Point::new(x, y, z, p.r)
        })
        .collect();
    PointCloud::new(points, cloud.frame_id)
}

/// Axis-aligned region `[min, max)` on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let r = Self { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self> {
        Self::new([a[0], a[1], a[2]], [a[3], a[4], a[5]])
    }

    /// The car search area `[-3.2, -3.2, -3, 3.2, 3.2, 1]` m.
    pub fn search_default() -> Self {
        Self {
            min: [-3.2, -3.2, -3.0],
            max: [3.2, 3.2, 1.0],
        }
    }

    /// Half the search extent in x/y: `[-1.6, -1.6, -3, 1.6, 1.6, 1]` m.
    pub fn template_default() -> Self {
        Self {
            min: [-1.6, -1.6, -3.0],
            max: [1.6, 1.6, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|i| {
            self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i]
        });
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateRegion)
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] < self.max[i])
    }
}

/// Keeps the points that fall inside `region` once expressed in the local frame
/// of `center` (translated to its center, rotated by `-theta`). With no center
/// the cloud is already local. Output coordinates are local.
pub fn crop_to_region(
    cloud: &PointCloud,
    region: &Region,
    center: Option<&Box7>,
) -> Result<PointCloud> {
    region.validate()?;
    let points = cloud
        .points
        .iter()
        .filter_map(|p| {
            let q = match center {
                Some(b) => b.to_local(p.xyz()),
                None => p.xyz(),
            };
            region
                .contains(q)
                .then(|| Point::new(q[0], q[1], q[2], p.r))
        })
        .collect();
    Ok(PointCloud::new(points, cloud.frame_id))
}
