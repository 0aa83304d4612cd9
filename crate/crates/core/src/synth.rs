//! Seeded synthetic clouds and sequences with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CloudSource, Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::{Box7, Point, PointCloud, normalize_angle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub object_points: usize,
    /// `(h, w, l)` in meters.
    pub size: [f64; 3],
    /// Frame-0 `(cx, cy, cz, theta)`.
    pub start: [f64; 4],
    /// Per-frame `(dx, dy, dtheta)` in the LiDAR frame.
    pub motion: [f64; 3],
    pub clutter_points: usize,
    pub noise_sigma: f64,
    pub frames: usize,
    pub seed: u64,
    pub category: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            object_points: 400,
            size: [1.5, 1.6, 3.9],
            start: [10.0, 2.0, -0.9, 0.0],
            motion: [0.2, 0.0, 0.0],
            clutter_points: 0,
            noise_sigma: 0.0,
            frames: 10,
            seed: 0,
            category: "Car".into(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.object_points == 0 {
            return Err(Error::InvalidParams("object needs at least one point".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParams(format!("noise sigma {} < 0", self.noise_sigma)));
        }
        if self.frames == 0 {
            return Err(Error::InvalidParams("need at least one frame".into()));
        }
        if self.size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParams("object size must be positive".into()));
        }
        Ok(())
    }

    /// Ground-truth box at frame `t`.
    pub fn box_at(&self, t: usize) -> Result<Box7> {
        let [h, w, l] = self.size;
        let [cx, cy, cz, theta] = self.start;
        let tf = t as f64;
        Box7::new(
            cx + tf * self.motion[0],
            cy + tf * self.motion[1],
            cz,
            h,
            w,
            l,
            normalize_angle(theta + tf * self.motion[2]),
        )
    }
}

/// Object points in the box's local frame, uniform in its volume, with random
/// reflectance. Frame `t` places exactly these points rigidly in `box_at(t)`.
pub fn object_points_local(p: &SynthParams, rng: &mut impl Rng) -> Vec<Point> {
    let [h, w, l] = p.size;
    (0..p.object_points)
        .map(|_| {
            Point::new(
                rng.random_range(-0.5..0.5) * l,
                rng.random_range(-0.5..0.5) * w,
                rng.random_range(-0.5..0.5) * h,
                rng.random_range(0.0..1.0),
            )
        })
        .collect()
}

pub fn synth_sequence(p: &SynthParams) -> Result<Sequence> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let local = object_points_local(p, &mut rng);
    let noise = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let jitter =|rng: &mut ChaCha8Rng| -> [f64; 3] {
        if p.noise_sigma == 0.0 {
            [0.0; 3]
        } else {
            [noise.sample(rng), noise.sample(rng), noise.sample(rng)]
        }
    };
    let mut frames = Vec::with_capacity(p.frames);
    for t in 0..p.frames {
        let gt = p.box_at(t)?;
        let mut points = Vec::with_capacity(p.object_points + p.clutter_points);
        for q in &local {
            let g = gt.to_global(q.xyz());
            let n = jitter(&mut rng);
            points.push(Point::new(g[0] + n[0], g[1] + n[1], g[2] + n[2], q.r));
        }
        let mut placed = 0;
        while placed < p.clutter_points {
            let q = [
                rng.random_range(-3.2..3.2),
                rng.random_range(-3.2..3.2),
                rng.random_range(-3.0..1.0),
            ];
            let g = gt.to_global(q);
            if gt.contains(g, 1.5) {
                continue;
            }
            let n = jitter(&mut rng);
            let r = rng.random_range(0.0..1.0);
            points.push(Point::new(g[0] + n[0], g[1] + n[1], g[2] + n[2], r));
            placed += 1;
        }
        frames.push(Frame {
            cloud: CloudSource::Memory(PointCloud::new(points, t as i64)),
            gt_box: gt,
        });
    }
    Sequence::new(format!("synth-{}", p.seed), p.category.clone(), frames)
}

/// A car-shaped surface cloud centered at the origin, heading +x, ground at
/// z = -1.7: a 3.9 x 1.6 x 0.9 m body with a 2.0 x 1.4 x 0.6 m cabin on top,
/// sampled on the faces a roof-mounted sensor would see.
pub fn car_like_cloud(points: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground = -1.7;
    // (center x, length, width, bottom z, height)
    let parts = [(0.0, 3.9, 1.6, ground + 0.2, 0.9), (-0.3, 2.0, 1.4, ground + 1.1, 0.6)];
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let (cx, l, w, z0, h) = parts[usize::from(i % 3 == 2)];
        let (hl, hw) = (0.5 * l, 0.5 * w);
        let face = rng.random_range(0..5);
        let (x, y, z) = match face {
            0 => (rng.random_range(-hl..hl), rng.random_range(-hw..hw), z0 + h),
            1 => (rng.random_range(-hl..hl), hw, rng.random_range(z0..z0 + h)),
            2 => (rng.random_range(-hl..hl), -hw, rng.random_range(z0..z0 + h)),
            3 => (hl, rng.random_range(-hw..hw), rng.random_range(z0..z0 + h)),
            _ => (-hl, rng.random_range(-hw..hw), rng.random_range(z0..z0 + h)),
        };
        out.push(Point::new(cx + x, y, z, rng.random_range(0.0..1.0)));
    }
    PointCloud::new(out, 0)
}
