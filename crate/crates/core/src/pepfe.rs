//! Pyramid encoding of pillar point features.
//!
//! Each coordinate channel `v` is decomposed greedily over a geometric ladder
//! of scales `s_k = s_1 * rho^(k-1)`:
//!
//! ```text
//! r_0 = v
//! d_k = trunc(r_{k-1} / s_k)
//! r_k = r_{k-1} - d_k * s_k
//! ```
//!
//! The digits `d_1..d_L` and the residual `r_L` replace the channel. Because
//! truncation rounds toward zero the code of `-v` is exactly the negated code
//! of `v`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidScaleTransform, transform_cloud};
use crate::pillar::{GridSpec, PFE_CHANNELS, PillarSet, augment_points, pillarize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSpec {
    pub levels: usize,
    /// Coarsest scale in meters.
    pub base_scale: f64,
    /// Ratio between consecutive scales, in `(0, 1)`.
    pub ratio: f64,
    pub normalize: bool,
}

impl Default for PyramidSpec {
    /// Three levels at 0.8 m, 0.1 m and 0.0125 m.
    fn default() -> Self {
        Self {
            levels: 3,
            base_scale: 0.8,
            ratio: 0.125,
            normalize: true,
        }
    }
}

impl PyramidSpec {
    pub fn new(levels: usize, base_scale: f64, ratio: f64, normalize: bool) -> Result<Self> {
        let spec = Self {
            levels,
            base_scale,
            ratio,
            normalize,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidPyramid("need at least one level".into()));
        }
        if !(self.base_scale > 0.0 && self.base_scale.is_finite()) {
            return Err(Error::InvalidPyramid("base scale must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidPyramid("ratio must lie in (0, 1)".into()));
        }
        if self.normalize {
            let inv = 1.0 / self.ratio;
            if (inv - inv.round()).abs() > 1e-9 {
                return Err(Error::InvalidPyramid(
                    "1/ratio must be an integer when normalizing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn scales(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|k| self.base_scale * self.ratio.powi(k as i32))
            .collect()
    }

    pub fn finest_scale(&self) -> f64 {
        self.base_scale * self.ratio.powi(self.levels as i32 - 1)
    }
}

/// Digits and residual of one encoded value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidCode {
    pub digits: Vec<i64>,
    pub residual: f64,
}

impl PyramidCode {
    pub fn negate(&self) -> Self {
        Self {
            digits: self.digits.iter().map(|d| -d).collect(),
            residual: -self.residual,
        }
    }
}

pub fn encode_value(v: f64, spec: &PyramidSpec) -> Result<PyramidCode> {
    if !v.is_finite() {
        return Err(Error::NonFiniteInput(v));
    }
    let mut rest = v;
    let digits = spec
        .scales()
        .into_iter()
        .map(|s| {
            let d = (rest / s).trunc();
            rest -= d * s;
            d as i64
        })
        .collect();
    Ok(PyramidCode {
        digits,
        residual: rest,
    })
}

pub fn decode_value(code: &PyramidCode, spec: &PyramidSpec) -> Result<f64> {
    if code.digits.len() != spec.levels {
        return Err(Error::SpecMismatch {
            expected: spec.levels,
            got: code.digits.len(),
        });
    }
    let coarse: f64 = code
        .digits
        .iter()
        .zip(spec.scales())
        .map(|(&d, s)| d as f64 * s)
        .sum();
    Ok(coarse + code.residual)
}

/// Which of the 10 PFE channels get pyramid-encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelection(pub Vec<usize>);

impl Default for ChannelSelection {
    /// Every coordinate channel; reflectance (channel 3) passes through.
    fn default() -> Self {
        Self((0..PFE_CHANNELS).filter(|&c| c != 3).collect())
    }
}

impl ChannelSelection {
    pub fn contains(&self, c: usize) -> bool {
        self.0.contains(&c)
    }

    pub fn output_width(&self, input_width: usize, spec: &PyramidSpec) -> usize {
        let selected = (0..input_width).filter(|&c| self.contains(c)).count();
        selected * (spec.levels + 1) + (input_width - selected)
    }
}

/// Writes the normalized code of `v` into `out` (length `levels + 1`).
fn write_code(v: f64, spec: &PyramidSpec, out: &mut [f64]) -> Result<()> {
    let code = encode_value(v, spec)?;
    let finest = spec.finest_scale();
    for (slot, d) in out.iter_mut().zip(&code.digits) {
        *slot = if spec.normalize {
            *d as f64 * spec.ratio
        } else {
            *d as f64
        };
    }
    out[spec.levels] = if spec.normalize {
        code.residual / finest
    } else {
        code.residual
    };
    Ok(())
}

/// Expands every selected channel into `levels` digits plus a residual, in
/// channel order; unselected channels pass through. With normalization on,
/// digits are scaled by `ratio` and the residual by `1 / finest_scale`, which
/// keeps every entry in `[-1, 1]` for coordinates below `base_scale / ratio`.
pub fn encode_features(set: &PillarSet, spec: &PyramidSpec, selection: &ChannelSelection) -> Result<PillarSet> {
    spec.validate()?;
    if let Some(&bad) = selection.0.iter().find(|&&c| c >= set.width) {
        return Err(Error::ChannelOutOfRange(bad));
    }
    let out_width = selection.output_width(set.width, spec);
    let rows = set.pillars.len() * set.slots();
    let mut features = vec![0.0; rows * out_width];
    for r in 0..rows {
        if !set.mask[r] {
            continue;
        }
        let input = &set.features[r * set.width..(r + 1) * set.width];
        let out = &mut features[r * out_width..(r + 1) * out_width];
        let mut o = 0;
        for (c, &v) in input.iter().enumerate() {
            if selection.contains(c) {
                write_code(v, spec, &mut out[o..o + spec.levels + 1])?;
                o += spec.levels + 1;
            } else {
                out[o] = v;
                o += 1;
            }
        }
    }
    Ok(PillarSet {
        width: out_width,
        features,
        ..set.clone()
    })
}

/// Per-channel 1-Wasserstein distances and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub per_channel: Vec<f64>,
    pub mean: f64,
}

/// `n` evenly spaced quantiles of a sorted sample, at `(i + 0.5) / n`.
fn resample_sorted(sorted: &[f64], n: usize) -> Vec<f64> {
    if sorted.len() == n {
        return sorted.to_vec();
    }
    let len = sorted.len();
    (0..n)
        .map(|i| {
            let idx = ((i as f64 + 0.5) * len as f64 / n as f64).floor() as usize;
            sorted[idx.min(len - 1)]
        })
        .collect()
}

/// 1-D 1-Wasserstein distance between two empirical samples: the larger
/// sample is resampled at evenly spaced quantiles to the smaller count, then
/// the sorted samples are compared by mean absolute difference.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let n = a.len().min(b.len());
    let (sa, sb) = (resample_sorted(&sorted(a), n), resample_sorted(&sorted(b), n));
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64)
}

/// Channel-wise 1-Wasserstein distance between two feature sets (rows are points).
pub fn distribution_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DistanceReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = a[0].len();
    if let Some(bad) = a.iter().chain(b).map(Vec::len).find(|&w| w != width) {
        return Err(Error::WidthMismatch(width, bad));
    }
    if width == 0 {
        return Err(Error::EmptyInput);
    }
    let per_channel = (0..width)
        .map(|c| {
            let ca: Vec<f64> = a.iter().map(|r| r[c]).collect();
            let cb: Vec<f64> = b.iter().map(|r| r[c]).collect();
            wasserstein_1d(&ca, &cb)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_channel.iter().sum::<f64>() / width as f64;
    Ok(DistanceReport { per_channel, mean })
}

/// The three perturbations of the robustness study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Perturbation {
    Scale,
    Translation,
    Rotation,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] = [Self::Scale, Self::Translation, Self::Rotation];

    /// 1.2x scale, 1.2 m translation along x, 45 degree yaw.
    pub fn transform(self) -> RigidScaleTransform {
        match self {
            Self::Scale => RigidScaleTransform {
                scale: 1.2,
                ..RigidScaleTransform::identity()
            },
            Self::Translation => RigidScaleTransform {
                translation: [1.2, 0.0, 0.0],
                ..RigidScaleTransform::identity()
            },
            Self::Rotation => RigidScaleTransform {
                yaw: std::f64::consts::FRAC_PI_4,
                ..RigidScaleTransform::identity()
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Scale => "scale",
            Self::Translation => "translation",
            Self::Rotation => "rotation",
        }
    }
}

/// Plain 10-channel PFE rows and PE-PFE rows of one cloud.
#[derive(Debug, Clone)]
pub struct EncodedCloud {
    pub pfe: Vec<Vec<f64>>,
    pub pepfe: Vec<Vec<f64>>,
}

pub fn encode_cloud(cloud: &PointCloud, grid: &GridSpec, spec: &PyramidSpec) -> Result<EncodedCloud> {
    let set = augment_points(pillarize(cloud, grid)?);
    let encoded = encode_features(&set, spec, &ChannelSelection::default())?;
    Ok(EncodedCloud {
        pfe: set.valid_rows(),
        pepfe: encoded.valid_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub perturbation: Perturbation,
    pub pfe: DistanceReport,
    pub pepfe: DistanceReport,
}

/// Encodes `cloud` and each perturbed copy (about the cloud centroid) with
/// both encoders and reports the distribution shift each perturbation causes.
pub fn robustness_study(cloud: &PointCloud, grid: &GridSpec, spec: &PyramidSpec) -> Result<Vec<RobustnessRow>> {
    let base = encode_cloud(cloud, grid, spec)?;
    Perturbation::ALL
        .iter()
        .map(|&p| {
            let moved = encode_cloud(&transform_cloud(cloud, &p.transform(), None), grid, spec)?;
            Ok(RobustnessRow {
                perturbation: p,
                pfe: distribution_distance(&base.pfe, &moved.pfe)?,
                pepfe: distribution_distance(&base.pepfe, &moved.pepfe)?,
            })
        })
        .collect()
}
