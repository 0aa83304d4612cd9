use ndarray::Array2;

use super::config::{BackboneConfig, HEAD_CHANNELS, STAGES};
use super::ops::{FeatureMap, linear};
use super::weights::WeightStore;
use crate::error::{Error, Result};
use crate::geometry::{Box7, normalize_angle};
use crate::pillar::GridSpec;

const MIN_SIZE: f64 = 1e-3;

/// Per-cell head output, channels `[heat, dx, dy, dz, dh, dw, dl, sin, cos]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMap {
    pub height: usize,
    pub width: usize,
    /// Stride of one head cell in pillars.
    pub stride: usize,
    pub values: Array2<f32>,
}

impl HeadMap {
    pub fn zeros(height: usize, width: usize, stride: usize) -> Self {
        Self {
            height,
            width,
            stride,
            values: Array2::zeros((height * width, HEAD_CHANNELS)),
        }
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> ndarray::ArrayViewMut1<'_, f32> {
        self.values.row_mut(row * self.width + col)
    }

    /// `(row, col)` of the heatmap maximum; ties go to the lowest row, then column.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = 0;
        for i in 1..self.values.nrows() {
            if self.values[[i, 0]] > self.values[[best, 0]] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub bbox: Box7,
    pub confidence: f64,
}

pub fn head_forward(fused: &FeatureMap, cfg: &BackboneConfig, w: &WeightStore) -> Result<HeadMap> {
    let mut hidden = linear(&fused.tokens, w, "head.hidden")?;
    hidden.mapv_inplace(|v| v.max(0.0));
    let values = linear(&hidden, w, "head.out")?;
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteActivation {
            stage: STAGES,
            block: None,
        });
    }
    Ok(HeadMap {
        height: fused.height,
        width: fused.width,
        stride: cfg.strides[0],
        values,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes the peak cell into a box. The search grid lives in the prior's
/// local frame, so cell `(H/2, W/2)` of a centered grid sits on the prior's
/// center.
pub fn decode_head(map: &HeadMap, prior: &Box7, grid: &GridSpec) -> Prediction {
    let (row, col) = map.peak();
    let v = map.values.row(row * map.width + col);
    let f = |i: usize| f64::from(v[i]);
    let cell_x = map.stride as f64 * grid.pillar_size.0;
    let cell_y = map.stride as f64 * grid.pillar_size.1;
    let local = [
        grid.x_range.0 + col as f64 * cell_x + f(1),
        grid.y_range.0 + row as f64 * cell_y + f(2),
        f(3),
    ];
    let [cx, cy, cz] = prior.to_global(local);
    let size = |base: f64, delta: f64| (base + delta).max(MIN_SIZE);
    let (s, c) = (f(7), f(8));
    let dtheta = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c) };
    let bbox = Box7 {
        cx,
        cy,
        cz,
        h: size(prior.h, f(4)),
        w: size(prior.w, f(5)),
        l: size(prior.l, f(6)),
        theta: normalize_angle(dtheta + prior.theta),
    };
    Prediction {
        bbox,
        confidence: sigmoid(f(0)),
    }
}

pub fn head_decode(
    fused: &FeatureMap,
    prior: &Box7,
    grid: &GridSpec,
    cfg: &BackboneConfig,
    w: &WeightStore,
) -> Result<Prediction> {
    Ok(decode_head(&head_forward(fused, cfg, w)?, prior, grid))
}
