use ndarray::{Array2, ArrayView1, ArrayView2, Axis, s};

use super::weights::WeightStore;
use crate::error::Result;

pub const LN_EPS: f32 = 1e-6;

/// Token map: `height * width` tokens in row-major order, `channels` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: Array2<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, tokens: Array2<f32>) -> Self {
        debug_assert_eq!(tokens.nrows(), height * width);
        Self {
            channels: tokens.ncols(),
            height,
            width,
            tokens,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.tokens[[row * self.width + col, c]]
    }

    pub fn is_finite(&self) -> bool {
        self.tokens.iter().all(|v| v.is_finite())
    }
}

/// `x W^T + b` for `x: n x in`, `W: out x in`.
pub fn linear(x: &Array2<f32>, w: &WeightStore, name: &str) -> Result<Array2<f32>> {
    let weight = w.matrix(&format!("{name}.weight"))?;
    let bias = w.vector(&format!("{name}.bias"))?;
    let mut y = x.dot(&weight.t());
    y += &bias;
    Ok(y)
}

pub fn layer_norm(x: &Array2<f32>, gamma: ArrayView1<f32>, beta: ArrayView1<f32>) -> Array2<f32> {
    let c = x.ncols() as f32;
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let mean = row.sum() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    y
}

pub fn norm(x: &Array2<f32>, w: &WeightStore, name: &str) -> Result<Array2<f32>> {
    Ok(layer_norm(
        x,
        w.vector(&format!("{name}.gamma"))?,
        w.vector(&format!("{name}.beta"))?,
    ))
}

/// Tanh approximation of GELU.
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_rows(a: &mut Array2<f32>) {
    for mut row in a.rows_mut() {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Row-stochastic weights of one attention head, handed to an observer.
pub struct AttentionProbe<'a> {
    pub stage: usize,
    pub block: Option<usize>,
    pub head: usize,
    pub weights: ArrayView2<'a, f32>,
}

pub type Observer<'o> = Option<&'o mut dyn FnMut(&AttentionProbe<'_>)>;

/// Scaled dot-product attention split over `heads`: `q: n x C`, `k, v: m x C`.
pub fn multi_head_attention(
    q: &Array2<f32>,
    k: &Array2<f32>,
    v: &Array2<f32>,
    heads: usize,
    site: (usize, Option<usize>),
    observer: &mut Observer<'_>,
) -> Array2<f32> {
    let c = q.ncols();
    let d = c / heads;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = Array2::zeros((q.nrows(), c));
    for h in 0..heads {
        let cols = s![.., h * d..(h + 1) * d];
        let mut a = q.slice(cols).dot(&k.slice(cols).t());
        a *= scale;
        softmax_rows(&mut a);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&AttentionProbe {
                stage: site.0,
                block: site.1,
                head: h,
                weights: a.view(),
            });
        }
        out.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
    }
    out
}

/// Non-overlapping `r x r` average pooling of a token map.
pub fn avg_pool(x: &Array2<f32>, height: usize, width: usize, r: usize) -> Array2<f32> {
    if r == 1 {
        return x.clone();
    }
    let (ho, wo) = (height / r, width / r);
    let inv = 1.0 / (r * r) as f32;
    let mut out = Array2::zeros((ho * wo, x.ncols()));
    for row in 0..height {
        for col in 0..width {
            let mut dst = out.row_mut((row / r) * wo + col / r);
            dst.scaled_add(inv, &x.row(row * width + col));
        }
    }
    out
}

/// Gathers non-overlapping `s x s` patches into rows ordered `(channel, dy, dx)`.
pub fn im2col(x: &FeatureMap, s: usize) -> Array2<f32> {
    let (ho, wo) = (x.height / s, x.width / s);
    let c = x.channels;
    let mut out = Array2::zeros((ho * wo, c * s * s));
    for (i, mut patch) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (pr, pc) = (i / wo, i % wo);
        for dy in 0..s {
            for dx in 0..s {
                let src = x.tokens.row((pr * s + dy) * x.width + pc * s + dx);
                for ch in 0..c {
                    patch[(ch * s + dy) * s + dx] = src[ch];
                }
            }
        }
    }
    out
}

/// Nearest-neighbor upsampling of a token map by an integer factor.
pub fn upsample_nearest(x: &FeatureMap, factor: usize) -> FeatureMap {
    if factor == 1 {
        return x.clone();
    }
    let (h, w) = (x.height * factor, x.width * factor);
    let mut out = Array2::zeros((h * w, x.channels));
    for row in 0..h {
        for col in 0..w {
            out.row_mut(row * w + col)
                .assign(&x.tokens.row((row / factor) * x.width + col / factor));
        }
    }
    FeatureMap::new(h, w, out)
}
