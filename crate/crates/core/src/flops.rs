//! Analytic FLOP counts for the backbone.
//!
//! One multiply-accumulate counts as `flops_per_mac` FLOPs. Only the search
//! branch backbone is counted (no template branch, neck or head). Layer norms,
//! average pooling, GELU and softmax add one FLOP per element they touch.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, STAGES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingConvention {
    pub flops_per_mac: u64,
    /// Side of the square search pseudo-image.
    pub resolution: usize,
}

impl Default for CountingConvention {
    fn default() -> Self {
        Self {
            flops_per_mac: 2,
            resolution: 128,
        }
    }
}

impl CountingConvention {
    pub fn descriptor(&self) -> String {
        format!(
            "MAC={} FLOPs; search-branch backbone only; {r}x{r} input; norms, pooling, GELU and softmax at 1 FLOP per element",
            self.flops_per_mac,
            r = self.resolution
        )
    }
}

/// Token count of stage `k`, checking the grid divides evenly.
fn tokens(cfg: &BackboneConfig, k: usize, resolution: usize) -> Result<usize> {
    let divisor = cfg.cumulative_stride(k) * cfg.sr_ratios[k];
    if !resolution.is_multiple_of(divisor) || resolution < divisor {
        return Err(Error::InvalidResolution {
            stage: k,
            resolution,
            divisor,
        });
    }
    let side = resolution / cfg.cumulative_stride(k);
    Ok(side * side)
}

/// Cost of one block at stage `k`.
pub fn block_flops(k: usize, cfg: &BackboneConfig, conv: &CountingConvention) -> Result<u64> {
    let n = tokens(cfg, k, conv.resolution)? as u64;
    let c = cfg.channels[k] as u64;
    let sr = cfg.sr_ratios[k] as u64;
    let m = n / (sr * sr);
    let mlp = cfg.mlp_ratios[k] as u64;
    let heads = cfg.heads[k] as u64;

    let macs = n * c * c + 2 * m * c * c + 2 * n * m * c + n * c * c + 2 * n * c * c * mlp;
    let mut elementwise = 2 * n * c + n * c * mlp + n * m * heads;
    if sr > 1 {
        elementwise += n * c + m * c;
    }
    Ok(conv.flops_per_mac * macs + elementwise)
}

/// Patch embedding plus its norm at stage `k`.
pub fn embed_flops(k: usize, cfg: &BackboneConfig, conv: &CountingConvention) -> Result<u64> {
    let n = tokens(cfg, k, conv.resolution)? as u64;
    let c = cfg.channels[k] as u64;
    let cin = if k == 0 { cfg.in_channels } else { cfg.channels[k - 1] } as u64;
    let s = cfg.strides[k] as u64;
    Ok(conv.flops_per_mac * n * s * s * cin * c + n * c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub depths: [usize; STAGES],
    pub embed: [u64; STAGES],
    pub block: [u64; STAGES],
    pub total: u64,
    pub gflops: f64,
    pub convention: String,
}

impl FlopReport {
    /// GFLOPs rounded to three decimals.
    pub fn gflops_rounded(&self) -> f64 {
        (self.gflops * 1000.0).round() / 1000.0
    }
}

pub fn model_flops(cfg: &BackboneConfig, conv: &CountingConvention) -> Result<FlopReport> {
    cfg.validate()?;
    let mut embed = [0; STAGES];
    let mut block = [0; STAGES];
    for k in 0..STAGES {
        embed[k] = embed_flops(k, cfg, conv)?;
        block[k] = block_flops(k, cfg, conv)?;
    }
    let total = embed.iter().sum::<u64>()
        + (0..STAGES).map(|k| cfg.depths[k] as u64 * block[k]).sum::<u64>();
    Ok(FlopReport {
        depths: cfg.depths,
        embed,
        block,
        total,
        gflops: total as f64 / 1e9,
        convention: conv.descriptor(),
    })
}

/// GFLOPs added by one extra block at each stage.
pub fn marginal_costs(cfg: &BackboneConfig, conv: &CountingConvention) -> Result<[f64; STAGES]> {
    let base = model_flops(cfg, conv)?.total;
    let mut out = [0.0; STAGES];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut depths = cfg.depths;
        depths[k] += 1;
        let more = model_flops(&cfg.clone().with_depths(depths), conv)?.total;
        *slot = (more - base) as f64 / 1e9;
    }
    Ok(out)
}

/// Depth ablation: block counts per stage and reported GFLOPs.
pub const ABLATION_TABLE: [([usize; STAGES], f64); 15] = [
    ([3, 4, 6, 3], 0.37),
    ([6, 6, 2, 2], 0.38),
    ([1, 1, 1, 1], 0.14),
    ([2, 1, 1, 1], 0.16),
    ([3, 1, 1, 1], 0.18),
    ([4, 1, 1, 1], 0.21),
    ([1, 2, 1, 1], 0.16),
    ([1, 3, 1, 1], 0.18),
    ([1, 4, 1, 1], 0.20),
    ([1, 1, 2, 1], 0.16),
    ([1, 1, 3, 1], 0.18),
    ([1, 1, 4, 1], 0.20),
    ([1, 1, 1, 2], 0.15),
    ([1, 1, 1, 3], 0.17),
    ([1, 1, 1, 4], 0.18),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub depths: [usize; STAGES],
    pub reported: f64,
    pub report: FlopReport,
    /// Model GFLOPs minus those of the reference depths.
    pub delta: f64,
}

/// Evaluates every ablation row on `base` with its depths swapped in;
/// deltas are taken against `base` at `reference` depths.
pub fn ablation(base: &BackboneConfig, conv: &CountingConvention, reference: [usize; STAGES]) -> Result<Vec<AblationRow>> {
    let reference = model_flops(&base.clone().with_depths(reference), conv)?.gflops;
    ABLATION_TABLE
        .iter()
        .map(|&(depths, reported)| {
            let report = model_flops(&base.clone().with_depths(depths), conv)?;
            Ok(AblationRow {
                depths,
                reported,
                delta: report.gflops - reference,
                report,
            })
        })
        .collect()
}
