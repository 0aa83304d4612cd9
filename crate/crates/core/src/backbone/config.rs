use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAGES: usize = 4;

/// Output channels of the detection head:
/// `[heatmap, dx, dy, dz, dh, dw, dl, sin, cos]`.
pub const HEAD_CHANNELS: usize = 9;

/// Four-stage attention backbone. Stage `k` embeds non-overlapping
/// `strides[k] x strides[k]` patches to `channels[k]` and then runs
/// `depths[k]` blocks of spatial-reduction attention plus a feed-forward layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub depths: [usize; STAGES],
    pub heads: [usize; STAGES],
    pub channels: [usize; STAGES],
    pub mlp_ratios: [usize; STAGES],
    pub strides: [usize; STAGES],
    pub sr_ratios: [usize; STAGES],
}

impl Default for BackboneConfig {
    /// The front-loaded `[3, 1, 1, 1]` layout over 37-channel PE-PFE pillars.
    fn default() -> Self {
        Self {
            in_channels: 37,
            depths: [3, 1, 1, 1],
            heads: [1, 2, 5, 8],
            channels: [64, 128, 320, 512],
            mlp_ratios: [8, 8, 4, 8],
            strides: [4, 2, 2, 2],
            sr_ratios: [8, 4, 2, 1],
        }
    }
}

impl BackboneConfig {
    /// PVTv2-b2 stage layout: depths `[3, 4, 6, 3]`, mlp ratios `[8, 8, 4, 4]`.
    pub fn pvt_v2_b2() -> Self {
        Self {
            depths: [3, 4, 6, 3],
            mlp_ratios: [8, 8, 4, 4],
            ..Self::default()
        }
    }

    pub fn with_depths(mut self, depths: [usize; STAGES]) -> Self {
        self.depths = depths;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::InvalidConfig("in_channels must be positive".into()));
        }
        for k in 0..STAGES {
            let (c, h) = (self.channels[k], self.heads[k]);
            if c == 0 || h == 0 || c % h != 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {k}: channels {c} not divisible by heads {h}"
                )));
            }
            if self.strides[k] == 0 || self.sr_ratios[k] == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {k}: strides and sr ratios must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Product of strides up to and including stage `k`.
    pub fn cumulative_stride(&self, k: usize) -> usize {
        self.strides[..=k].iter().product()
    }

    /// Fused map channel count.
    pub fn fused_channels(&self) -> usize {
        self.channels[0]
    }

    /// Spatial shape `(h, w)` of stage `k` for an `height x width` input.
    pub fn stage_shape(&self, k: usize, height: usize, width: usize) -> (usize, usize) {
        let s = self.cumulative_stride(k);
        (height / s, width / s)
    }

    /// Checks that every stage's grid divides evenly by its stride and spatial
    /// reduction.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let (mut h, mut w) = (height, width);
        for k in 0..STAGES {
            let s = self.strides[k];
            if h % s != 0 || w % s != 0 || h < s || w < s {
                return Err(Error::ShapeMismatch(format!(
                    "stage {k}: {h}x{w} grid not divisible by stride {s}"
                )));
            }
            h /= s;
            w /= s;
            let sr = self.sr_ratios[k];
            if h % sr != 0 || w % sr != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "stage {k}: {h}x{w} tokens not divisible by reduction {sr}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let cfg = BackboneConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.cumulative_stride(3), 32);
        cfg.check_input(128, 128).unwrap();
        cfg.check_input(64, 64).unwrap();
        assert!(cfg.check_input(96, 100).is_err());
    }

    #[test]
    fn heads_must_divide_channels() {
        let cfg = BackboneConfig {
            heads: [3, 2, 5, 8],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn toml_roundtrip_with_partial_fields() {
        let cfg: BackboneConfig = toml::from_str("depths = [1, 1, 1, 4]").unwrap();
        assert_eq!(cfg.depths, [1, 1, 1, 4]);
        assert_eq!(cfg.channels, [64, 128, 320, 512]);
    }
}
