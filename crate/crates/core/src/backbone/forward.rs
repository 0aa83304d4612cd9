use ndarray::Array2;

use super::config::{BackboneConfig, STAGES};
use super::ops::{
    FeatureMap, Observer, avg_pool, gelu, im2col, layer_norm, linear, multi_head_attention, norm,
};
use super::weights::WeightStore;
use crate::error::{Error, Result};
use crate::pillar::PseudoImage;

/// One feature map per stage, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleFeatures {
    pub maps: Vec<FeatureMap>,
}

impl MultiScaleFeatures {
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.maps.iter().map(FeatureMap::shape).collect()
    }
}

pub fn image_to_tokens(image: &PseudoImage) -> FeatureMap {
    let (c, h, w) = image.shape();
    let tokens = Array2::from_shape_fn((h * w, c), |(i, ch)| image.data[ch * h * w + i]);
    FeatureMap::new(h, w, tokens)
}

fn check_finite(x: &Array2<f32>, stage: usize, block: Option<usize>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { stage, block })
    }
}

fn block_forward(
    x: &mut Array2<f32>,
    (height, width): (usize, usize),
    cfg: &BackboneConfig,
    w: &WeightStore,
    (k, b): (usize, usize),
    observer: &mut Observer<'_>,
) -> Result<()> {
    let p = format!("stage{k}.block{b}");
    let sr = cfg.sr_ratios[k];

    let h = norm(x, w, &format!("{p}.norm1"))?;
    let q = linear(&h, w, &format!("{p}.attn.q"))?;
    let reduced = if sr > 1 {
        norm(&avg_pool(&h, height, width, sr), w, &format!("{p}.attn.sr_norm"))?
    } else {
        h
    };
    let kv = linear(&reduced, w, &format!("{p}.attn.kv"))?;
    let c = cfg.channels[k];
    let (keys, values) = kv.view().split_at(ndarray::Axis(1), c);
    let a = multi_head_attention(
        &q,
        &keys.to_owned(),
        &values.to_owned(),
        cfg.heads[k],
        (k, Some(b)),
        observer,
    );
    *x += &linear(&a, w, &format!("{p}.attn.proj"))?;

    if cfg.mlp_ratios[k] > 0 {
        let h = norm(x, w, &format!("{p}.norm2"))?;
        let mut hidden = linear(&h, w, &format!("{p}.mlp.fc1"))?;
        hidden.mapv_inplace(gelu);
        *x += &linear(&hidden, w, &format!("{p}.mlp.fc2"))?;
    }
    check_finite(x, k, Some(b))
}

/// Runs the four stages over a pseudo-image.
pub fn backbone_forward(image: &PseudoImage, cfg: &BackboneConfig, w: &WeightStore) -> Result<MultiScaleFeatures> {
    backbone_forward_observed(image, cfg, w, None)
}

/// As [`backbone_forward`], passing every attention matrix to `observer`.
pub fn backbone_forward_observed(
    image: &PseudoImage,
    cfg: &BackboneConfig,
    w: &WeightStore,
    mut observer: Observer<'_>,
) -> Result<MultiScaleFeatures> {
    cfg.validate()?;
    if image.channels != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "image has {} channels, backbone expects {}",
            image.channels, cfg.in_channels
        )));
    }
    cfg.check_input(image.height, image.width)?;
    if !image.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteActivation { stage: 0, block: None });
    }

    let mut maps = Vec::with_capacity(STAGES);
    let mut input = image_to_tokens(image);
    for k in 0..STAGES {
        let s = cfg.strides[k];
        let (height, width) = (input.height / s, input.width / s);
        let patches = im2col(&input, s);
        let mut x = norm(
            &linear(&patches, w, &format!("stage{k}.embed"))?,
            w,
            &format!("stage{k}.embed.norm"),
        )?;
        check_finite(&x, k, None)?;
        for b in 0..cfg.depths[k] {
            block_forward(&mut x, (height, width), cfg, w, (k, b), &mut observer)?;
        }
        let x = layer_norm(
            &x,
            w.vector(&format!("stage{k}.norm.gamma"))?,
            w.vector(&format!("stage{k}.norm.beta"))?,
        );
        check_finite(&x, k, None)?;
        let map = FeatureMap::new(height, width, x);
        maps.push(map.clone());
        input = map;
    }
    Ok(MultiScaleFeatures { maps })
}
