use ndarray::Array2;

use super::config::{BackboneConfig, STAGES};
use super::forward::MultiScaleFeatures;
use super::ops::{FeatureMap, Observer, linear, multi_head_attention, upsample_nearest};
use super::weights::WeightStore;
use crate::error::{Error, Result};

/// Search tokens attend to template tokens at scale `k`; the attended values
/// are projected and added back to the search tokens.
pub fn cross_attention(
    search: &Array2<f32>,
    template: &Array2<f32>,
    k: usize,
    cfg: &BackboneConfig,
    w: &WeightStore,
    observer: &mut Observer<'_>,
) -> Result<Array2<f32>> {
    let p = format!("neck.scale{k}");
    let q = linear(search, w, &format!("{p}.q"))?;
    let keys = linear(template, w, &format!("{p}.k"))?;
    let values = linear(template, w, &format!("{p}.v"))?;
    let a = multi_head_attention(&q, &keys, &values, cfg.heads[k], (k, None), observer);
    Ok(search + &linear(&a, w, &format!("{p}.o"))?)
}

/// Fuses per-scale similarity into one `channels[0]` map at the finest stride.
pub fn similarity_neck_forward(
    template: &MultiScaleFeatures,
    search: &MultiScaleFeatures,
    cfg: &BackboneConfig,
    w: &WeightStore,
) -> Result<FeatureMap> {
    similarity_neck_forward_observed(template, search, cfg, w, None)
}

pub fn similarity_neck_forward_observed(
    template: &MultiScaleFeatures,
    search: &MultiScaleFeatures,
    cfg: &BackboneConfig,
    w: &WeightStore,
    mut observer: Observer<'_>,
) -> Result<FeatureMap> {
    if template.maps.len() != STAGES || search.maps.len() != STAGES {
        return Err(Error::ShapeMismatch("expected four feature scales per branch".into()));
    }
    for k in 0..STAGES {
        let (t, s) = (&template.maps[k], &search.maps[k]);
        if t.channels != cfg.channels[k] || s.channels != cfg.channels[k] {
            return Err(Error::ShapeMismatch(format!(
                "scale {k}: channels {} / {} do not match config {}",
                t.channels, s.channels, cfg.channels[k]
            )));
        }
    }
    let base = &search.maps[0];
    let mut fused = FeatureMap::new(
        base.height,
        base.width,
        Array2::zeros((base.height * base.width, cfg.fused_channels())),
    );
    for k in 0..STAGES {
        let s = &search.maps[k];
        let sim = cross_attention(&s.tokens, &template.maps[k].tokens, k, cfg, w, &mut observer)?;
        let projected = FeatureMap::new(s.height, s.width, linear(&sim, w, &format!("neck.scale{k}.fuse"))?);
        let factor = base.height / s.height;
        if s.height * factor != base.height || s.width * factor != base.width {
            return Err(Error::ShapeMismatch(format!("scale {k} does not tile the finest map")));
        }
        fused.tokens += &upsample_nearest(&projected, factor).tokens;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::weights::init_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> BackboneConfig {
        BackboneConfig {
            in_channels: 3,
            depths: [0; 4],
            channels: [8, 16, 40, 64],
            ..Default::default()
        }
    }

    fn random_features(cfg: &BackboneConfig, side: usize, seed: u64) -> MultiScaleFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps = (0..STAGES)
            .map(|k| {
                let (h, w) = cfg.stage_shape(k, side, side);
                let t = Array2::from_shape_fn((h * w, cfg.channels[k]), |_| rng.random_range(-1.0..1.0));
                FeatureMap::new(h, w, t)
            })
            .collect();
        MultiScaleFeatures { maps }
    }

    #[test]
    fn fused_shape_follows_search() {
        let c = cfg();
        let w = init_weights(&c, 0).unwrap();
        let t = random_features(&c, 64, 1);
        let s = random_features(&c, 128, 2);
        let f = similarity_neck_forward(&t, &s, &c, &w).unwrap();
        assert_eq!(f.shape(), (8, 32, 32));
        assert!(f.is_finite());
        let same = similarity_neck_forward(&s, &s, &c, &w).unwrap();
        assert!(same.is_finite());
    }

    #[test]
    fn zero_template_gives_uniform_attention() {
        let c = cfg();
        let w = init_weights(&c, 0).unwrap();
        let mut t = random_features(&c, 64, 1);
        t.maps.iter_mut().for_each(|m| m.tokens.fill(0.0));
        let s = random_features(&c, 128, 2);
        let mut spread = 0.0f32;
        let mut obs = |p: &crate::backbone::ops::AttentionProbe<'_>| {
            let first = p.weights[[0, 0]];
            for v in p.weights.iter() {
                spread = spread.max((v - first).abs());
            }
        };
        let f = similarity_neck_forward_observed(&t, &s, &c, &w, Some(&mut obs)).unwrap();
        assert!(f.is_finite());
        assert!(spread < 1e-6);
    }

    #[test]
    fn template_order_does_not_matter() {
        let c = cfg();
        let w = init_weights(&c, 5).unwrap();
        let t = random_features(&c, 64, 3);
        let s = random_features(&c, 128, 4);
        let k = 0;
        let n = t.maps[k].tokens.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
        let permuted = t.maps[k].tokens.select(ndarray::Axis(0), &perm);
        let a = cross_attention(&s.maps[k].tokens, &t.maps[k].tokens, k, &c, &w, &mut None).unwrap();
        let b = cross_attention(&s.maps[k].tokens, &permuted, k, &c, &w, &mut None).unwrap();
        let diff = (&a - &b).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn mismatched_branches_rejected() {
        let c = cfg();
        let w = init_weights(&c, 0).unwrap();
        let t = random_features(&c, 64, 1);
        let mut s = random_features(&c, 128, 2);
        s.maps.pop();
        assert!(matches!(
            similarity_neck_forward(&t, &s, &c, &w),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
