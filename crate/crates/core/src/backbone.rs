//! Bottom-up pathway: four conv–rectifier–pool blocks producing B₁…B₄ and
//! the global embedding `t^g` (linear projection of the pooled B₄).

use serde::{Deserialize, Serialize};

use crate::error::{OreoError, Result};
use crate::scalar::Scalar;
use crate::seed::{self, tag};
use crate::tensor::{self, Conv3x3, Linear};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub channels: [usize; 4],
    pub embedding_dim: usize,
    pub image_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            channels: [8, 16, 32, 64],
            embedding_dim: 32,
            image_size: 64,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(OreoError::InvalidConfig(format!(
                "image_size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if self.embedding_dim < 8 {
            return Err(OreoError::InvalidConfig(format!("embedding_dim {} < 8", self.embedding_dim)));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(OreoError::InvalidConfig("block channels must be positive".into()));
        }
        Ok(())
    }

    /// `(channels, side)` of block `k` (0-based).
    pub fn block_dims(&self, k: usize) -> MapDims {
        MapDims {
            channels: self.channels[k],
            side: self.image_size >> (k + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapDims {
    pub channels: usize,
    pub side: usize,
}

impl MapDims {
    pub fn plane(&self) -> usize {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams<T> {
    pub blocks: [Conv3x3<T>; 4],
    pub embed: Linear<T>,
}

impl<T: Scalar> BackboneParams<T> {
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        let c = cfg.channels;
        BackboneParams {
            blocks: [
                Conv3x3::zeros(c[0], 1),
                Conv3x3::zeros(c[1], c[0]),
                Conv3x3::zeros(c[2], c[1]),
                Conv3x3::zeros(c[3], c[2]),
            ],
            embed: Linear::zeros(cfg.embedding_dim, c[3]),
        }
    }

    /// Fan-in-scaled Gaussian initialization, deterministic per seed.
    pub fn init(cfg: &BackboneConfig, seed_root: u64) -> Self {
        let mut rng = seed::rng_for(seed_root, &[tag::INIT, 0]);
        let c = cfg.channels;
        BackboneParams {
            blocks: [
                Conv3x3::init(c[0], 1, &mut rng),
                Conv3x3::init(c[1], c[0], &mut rng),
                Conv3x3::init(c[2], c[1], &mut rng),
                Conv3x3::init(c[3], c[2], &mut rng),
            ],
            embed: Linear::init(cfg.embedding_dim, c[3], 1.0, &mut rng),
        }
    }
}

/// Backbone activations for one image.
#[derive(Debug, Clone)]
pub struct FeatureMaps<T> {
    /// B₁…B₄, each `channels × side × side`.
    pub blocks: [Vec<T>; 4],
    pub dims: [MapDims; 4],
    /// `t^g`.
    pub global: Vec<T>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BackboneCache<T> {
    input: Vec<T>,
    pre_activation: [Vec<T>; 4],
    pooled: Vec<T>,
}

fn check_finite<T: Scalar>(params: &BackboneParams<T>) -> Result<()> {
    for (k, b) in params.blocks.iter().enumerate() {
        if !b.weight.all_finite() || !b.bias.all_finite() {
            return Err(OreoError::NonFinite(format!("backbone block {k} parameters")));
        }
    }
    if !params.embed.weight.all_finite() || !params.embed.bias.all_finite() {
        return Err(OreoError::NonFinite("backbone embedding parameters".into()));
    }
    Ok(())
}

pub fn forward_backbone<T: Scalar>(
    cfg: &BackboneConfig,
    params: &BackboneParams<T>,
    pixels: &[f32],
) -> Result<(FeatureMaps<T>, BackboneCache<T>)> {
    let side = cfg.image_size;
    if pixels.len() != side * side {
        return Err(OreoError::Shape(format!(
            "image has {} pixels, backbone expects {side}x{side}",
            pixels.len()
        )));
    }
    check_finite(params)?;
    let input: Vec<T> = pixels.iter().map(|&p| T::from_f64_lossy(2.0 * p as f64 - 1.0)).collect();
    let dims = [0, 1, 2, 3].map(|k| cfg.block_dims(k));
    let mut pre: Vec<Vec<T>> = Vec::with_capacity(4);
    let mut outs: Vec<Vec<T>> = Vec::with_capacity(4);
    let mut cur_side = side;
    for (k, conv) in params.blocks.iter().enumerate() {
        let src = if k == 0 { &input } else { &outs[k - 1] };
        let z = tensor::conv3x3_forward(conv, src, cur_side, cur_side);
        let r = tensor::relu(&z);
        let pooled = tensor::avg_pool2(&r, conv.out_channels(), cur_side, cur_side);
        pre.push(z);
        outs.push(pooled);
        cur_side /= 2;
    }
    let pooled = tensor::channel_means(&outs[3], dims[3].channels, dims[3].plane());
    let global = params.embed.forward(&pooled);
    let to_arr = |v: Vec<Vec<T>>| -> [Vec<T>; 4] { v.try_into().expect("four blocks") };
    Ok((
        FeatureMaps {
            blocks: to_arr(outs),
            dims,
            global,
        },
        BackboneCache {
            input,
            pre_activation: to_arr(pre),
            pooled,
        },
    ))
}

/// Accumulates parameter gradients given `dL/dt^g` and any extra gradient
/// arriving directly at B₁…B₄ (from the attention pathway).
pub fn backward_backbone<T: Scalar>(
    cfg: &BackboneConfig,
    params: &BackboneParams<T>,
    maps: &FeatureMaps<T>,
    cache: &BackboneCache<T>,
    d_global: &[T],
    mut d_blocks: [Option<Vec<T>>; 4],
    grads: &mut BackboneParams<T>,
) {
    let d_pooled = params.embed.backward(&cache.pooled, d_global, &mut grads.embed);
    let d4 = maps.dims[3];
    let inv = T::one() / T::of_usize(d4.plane());
    let mut d_b: Vec<T> = (0..d4.len()).map(|i| d_pooled[i / d4.plane()] * inv).collect();
    for k in (0..4).rev() {
        if let Some(extra) = d_blocks[k].take() {
            for (a, b) in d_b.iter_mut().zip(extra) {
                *a = *a + b;
            }
        }
        let in_side = cfg.image_size >> k;
        let ch = params.blocks[k].out_channels();
        let mut d_z = tensor::avg_pool2_backward(&d_b, ch, in_side, in_side);
        tensor::relu_backward_inplace(&cache.pre_activation[k], &mut d_z);
        let src = if k == 0 { &cache.input } else { &maps.blocks[k - 1] };
        let d_in = tensor::conv3x3_backward(&params.blocks[k], src, &d_z, in_side, in_side, &mut grads.blocks[k], k > 0);
        if let Some(d_in) = d_in {
            d_b = d_in;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let cfg = BackboneConfig::default();
        let p = BackboneParams::<f32>::init(&cfg, 1);
        let (fm, _) = forward_backbone(&cfg, &p, &vec![0.5; 64 * 64]).unwrap();
        assert_eq!(fm.blocks[0].len(), 8 * 32 * 32);
        assert_eq!(fm.blocks[1].len(), 16 * 16 * 16);
        assert_eq!(fm.blocks[2].len(), 32 * 8 * 8);
        assert_eq!(fm.blocks[3].len(), 64 * 4 * 4);
        assert_eq!(fm.dims[2], MapDims { channels: 32, side: 8 });
        assert_eq!(fm.global.len(), 32);
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let cfg = BackboneConfig::default();
        let p = BackboneParams::<f64>::zeros(&cfg);
        let (fm, _) = forward_backbone(&cfg, &p, &vec![0.7; 64 * 64]).unwrap();
        assert!(fm.global.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_size_mismatch_and_nan() {
        let cfg = BackboneConfig::default();
        let mut p = BackboneParams::<f32>::init(&cfg, 1);
        assert!(matches!(forward_backbone(&cfg, &p, &[0.0; 10]), Err(OreoError::Shape(_))));
        p.blocks[2].weight.data[3] = f32::NAN;
        assert!(matches!(
            forward_backbone(&cfg, &p, &vec![0.0; 64 * 64]),
            Err(OreoError::NonFinite(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackboneConfig::default();
        cfg.image_size = 40;
        assert!(cfg.validate().is_err());
        cfg.image_size = 32;
        cfg.embedding_dim = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = BackboneConfig::default();
        let a = BackboneParams::<f32>::init(&cfg, 11);
        let b = BackboneParams::<f32>::init(&cfg, 11);
        let c = BackboneParams::<f32>::init(&cfg, 12);
        assert_eq!(a, b);
        let diff = a.blocks[1]
            .weight
            .data
            .iter()
            .zip(&c.blocks[1].weight.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 0.0);
    }
}
