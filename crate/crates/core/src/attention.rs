//! Top-down pathway: the self-attention mask on B₃, the complement mask on
//! B₂, and the fusion of global and local features into the template.
//!
//! Each level projects `t^g` to the map's channel count, broadcast-adds it
//! over the spatial grid, and runs a two-layer 1×1 head (c → c/2 → 1) whose
//! logistic output is the mask. Local features are spatial means of the
//! masked map: `A ⊙ B` on level 3 and `(1 − A) ⊙ B` on level 2.

use serde::Serialize;

use crate::backbone::{BackboneConfig, MapDims};
use crate::error::{OreoError, Result};
use crate::image_io::{self, GrayImage};
use crate::scalar::{sigmoid, Scalar};
use crate::seed::{self, tag};
use crate::tensor::{self, Linear};

/// Parameters of one attention level.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskHead<T> {
    /// `t^g` (length d) → map channels.
    pub project: Linear<T>,
    pub hidden: Linear<T>,
    /// Single output channel.
    pub output: Linear<T>,
}

impl<T: Scalar> MaskHead<T> {
    fn hidden_width(channels: usize) -> usize {
        (channels / 2).max(1)
    }

    pub fn zeros(channels: usize, d: usize) -> Self {
        let hw = Self::hidden_width(channels);
        MaskHead {
            project: Linear::zeros(channels, d),
            hidden: Linear::zeros(hw, channels),
            output: Linear::zeros(1, hw),
        }
    }

    pub fn init(channels: usize, d: usize, rng: &mut impl rand::Rng) -> Self {
        let hw = Self::hidden_width(channels);
        MaskHead {
            project: Linear::init(channels, d, 1.0, rng),
            hidden: Linear::init(hw, channels, 2.0, rng),
            output: Linear::init(1, hw, 1.0, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub level3: MaskHead<T>,
    pub level2: MaskHead<T>,
    /// concat(t^g, t^l₂, t^l₃) → d.
    pub fuse: Linear<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        let [_, c2, c3, _] = cfg.channels;
        let d = cfg.embedding_dim;
        AttentionParams {
            level3: MaskHead::zeros(c3, d),
            level2: MaskHead::zeros(c2, d),
            fuse: Linear::zeros(d, d + c2 + c3),
        }
    }

    pub fn init(cfg: &BackboneConfig, seed_root: u64) -> Self {
        let mut rng = seed::rng_for(seed_root, &[tag::INIT, 1]);
        let [_, c2, c3, _] = cfg.channels;
        let d = cfg.embedding_dim;
        AttentionParams {
            level3: MaskHead::init(c3, d, &mut rng),
            level2: MaskHead::init(c2, d, &mut rng),
            fuse: Linear::init(d, d + c2 + c3, 1.0, &mut rng),
        }
    }
}

/// Which way the mask weights the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// `A ⊙ B`
    Direct,
    /// `(1 − A) ⊙ B`
    Complement,
}

/// Output of one attention level plus what its backward pass needs.
#[derive(Debug, Clone)]
pub struct LevelOutput<T> {
    /// Single-channel mask, `side × side`, values in (0,1).
    pub mask: Vec<T>,
    pub local: Vec<T>,
    mode: MaskMode,
    fused_input: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    /// Per-pixel pooling weight (`A` or `1 − A`).
    weight: Vec<T>,
}

fn attend<T: Scalar>(
    head: &MaskHead<T>,
    global: &[T],
    map: &[T],
    dims: MapDims,
    mode: MaskMode,
) -> Result<LevelOutput<T>> {
    if map.len() != dims.len() {
        return Err(OreoError::Shape(format!("feature map has {} values, expected {}", map.len(), dims.len())));
    }
    if global.len() != head.project.in_dim() || head.project.out_dim() != dims.channels {
        return Err(OreoError::Shape(format!(
            "attention head expects t^g of length {} and {} channels, got {} and {}",
            head.project.in_dim(),
            head.project.out_dim(),
            global.len(),
            dims.channels
        )));
    }
    let plane = dims.plane();
    let shift = head.project.forward(global);
    let mut fused_input = map.to_vec();
    for (c, &s) in shift.iter().enumerate() {
        fused_input[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = *v + s);
    }
    let hidden_pre = head.hidden.forward_planes(&fused_input, plane);
    let hidden = tensor::relu(&hidden_pre);
    let logits = head.output.forward_planes(&hidden, plane);
    let (mask, weight): (Vec<T>, Vec<T>) = logits
        .iter()
        .map(|&l| {
            let a = sigmoid(l);
            // complement computed as σ(−l) so it stays accurate when a → 1
            let w = match mode {
                MaskMode::Direct => a,
                MaskMode::Complement => sigmoid(-l),
            };
            (a, w)
        })
        .unzip();
    let inv = T::one() / T::of_usize(plane);
    let local = (0..dims.channels)
        .map(|c| {
            map[c * plane..(c + 1) * plane]
                .iter()
                .zip(&weight)
                .fold(T::zero(), |acc, (&b, &w)| acc + b * w)
                * inv
        })
        .collect();
    Ok(LevelOutput {
        mask,
        local,
        mode,
        fused_input,
        hidden_pre,
        hidden,
        weight,
    })
}

/// Backward of one level: accumulates head gradients, returns
/// `(dL/dB, dL/dt^g)`.
fn attend_backward<T: Scalar>(
    head: &MaskHead<T>,
    global: &[T],
    map: &[T],
    dims: MapDims,
    out: &LevelOutput<T>,
    d_local: &[T],
    grads: &mut MaskHead<T>,
) -> (Vec<T>, Vec<T>) {
    let plane = dims.plane();
    let inv = T::one() / T::of_usize(plane);
    let mut d_map = vec![T::zero(); dims.len()];
    let mut d_weight = vec![T::zero(); plane];
    for c in 0..dims.channels {
        let g = d_local[c] * inv;
        let b = &map[c * plane..(c + 1) * plane];
        for ((dm, dw), (&bv, &w)) in d_map[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(d_weight.iter_mut())
            .zip(b.iter().zip(&out.weight))
        {
            *dm = g * w;
            *dw = *dw + g * bv;
        }
    }
    // weight = A or 1 − A; dA/dlogit = A(1 − A)
    let d_logits: Vec<T> = d_weight
        .iter()
        .zip(&out.mask)
        .map(|(&dw, &a)| {
            let da = match out.mode {
                MaskMode::Direct => dw,
                MaskMode::Complement => -dw,
            };
            da * a * (T::one() - a)
        })
        .collect();
    let mut d_hidden = head.output.backward_planes(&out.hidden, &d_logits, plane, &mut grads.output);
    tensor::relu_backward_inplace(&out.hidden_pre, &mut d_hidden);
    let d_fused = head.hidden.backward_planes(&out.fused_input, &d_hidden, plane, &mut grads.hidden);
    let mut d_shift = vec![T::zero(); dims.channels];
    for c in 0..dims.channels {
        let dz = &d_fused[c * plane..(c + 1) * plane];
        d_shift[c] = dz.iter().copied().sum();
        for (dm, &v) in d_map[c * plane..(c + 1) * plane].iter_mut().zip(dz) {
            *dm = *dm + v;
        }
    }
    let d_global = head.project.backward(global, &d_shift, &mut grads.project);
    (d_map, d_global)
}

/// Level-3 self-attention: `A₃ = σ(h₃(P₃ t^g ⊕ B₃))`, `t^l₃ = mean(A₃ ⊙ B₃)`.
pub fn attend_level3<T: Scalar>(
    params: &AttentionParams<T>,
    global: &[T],
    b3: &[T],
    dims: MapDims,
) -> Result<LevelOutput<T>> {
    attend(&params.level3, global, b3, dims, MaskMode::Direct)
}

/// Level-2 complement attention: `t^l₂ = mean((1 − A₂) ⊙ B₂)`.
pub fn attend_level2<T: Scalar>(
    params: &AttentionParams<T>,
    global: &[T],
    b2: &[T],
    dims: MapDims,
) -> Result<LevelOutput<T>> {
    attend(&params.level2, global, b2, dims, MaskMode::Complement)
}

pub fn attend_level3_backward<T: Scalar>(
    params: &AttentionParams<T>,
    global: &[T],
    b3: &[T],
    dims: MapDims,
    out: &LevelOutput<T>,
    d_local: &[T],
    grads: &mut AttentionParams<T>,
) -> (Vec<T>, Vec<T>) {
    attend_backward(&params.level3, global, b3, dims, out, d_local, &mut grads.level3)
}

pub fn attend_level2_backward<T: Scalar>(
    params: &AttentionParams<T>,
    global: &[T],
    b2: &[T],
    dims: MapDims,
    out: &LevelOutput<T>,
    d_local: &[T],
    grads: &mut AttentionParams<T>,
) -> (Vec<T>, Vec<T>) {
    attend_backward(&params.level2, global, b2, dims, out, d_local, &mut grads.level2)
}

/// `t = W_F · concat(t^g, t^l₂, t^l₃) + b_F`. Returns `(t, concat)`.
pub fn aggregate<T: Scalar>(
    params: &AttentionParams<T>,
    global: &[T],
    local2: &[T],
    local3: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let concat: Vec<T> = global.iter().chain(local2).chain(local3).copied().collect();
    if concat.len() != params.fuse.in_dim() {
        return Err(OreoError::Shape(format!(
            "fusion expects {} inputs, got {}",
            params.fuse.in_dim(),
            concat.len()
        )));
    }
    Ok((params.fuse.forward(&concat), concat))
}

/// Backward of [`aggregate`]: returns `(dt^g, dt^l₂, dt^l₃)`.
pub fn aggregate_backward<T: Scalar>(
    params: &AttentionParams<T>,
    concat: &[T],
    d_template: &[T],
    d: usize,
    c2: usize,
    grads: &mut AttentionParams<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dc = params.fuse.backward(concat, d_template, &mut grads.fuse);
    (dc[..d].to_vec(), dc[d..d + c2].to_vec(), dc[d + c2..].to_vec())
}

/// Attention masks for one image, at their native resolutions.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionMaps {
    pub a2: Vec<f64>,
    pub a2_side: usize,
    pub a3: Vec<f64>,
    pub a3_side: usize,
}

/// Bilinear upsampling of a square mask (corner-aligned sampling grid).
pub fn upsample_bilinear(mask: &[f64], side: usize, out: usize) -> Vec<f64> {
    assert_eq!(mask.len(), side * side, "mask size");
    let coord = |o: usize| -> (usize, usize, f64) {
        if out <= 1 || side <= 1 {
            return (0, 0, 0.0);
        }
        let s = o as f64 * (side - 1) as f64 / (out - 1) as f64;
        let i0 = (s.floor() as usize).min(side - 1);
        let i1 = (i0 + 1).min(side - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut res = Vec::with_capacity(out * out);
    for y in 0..out {
        let (y0, y1, fy) = coord(y);
        for x in 0..out {
            let (x0, x1, fx) = coord(x);
            let top = mask[y0 * side + x0] * (1.0 - fx) + mask[y0 * side + x1] * fx;
            let bot = mask[y1 * side + x0] * (1.0 - fx) + mask[y1 * side + x1] * fx;
            res.push(top * (1.0 - fy) + bot * fy);
        }
    }
    res
}

/// Renders a mask as an 8-bit raster: bilinear upsampling to
/// `out_size × out_size`, then `round_half_up(255 · v)`. With `normalize`,
/// values are first min–max stretched to [0,1] (a constant mask is left as is).
pub fn render_attention(mask: &[f64], side: usize, out_size: usize, normalize: bool) -> GrayImage {
    let mut up = upsample_bilinear(mask, side, out_size);
    if normalize {
        let lo = up.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = up.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            up.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        }
    }
    let data = up.iter().map(|&v| image_io::unit_to_u8(v)).collect();
    GrayImage::new(out_size, out_size, data)
}
