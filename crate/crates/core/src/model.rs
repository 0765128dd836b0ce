//! The full network: backbone, attention pathway, identity classifier and
//! attribute head, plus checkpoint serialization and the batched
//! loss/gradient evaluation shared by training and gradient checks.

use std::fs;
use std::path::Path;

use crate::attention::{self, AttentionMaps, AttentionParams, LevelOutput};
use crate::backbone::{self, BackboneCache, BackboneConfig, BackboneParams, FeatureMaps};
use crate::datagen::ImageSample;
use crate::error::{OreoError, Result};
use crate::losses::{self, LossBreakdown};
use crate::par;
use crate::scalar::Scalar;
use crate::seed::{self, tag};
use crate::tensor::{Linear, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OREOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: BackboneConfig,
    /// Attention pathway enabled; when false the template is `t^g`.
    pub oan: bool,
    pub backbone: BackboneParams<T>,
    pub attention: AttentionParams<T>,
    /// Identity classifier `C`: `n × d`.
    pub identity: Linear<T>,
    /// Attribute head `D`: `K × d`.
    pub attributes: Linear<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(config: &BackboneConfig, n_identities: usize, n_attributes: usize, oan: bool, seed_root: u64) -> Result<Self> {
        config.validate()?;
        if n_identities == 0 {
            return Err(OreoError::InvalidConfig("classifier needs at least one identity".into()));
        }
        let mut rng = seed::rng_for(seed_root, &[tag::INIT, 2]);
        let d = config.embedding_dim;
        Ok(ModelParams {
            config: config.clone(),
            oan,
            backbone: BackboneParams::init(config, seed_root),
            attention: AttentionParams::init(config, seed_root),
            identity: Linear::init(n_identities, d, 1.0, &mut rng),
            attributes: Linear::init(n_attributes, d, 1.0, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            oan: self.oan,
            backbone: BackboneParams::zeros(&self.config),
            attention: AttentionParams::zeros(&self.config),
            identity: Linear::zeros(self.identity.out_dim(), self.identity.in_dim()),
            attributes: Linear::zeros(self.attributes.out_dim(), self.attributes.in_dim()),
        }
    }

    /// Zeroed backbone and attention tensors with empty heads.
    fn trunk_zeros(&self) -> Self {
        ModelParams {
            config: self.config.clone(),
            oan: self.oan,
            backbone: BackboneParams::zeros(&self.config),
            attention: AttentionParams::zeros(&self.config),
            identity: Linear::zeros(0, 0),
            attributes: Linear::zeros(0, 0),
        }
    }

    pub fn n_identities(&self) -> usize {
        self.identity.out_dim()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.out_dim()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U> {
            config: self.config.clone(),
            oan: self.oan,
            backbone: BackboneParams::zeros(&self.config),
            attention: AttentionParams::zeros(&self.config),
            identity: Linear::zeros(self.identity.out_dim(), self.identity.in_dim()),
            attributes: Linear::zeros(self.attributes.out_dim(), self.attributes.in_dim()),
        };
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Every parameter tensor with its stable name, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for (k, b) in self.backbone.blocks.iter().enumerate() {
            out.push((format!("backbone.block{}.weight", k + 1), &b.weight));
            out.push((format!("backbone.block{}.bias", k + 1), &b.bias));
        }
        fn lin<'a, T>(name: &str, l: &'a Linear<T>, out: &mut Vec<(String, &'a Tensor<T>)>) {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        lin("backbone.embed", &self.backbone.embed, &mut out);
        for (lvl, head) in [("level3", &self.attention.level3), ("level2", &self.attention.level2)] {
            lin(&format!("attention.{lvl}.project"), &head.project, &mut out);
            lin(&format!("attention.{lvl}.hidden"), &head.hidden, &mut out);
            lin(&format!("attention.{lvl}.output"), &head.output, &mut out);
        }
        lin("attention.fuse", &self.attention.fuse, &mut out);
        lin("heads.identity", &self.identity, &mut out);
        lin("heads.attributes", &self.attributes, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (k, b) in self.backbone.blocks.iter_mut().enumerate() {
            out.push((format!("backbone.block{}.weight", k + 1), &mut b.weight));
            out.push((format!("backbone.block{}.bias", k + 1), &mut b.bias));
        }
        fn lin<'a, T>(name: &str, l: &'a mut Linear<T>, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
            out.push((format!("{name}.weight"), &mut l.weight));
            out.push((format!("{name}.bias"), &mut l.bias));
        }
        lin("backbone.embed", &mut self.backbone.embed, &mut out);
        let AttentionParams { level3, level2, fuse } = &mut self.attention;
        for (lvl, head) in [("level3", level3), ("level2", level2)] {
            lin(&format!("attention.{lvl}.project"), &mut head.project, &mut out);
            lin(&format!("attention.{lvl}.hidden"), &mut head.hidden, &mut out);
            lin(&format!("attention.{lvl}.output"), &mut head.output, &mut out);
        }
        lin("attention.fuse", fuse, &mut out);
        lin("heads.identity", &mut self.identity, &mut out);
        lin("heads.attributes", &mut self.attributes, &mut out);
        out
    }

    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: T) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = *v * k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Per-image forward state.
#[derive(Debug, Clone)]
pub struct ImageForward<T> {
    pub maps: FeatureMaps<T>,
    cache: BackboneCache<T>,
    pub level3: Option<LevelOutput<T>>,
    pub level2: Option<LevelOutput<T>>,
    concat: Vec<T>,
    pub template: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn forward_image(&self, pixels: &[f32]) -> Result<ImageForward<T>> {
        let (maps, cache) = backbone::forward_backbone(&self.config, &self.backbone, pixels)?;
        if !self.oan {
            let template = maps.global.clone();
            return Ok(ImageForward {
                maps,
                cache,
                level3: None,
                level2: None,
                concat: Vec::new(),
                template,
            });
        }
        let l3 = attention::attend_level3(&self.attention, &maps.global, &maps.blocks[2], maps.dims[2])?;
        let l2 = attention::attend_level2(&self.attention, &maps.global, &maps.blocks[1], maps.dims[1])?;
        let (template, concat) = attention::aggregate(&self.attention, &maps.global, &l2.local, &l3.local)?;
        Ok(ImageForward {
            maps,
            cache,
            level3: Some(l3),
            level2: Some(l2),
            concat,
            template,
        })
    }

    /// Back-propagates `dL/dt` through attention and backbone, accumulating
    /// into `grads` (head tensors are left untouched).
    pub fn backward_image(&self, fwd: &ImageForward<T>, d_template: &[T], grads: &mut ModelParams<T>) {
        let maps = &fwd.maps;
        let mut d_blocks: [Option<Vec<T>>; 4] = [None, None, None, None];
        let d_global = match (&fwd.level3, &fwd.level2) {
            (Some(l3), Some(l2)) => {
                let d = self.config.embedding_dim;
                let c2 = maps.dims[1].channels;
                let (mut d_g, d_l2, d_l3) =
                    attention::aggregate_backward(&self.attention, &fwd.concat, d_template, d, c2, &mut grads.attention);
                let (d_b3, d_g3) = attention::attend_level3_backward(
                    &self.attention,
                    &maps.global,
                    &maps.blocks[2],
                    maps.dims[2],
                    l3,
                    &d_l3,
                    &mut grads.attention,
                );
                let (d_b2, d_g2) = attention::attend_level2_backward(
                    &self.attention,
                    &maps.global,
                    &maps.blocks[1],
                    maps.dims[1],
                    l2,
                    &d_l2,
                    &mut grads.attention,
                );
                for ((g, a), b) in d_g.iter_mut().zip(d_g3).zip(d_g2) {
                    *g = *g + a + b;
                }
                d_blocks[2] = Some(d_b3);
                d_blocks[1] = Some(d_b2);
                d_g
            }
            _ => d_template.to_vec(),
        };
        backbone::backward_backbone(
            &self.config,
            &self.backbone,
            maps,
            &fwd.cache,
            &d_global,
            d_blocks,
            &mut grads.backbone,
        );
    }

    pub fn embed_image(&self, pixels: &[f32]) -> Result<Vec<T>> {
        Ok(self.forward_image(pixels)?.template)
    }

    /// A₂ and A₃ for one image; requires the attention pathway.
    pub fn attention_maps(&self, pixels: &[f32]) -> Result<AttentionMaps> {
        if !self.oan {
            return Err(OreoError::InvalidConfig(
                "model was trained without the attention pathway (oan=false); it has no attention masks".into(),
            ));
        }
        let fwd = self.forward_image(pixels)?;
        let (l2, l3) = (fwd.level2.expect("oan"), fwd.level3.expect("oan"));
        Ok(AttentionMaps {
            a2: l2.mask.iter().map(|v| v.as_f64()).collect(),
            a2_side: fwd.maps.dims[1].side,
            a3: l3.mask.iter().map(|v| v.as_f64()).collect(),
            a3_side: fwd.maps.dims[2].side,
        })
    }
}

/// Which objectives contribute to a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub attr_loss: bool,
    pub stl: bool,
    pub margin: f64,
}

/// Loss values and parameter gradients for one batch.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub losses: LossBreakdown,
    pub grads: ModelParams<T>,
}

/// Evaluates the objective and its gradient on a batch. With `pairs =
/// Some(P)` the batch is laid out as `P` non-occluded images followed by
/// their `P` occluded partners; the triplet loss needs this layout.
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    images: &[&ImageSample],
    pairs: Option<usize>,
    objective: &Objective,
) -> Result<StepOutput<T>> {
    if images.is_empty() {
        return Err(OreoError::Empty("empty batch".into()));
    }
    let fwds = par::try_map_range(images.len(), |i| params.forward_image(&images[i].pixels))?;
    let templates: Vec<Vec<T>> = fwds.iter().map(|f| f.template.clone()).collect();
    let labels: Vec<usize> = images.iter().map(|s| s.identity as usize).collect();

    let mut grads = params.zeros_like();
    let id_loss = losses::loss_identity(&templates, &labels, &params.identity)?;
    grads.identity = id_loss.grad;
    let mut d_t = id_loss.d_templates;

    let attributes = if objective.attr_loss {
        if params.n_attributes() == 0 {
            return Err(OreoError::InvalidConfig("attribute loss enabled but dataset has no attributes".into()));
        }
        let logits: Vec<Vec<T>> = templates.iter().map(|t| params.attributes.forward(t)).collect();
        let attr_labels: Vec<Vec<u8>> = images.iter().map(|s| s.attributes.clone()).collect();
        let a = losses::loss_attributes(&logits, &attr_labels)?;
        for ((t, dl), dt) in templates.iter().zip(&a.d_logits).zip(d_t.iter_mut()) {
            let back = params.attributes.backward(t, dl, &mut grads.attributes);
            dt.iter_mut().zip(back).for_each(|(x, y)| *x = *x + y);
        }
        Some(a.value.as_f64())
    } else {
        None
    };

    let triplet = if objective.stl {
        let p = pairs.ok_or_else(|| OreoError::InvalidConfig("triplet loss requires a paired batch".into()))?;
        if images.len() != 2 * p {
            return Err(OreoError::Shape(format!("paired batch of {p} pairs has {} images", images.len())));
        }
        let l = losses::loss_stl(&templates[..p], &templates[p..], T::from_f64_lossy(objective.margin))?;
        for (i, (dn, d_o)) in l.d_non_occluded.iter().zip(&l.d_occluded).enumerate() {
            d_t[i].iter_mut().zip(dn).for_each(|(x, &y)| *x = *x + y);
            d_t[p + i].iter_mut().zip(d_o).for_each(|(x, &y)| *x = *x + y);
        }
        Some(l.value.as_f64())
    } else {
        None
    };

    let per_image = par::map_range(images.len(), |i| {
        let mut g = params.trunk_zeros();
        params.backward_image(&fwds[i], &d_t[i], &mut g);
        g
    });
    // fixed-order reduction
    for g in &per_image {
        for ((name, dst), (_, src)) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            if !name.starts_with("heads.") {
                dst.add_assign(src);
            }
        }
    }

    Ok(StepOutput {
        losses: LossBreakdown {
            identity: id_loss.value.as_f64(),
            attributes,
            triplet,
        },
        grads,
    })
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serializes parameters: magic, version, tensor count, then for each
/// tensor its name (u32 length + UTF-8), rank, u32 dims and LE f32 data.
/// Two metadata tensors record the input size and the attention toggle.
pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let meta = [
        ("meta.image_size".to_string(), Tensor::<f32>::from_vec(&[1], vec![params.config.image_size as f32])),
        ("meta.oan".to_string(), Tensor::<f32>::from_vec(&[1], vec![if params.oan { 1.0 } else { 0.0 }])),
    ];
    let body: Vec<(String, Tensor<f32>)> = params.tensors().into_iter().map(|(n, t)| (n, t.cast())).collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, (meta.len() + body.len()) as u32);
    for (name, t) in meta.iter().chain(body.iter()) {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut buf, d as u32);
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    crate::image_io::write_all(path, &encode_checkpoint(params))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams<f32>> {
    let bad = |reason: String| OreoError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("missing OREOCKPT magic".into()));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32().ok_or_else(|| bad("truncated header".into()))?;
    let mut named = std::collections::BTreeMap::new();
    for _ in 0..count {
        let trunc = || bad("truncated tensor record".into());
        let nlen = r.u32().ok_or_else(trunc)? as usize;
        let name = std::str::from_utf8(r.take(nlen).ok_or_else(trunc)?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32().ok_or_else(trunc)? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Option<Vec<_>>>().ok_or_else(trunc)?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4).ok_or_else(trunc)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        named.insert(name, Tensor::from_vec(&shape, data));
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    let get = |name: &str| named.get(name).ok_or_else(|| bad(format!("missing tensor {name}")));
    let scalar = |name: &str| -> Result<f32> { Ok(get(name)?.data.first().copied().unwrap_or(0.0)) };
    let channels = [1, 2, 3, 4].map(|k| named.get(&format!("backbone.block{k}.weight")).map(|t| t.shape[0]));
    let channels = channels.iter().map(|c| c.ok_or_else(|| bad("missing backbone block".into()))).collect::<Result<Vec<_>>>()?;
    let config = BackboneConfig {
        channels: [channels[0], channels[1], channels[2], channels[3]],
        embedding_dim: get("backbone.embed.weight")?.shape[0],
        image_size: scalar("meta.image_size")? as usize,
    };
    config.validate()?;
    let n = get("heads.identity.weight")?.shape[0];
    let k = get("heads.attributes.weight")?.shape[0];
    let mut params = ModelParams::<f32> {
        config: config.clone(),
        oan: scalar("meta.oan")? != 0.0,
        backbone: BackboneParams::zeros(&config),
        attention: AttentionParams::zeros(&config),
        identity: Linear::zeros(n, config.embedding_dim),
        attributes: Linear::zeros(k, config.embedding_dim),
    };
    for (name, t) in params.tensors_mut() {
        let src = named.get(&name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if src.shape != t.shape {
            return Err(bad(format!("tensor {name} has shape {:?}, expected {:?}", src.shape, t.shape)));
        }
        *t = src.clone();
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|e| OreoError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
