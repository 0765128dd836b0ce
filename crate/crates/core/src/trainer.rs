//! Optimization loop: sampler → model → losses → SGD with momentum, with
//! the OAN / OBS / STL ablation toggles.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::datagen::{Dataset, ImageSample};
use crate::error::{OreoError, Result};
use crate::losses::{LossBreakdown, DEFAULT_MARGIN};
use crate::model::{self, ModelParams, Objective};
use crate::par;
use crate::sampler::{self, SamplerState, UniformSampler};
use crate::tensor::Tensor;

fn default_epochs() -> usize {
    15
}
fn default_pairs() -> usize {
    8
}
fn default_lr() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.9
}
fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_clip() -> f64 {
    10.0
}
fn default_decay() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub oan: bool,
    #[serde(default)]
    pub obs: bool,
    #[serde(default)]
    pub stl: bool,
    #[serde(default)]
    pub attr_loss: bool,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Pairs per batch `P`; a batch holds `2P` images in every mode.
    #[serde(default = "default_pairs")]
    pub batch_pairs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write `ckpt_{step}.bin` every this many steps (0 = never).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Overrides the default epoch length.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    /// Step schedule: the learning rate is multiplied by `lr_decay` once
    /// each listed epoch (0-based) is reached. Empty = constant.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            oan: false,
            obs: false,
            stl: false,
            attr_loss: false,
            epochs: default_epochs(),
            batch_pairs: default_pairs(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            margin: default_margin(),
            seed: 0,
            checkpoint_every: 0,
            grad_clip: default_clip(),
            steps_per_epoch: None,
            lr_milestones: Vec::new(),
            lr_decay: default_decay(),
        }
    }
}

impl TrainConfig {
    /// All proposed components on.
    pub fn full(seed: u64) -> Self {
        TrainConfig {
            oan: true,
            obs: true,
            stl: true,
            attr_loss: true,
            seed,
            ..Default::default()
        }
    }

    pub fn baseline(seed: u64) -> Self {
        TrainConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OreoError::InvalidConfig(m.to_string()));
        if self.stl && !self.obs {
            return bad("stl requires obs: the triplet loss is defined on occlusion-balanced pairs");
        }
        if self.stl && self.batch_pairs < 2 {
            return bad("stl needs at least 2 pairs per batch");
        }
        if self.batch_pairs == 0 {
            return bad("batch_pairs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0,1)");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0,1]");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.lr_decay.powi(drops as i32)
    }

    pub fn objective(&self) -> Objective {
        Objective {
            attr_loss: self.attr_loss,
            stl: self.stl,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub losses: LossBreakdown,
}

impl LossRecord {
    pub fn total(&self) -> f64 {
        self.losses.total()
    }
}

/// Formats the loss log as `step,L_C,L_A,L_T,L`; inactive components are 0.
pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,L_C,L_A,L_T,L\n");
    for r in log {
        let l = &r.losses;
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.step,
            l.identity,
            l.attributes.unwrap_or(0.0),
            l.triplet.unwrap_or(0.0),
            l.total()
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub log: Vec<LossRecord>,
    pub steps_per_epoch: usize,
}

impl TrainOutcome {
    /// Mean of a per-record value over the records of `epoch` (0-based).
    pub fn epoch_mean(&self, epoch: usize, f: impl Fn(&LossRecord) -> f64) -> f64 {
        let s = self.steps_per_epoch;
        let recs = &self.log[epoch * s..((epoch + 1) * s).min(self.log.len())];
        recs.iter().map(f).sum::<f64>() / recs.len().max(1) as f64
    }
}

enum BatchSource {
    Balanced(SamplerState),
    Uniform(UniformSampler),
}

/// Steps per epoch: `N / 2P` batches, i.e. one pass worth of images, in
/// every mode so ablation cells see the same number of images. The balanced
/// sampler cycles its identity order as often as that requires.
fn epoch_length(ds: &Dataset, cfg: &TrainConfig) -> usize {
    cfg.steps_per_epoch.unwrap_or(ds.len() / (2 * cfg.batch_pairs)).max(1)
}

/// Trains a model. When `run_dir` is given, writes `loss.csv`, periodic
/// `ckpt_{step}.bin` and `final.bin` there.
pub fn train(ds: &Dataset, model_cfg: &BackboneConfig, cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    ds.validate()?;
    let (h, w) = ds.image_dims().expect("validated non-empty");
    if h != model_cfg.image_size || w != model_cfg.image_size {
        return Err(OreoError::Shape(format!(
            "dataset images are {h}x{w}, model expects {0}x{0}",
            model_cfg.image_size
        )));
    }
    if cfg.attr_loss && ds.n_attributes() == 0 {
        return Err(OreoError::InvalidConfig("attr_loss requires attribute labels".into()));
    }
    let p = cfg.batch_pairs;
    if !cfg.obs && 2 * p > ds.len() {
        return Err(OreoError::InvalidConfig(format!("batch of {} images exceeds dataset size {}", 2 * p, ds.len())));
    }

    let mut params = ModelParams::<f32>::init(model_cfg, ds.n_classes(), ds.n_attributes(), cfg.oan, cfg.seed)?;
    let mut source = if cfg.obs {
        let st = sampler::build_index(ds, cfg.seed)?;
        let rep = st.report();
        log::info!(
            "balanced sampler: {} eligible identities, {} ineligible, {} occluded / {} non-occluded images",
            rep.eligible,
            rep.ineligible.len(),
            rep.occluded_images,
            rep.non_occluded_images
        );
        if p > rep.eligible {
            return Err(OreoError::InvalidConfig(format!(
                "{p} pairs per batch but only {} eligible identities",
                rep.eligible
            )));
        }
        BatchSource::Balanced(st)
    } else {
        BatchSource::Uniform(UniformSampler::new(ds.len(), cfg.seed))
    };
    let steps_per_epoch = epoch_length(ds, cfg);
    let total_steps = steps_per_epoch * cfg.epochs;
    let objective = cfg.objective();
    let mut velocity = params.zeros_like();
    let mut log = Vec::with_capacity(total_steps);
    let mu = cfg.momentum as f32;

    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(|e| OreoError::io(dir, e))?;
    }

    for step in 1..=total_steps {
        let (indices, pairs) = match &mut source {
            BatchSource::Balanced(s) => {
                let b = s.next_batch(p)?;
                (b.layout(), Some(p))
            }
            BatchSource::Uniform(u) => (u.next_batch(2 * p)?, None),
        };
        let batch: Vec<&ImageSample> = indices.iter().map(|&i| &ds.samples[i]).collect();
        let out = model::loss_and_gradients(&params, &batch, pairs, &objective)?;
        let total = out.losses.total();
        if !total.is_finite() {
            return Err(OreoError::Diverged { step, value: total });
        }
        let mut grads = out.grads;
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(OreoError::Diverged { step, value: norm });
        }
        if norm > cfg.grad_clip {
            grads.scale((cfg.grad_clip / norm) as f32);
        }
        let lr = cfg.learning_rate_at((step - 1) / steps_per_epoch) as f32;
        sgd_momentum(&mut params, &mut velocity, &grads, lr, mu);
        log.push(LossRecord {
            step,
            losses: out.losses,
        });
        if step % steps_per_epoch == 0 {
            let e = step / steps_per_epoch;
            let recs = &log[log.len() - steps_per_epoch..];
            let mean = |f: fn(&LossRecord) -> f64| recs.iter().map(f).sum::<f64>() / recs.len() as f64;
            log::info!(
                "epoch {e}/{}: L={:.4} L_C={:.4}",
                cfg.epochs,
                mean(|r| r.total()),
                mean(|r| r.losses.identity)
            );
        }
        if let Some(dir) = run_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                model::save_checkpoint(&params, &dir.join(format!("ckpt_{step}.bin")))?;
            }
        }
    }

    if let Some(dir) = run_dir {
        let path = dir.join("loss.csv");
        fs::write(&path, loss_csv(&log)).map_err(|e| OreoError::io(&path, e))?;
        model::save_checkpoint(&params, &dir.join("final.bin"))?;
    }
    Ok(TrainOutcome {
        params,
        log,
        steps_per_epoch,
    })
}

/// `v ← μ v + g; θ ← θ − η v`, tensor by tensor in name order.
fn sgd_momentum(params: &mut ModelParams<f32>, velocity: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f32, mu: f32) {
    let step_one = |p: &mut Tensor<f32>, v: &mut Tensor<f32>, g: &Tensor<f32>| {
        for ((pv, vv), &gv) in p.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    };
    for (((_, p), (_, v)), (_, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(velocity.tensors_mut())
        .zip(grads.tensors())
    {
        step_one(p, v, g);
    }
}

/// One template per image, in dataset order.
pub fn embed(params: &ModelParams<f32>, ds: &Dataset) -> Result<Vec<Vec<f32>>> {
    if let Some((h, w)) = ds.image_dims() {
        if h != params.config.image_size || w != params.config.image_size {
            return Err(OreoError::Shape(format!(
                "dataset images are {h}x{w}, checkpoint expects {0}x{0}",
                params.config.image_size
            )));
        }
    }
    par::try_map_range(ds.len(), |i| params.embed_image(&ds.samples[i].pixels))
}
