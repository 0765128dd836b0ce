//! Run configuration: one strict JSON document per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use oreo::backbone::BackboneConfig;
use oreo::datagen::{self, Dataset, SynthSpec};
use oreo::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::InputError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthSpec),
    Manifest {
        path: PathBuf,
        /// Attribute columns that mark an image as occluded (default: all).
        #[serde(default)]
        occlusion_subset: Option<Vec<usize>>,
    },
}

impl DataSource {
    pub fn load(&self) -> oreo::Result<Dataset> {
        match self {
            DataSource::Synth(spec) => datagen::generate_dataset(spec),
            DataSource::Manifest { path, occlusion_subset } => datagen::load_manifest(path, occlusion_subset.as_deref()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Non-occluded gallery image per identity; occluded probes.
    #[default]
    Occlusion,
    /// Any image may be enrolled or probe.
    All,
    /// Templates pooled per media set, then as `all`.
    Sets,
    /// Explicit verification pairs from `pairs`.
    Pairs,
}

fn default_max_rank() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub protocol: ProtocolKind,
    /// Attribute indices for `analyze`/`ablate` (default: all).
    #[serde(default)]
    pub attributes: Option<Vec<usize>>,
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
    #[serde(default)]
    pub seed: u64,
    /// CSV `a,b[,genuine]` of embedding indices, for the `pairs` protocol.
    #[serde(default)]
    pub pairs: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            protocol: ProtocolKind::default(),
            attributes: None,
            max_rank: default_max_rank(),
            seed: 0,
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// A second system's embeddings of the same images, for McNemar.
    #[serde(default)]
    pub compare_embeddings: Option<PathBuf>,
    /// Raster files for `render-attention`.
    #[serde(default)]
    pub images: Vec<PathBuf>,
    /// Default output directory when `--out` is absent.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSection {
    /// Stretch each mask to the full 0–255 range.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training data (and evaluation data when `eval_data` is absent).
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub eval_data: Option<DataSource>,
    #[serde(default)]
    pub model: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub render: RenderSection,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, InputError> {
        serde_json::from_str(text).map_err(|e| InputError(format!("config: {e}")))
    }

    /// Reads a config and resolves every relative path against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, InputError> {
        let text = fs::read_to_string(path).map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for src in [&mut self.data, &mut self.eval_data].into_iter().flatten() {
            if let DataSource::Manifest { path, .. } = src {
                fix(path);
            }
        }
        let p = &mut self.paths;
        for opt in [&mut p.checkpoint, &mut p.embeddings, &mut p.compare_embeddings, &mut p.out, &mut self.eval.pairs] {
            if let Some(x) = opt.as_mut() {
                fix(x);
            }
        }
        p.images.iter_mut().for_each(fix);
    }

    /// `--seed` replaces every seed: data generation, training, evaluation.
    pub fn override_seed(&mut self, seed: u64) {
        for src in [&mut self.data, &mut self.eval_data].into_iter().flatten() {
            if let DataSource::Synth(spec) = src {
                spec.seed = seed;
            }
        }
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn training_data(&self) -> Result<&DataSource, InputError> {
        self.data.as_ref().ok_or_else(|| InputError("config has no `data` section".into()))
    }

    pub fn evaluation_data(&self) -> Result<&DataSource, InputError> {
        self.eval_data.as_ref().map_or_else(|| self.training_data(), Ok)
    }

    pub fn required<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, InputError> {
        value.as_deref().ok_or_else(|| InputError(format!("config is missing `paths.{key}`")))
    }
}
