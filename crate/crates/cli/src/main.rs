//! `oreo`: synthetic data, training, embedding, evaluation, attribute
//! impact analysis, the component ablation grid and attention rendering.
//!
//! Exit codes: 0 success, 1 internal error (e.g. training diverged),
//! 2 invalid input (bad config, malformed manifest, protocol violation).

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use oreo::ablation::{self, GridSpec};
use oreo::attention::render_attention;
use oreo::datagen;
use oreo::embedding_io::{self, SidecarRow};
use oreo::image_io;
use oreo::metrics::{self, MetricsReport, Protocol, ProtocolResult, RocPoint, FAR_TARGETS};
use oreo::model;
use oreo::trainer;
use oreo::OreoError;
use serde::Serialize;

use config::{DataSource, ProtocolKind, RunConfig};

/// A problem with what the user supplied; maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "oreo", version, about = "Occlusion-robust face embedding lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset(s) as PGM images plus manifest.
    Synth(Common),
    /// Train a model; writes config.json, loss.csv, checkpoints and final.bin.
    Train(Common),
    /// Embed the evaluation data with `paths.checkpoint`.
    Embed(Common),
    /// Evaluate `paths.embeddings` under the configured protocol.
    Eval(Common),
    /// Per-attribute impact analysis (CMC with/without each attribute, ADP).
    Analyze(Common),
    /// Train and evaluate the component grid.
    Ablate(Common),
    /// Write A2/A3 attention rasters for `paths.images`.
    RenderAttention(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `paths.out`, else the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run single-threaded.
    #[arg(long)]
    deterministic: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
        if let Some(o) = cause.downcast_ref::<OreoError>() {
            return if o.is_input_error() { 2 } else { 1 };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Synth(c) => ("synth", c),
        Command::Train(c) => ("train", c),
        Command::Embed(c) => ("embed", c),
        Command::Eval(c) => ("eval", c),
        Command::Analyze(c) => ("analyze", c),
        Command::Ablate(c) => ("ablate", c),
        Command::RenderAttention(c) => ("render-attention", c),
    };
    if common.deterministic {
        single_thread()?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    log::info!("oreo {name}: output in {}", out.display());
    match cli.command {
        Command::Synth(_) => cmd_synth(&cfg, &out),
        Command::Train(_) => cmd_train(&cfg, &out),
        Command::Embed(_) => cmd_embed(&cfg, &out),
        Command::Eval(_) => cmd_eval(&cfg, &out),
        Command::Analyze(_) => cmd_analyze(&cfg, &out),
        Command::Ablate(_) => cmd_ablate(&cfg, &out),
        Command::RenderAttention(_) => cmd_render_attention(&cfg, &out),
    }
}

#[cfg(feature = "parallel")]
fn single_thread() -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .context("configuring the thread pool")
}

#[cfg(not(feature = "parallel"))]
fn single_thread() -> Result<()> {
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut wrote = 0;
    for (src, sub) in [(cfg.data.as_ref(), "train"), (cfg.eval_data.as_ref(), "eval")] {
        let Some(DataSource::Synth(spec)) = src else { continue };
        let ds = datagen::generate_dataset(spec)?;
        let manifest = datagen::export_manifest(&ds, &out.join(sub))?;
        println!("{sub}: {} images of {} identities -> {}", ds.len(), ds.n_classes(), manifest.display());
        wrote += 1;
    }
    if wrote == 0 {
        return Err(InputError("synth needs a `data.synth` or `eval_data.synth` section".into()).into());
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = cfg.training_data()?.load()?;
    write_json(&out.join("config.json"), cfg)?;
    let run = trainer::train(&ds, &cfg.model, &cfg.train, Some(out))?;
    let last = cfg.train.epochs.saturating_sub(1);
    println!(
        "trained {} steps ({} per epoch); last-epoch mean L = {:.4}, L_C = {:.4}; checkpoint {}",
        run.log.len(),
        run.steps_per_epoch,
        run.epoch_mean(last, |r| r.total()),
        run.epoch_mean(last, |r| r.losses.identity),
        out.join("final.bin").display()
    );
    Ok(())
}

fn cmd_embed(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = model::load_checkpoint(cfg.required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let ds = cfg.evaluation_data()?.load()?;
    let rows = trainer::embed(&params, &ds)?;
    let path = out.join("embeddings.bin");
    embedding_io::write_embeddings(&path, &rows, &ds)?;
    println!(
        "{} embeddings of dim {} -> {}",
        rows.len(),
        params.config.embedding_dim,
        path.display()
    );
    Ok(())
}

/// Templates, identities and occlusion flags of one embedding file.
struct Embedded {
    rows: Vec<Vec<f32>>,
    sidecar: Vec<SidecarRow>,
}

impl Embedded {
    fn read(path: &Path) -> Result<Self> {
        let (rows, sidecar) = embedding_io::read_embeddings(path)?;
        Ok(Embedded { rows, sidecar })
    }

    fn identities(&self) -> Vec<u32> {
        self.sidecar.iter().map(|r| r.identity).collect()
    }

    fn occluded(&self) -> Vec<bool> {
        self.sidecar.iter().map(|r| r.occluded != 0).collect()
    }

    /// Mean template per media set, with the set's identity.
    fn pooled(&self) -> Result<(Vec<Vec<f32>>, Vec<u32>)> {
        let mut sets: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for r in &self.sidecar {
            if r.set_id.is_empty() {
                return Err(InputError(format!("embedding {} has no set_id", r.index)).into());
            }
            sets.entry(&r.set_id).or_default().push(r.index);
        }
        let mut templates = Vec::with_capacity(sets.len());
        let mut ids = Vec::with_capacity(sets.len());
        for (name, members) in sets {
            let id = self.sidecar[members[0]].identity;
            if members.iter().any(|&m| self.sidecar[m].identity != id) {
                return Err(OreoError::Protocol(format!("set {name} mixes identities")).into());
            }
            let refs: Vec<&[f32]> = members.iter().map(|&m| self.rows[m].as_slice()).collect();
            templates.push(metrics::pool_set(&refs)?);
            ids.push(id);
        }
        Ok((templates, ids))
    }
}

/// Runs one closed-set protocol kind; returns the result plus, for the
/// occlusion protocol, rank-1 of the non-occluded probes against the same
/// gallery.
fn closed_set(emb: &Embedded, kind: ProtocolKind, max_rank: usize, seed: u64) -> Result<(ProtocolResult, Option<f64>)> {
    match kind {
        ProtocolKind::Occlusion => {
            let ids = emb.identities();
            let occ = emb.occluded();
            let clear: Vec<bool> = occ.iter().map(|o| !o).collect();
            let with = metrics::build_protocol(&ids, &clear, &occ, seed)?;
            let result = metrics::evaluate_protocol(&emb.rows, &ids, &with, max_rank, seed)?;
            let without = Protocol {
                gallery: with.gallery.clone(),
                probes: (0..ids.len())
                    .filter(|&i| clear[i] && !with.gallery.contains(&i) && with.gallery.iter().any(|&g| ids[g] == ids[i]))
                    .collect(),
            };
            let rank1_without = if without.probes.is_empty() {
                None
            } else {
                let r = metrics::evaluate_protocol(&emb.rows, &ids, &without, max_rank, seed)?;
                r.report.rank1
            };
            Ok((result, rank1_without))
        }
        ProtocolKind::All => {
            let ids = emb.identities();
            let all = vec![true; ids.len()];
            let p = metrics::build_protocol(&ids, &all, &all, seed)?;
            Ok((metrics::evaluate_protocol(&emb.rows, &ids, &p, max_rank, seed)?, None))
        }
        ProtocolKind::Sets => {
            let (templates, ids) = emb.pooled()?;
            let all = vec![true; ids.len()];
            let p = metrics::build_protocol(&ids, &all, &all, seed)?;
            Ok((metrics::evaluate_protocol(&templates, &ids, &p, max_rank, seed)?, None))
        }
        ProtocolKind::Pairs => unreachable!("pairs are handled separately"),
    }
}

#[derive(serde::Deserialize)]
struct PairRow {
    a: usize,
    b: usize,
    #[serde(default)]
    genuine: Option<u8>,
}

fn verification_pairs(emb: &Embedded, pairs: &Path) -> Result<MetricsReport> {
    let mut rdr = csv::Reader::from_path(pairs).map_err(|e| InputError(format!("pairs file {}: {e}", pairs.display())))?;
    let (mut scores, mut genuine) = (Vec::new(), Vec::new());
    for (k, row) in rdr.deserialize::<PairRow>().enumerate() {
        let row = row.map_err(|e| InputError(format!("pairs file {} row {}: {e}", pairs.display(), k + 1)))?;
        let n = emb.rows.len();
        if row.a >= n || row.b >= n {
            return Err(InputError(format!("pair row {}: index out of range (have {n} embeddings)", k + 1)).into());
        }
        scores.push(metrics::similarity(&emb.rows[row.a], &emb.rows[row.b])?);
        genuine.push(match row.genuine {
            Some(g) => g != 0,
            None => emb.sidecar[row.a].identity == emb.sidecar[row.b].identity,
        });
    }
    let roc = metrics::roc_verification(&scores, &genuine)?;
    Ok(MetricsReport {
        tar_at_far: Some(tar_map(&roc)),
        roc: Some(roc),
        ..Default::default()
    })
}

fn tar_map(roc: &[RocPoint]) -> BTreeMap<String, RocPoint> {
    FAR_TARGETS.iter().map(|&t| (format!("{t}"), metrics::tar_at_far(roc, t))).collect()
}

fn read_comparison(cfg: &RunConfig, reference: &Embedded) -> Result<Option<Embedded>> {
    let Some(path) = &cfg.paths.compare_embeddings else { return Ok(None) };
    let other = Embedded::read(path)?;
    if other.identities() != reference.identities() {
        return Err(OreoError::Protocol("compared embedding files describe different images".into()).into());
    }
    Ok(Some(other))
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let emb = Embedded::read(cfg.required(&cfg.paths.embeddings, "embeddings")?)?;
    let ev = &cfg.eval;
    let report = if ev.protocol == ProtocolKind::Pairs {
        let pairs = ev
            .pairs
            .as_deref()
            .ok_or_else(|| InputError("the pairs protocol needs `eval.pairs`".into()))?;
        if cfg.paths.compare_embeddings.is_some() {
            log::warn!("McNemar needs identification decisions; ignoring compare_embeddings for pairs");
        }
        verification_pairs(&emb, pairs)?
    } else {
        let (result, rank1_without) = closed_set(&emb, ev.protocol, ev.max_rank, ev.seed)?;
        let mut report = result.report.clone();
        if let (Some(wo), Some(w)) = (rank1_without, report.rank1) {
            report.adp = Some(metrics::adp(&[(100.0 * wo, 100.0 * w)])?);
        }
        if let Some(other) = read_comparison(cfg, &emb)? {
            let (theirs, _) = closed_set(&other, ev.protocol, ev.max_rank, ev.seed)?;
            report.mcnemar = Some(metrics::mcnemar(&result.correct, &theirs.correct)?);
        }
        report
    };
    let path = out.join("report.json");
    write_json(&path, &report)?;
    if let Some(r1) = report.rank1 {
        println!("rank-1 {:.4}", r1);
    }
    for (far, p) in report.tar_at_far.iter().flatten() {
        println!("TAR@FAR={far}: {:.4} (achieved FAR {:.5})", p.tar, p.far);
    }
    println!("report -> {}", path.display());
    Ok(())
}

fn attribute_list(cfg: &RunConfig, k: usize) -> Vec<usize> {
    cfg.eval.attributes.clone().unwrap_or_else(|| (0..k).collect())
}

fn cmd_analyze(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = cfg.evaluation_data()?.load()?;
    let emb = Embedded::read(cfg.required(&cfg.paths.embeddings, "embeddings")?)?;
    let ids: Vec<u32> = ds.samples.iter().map(|s| s.identity).collect();
    if emb.identities() != ids {
        return Err(OreoError::Protocol("embedding file does not describe the evaluation dataset".into()).into());
    }
    let attrs = attribute_list(cfg, ds.n_attributes());
    let ev = &cfg.eval;
    let evaluation = ablation::evaluate_embeddings(&ds, &emb.rows, &attrs, ev.max_rank, ev.seed)?;
    let mut report = evaluation.report();
    if let Some(other) = read_comparison(cfg, &emb)? {
        let theirs = ablation::evaluate_embeddings(&ds, &other.rows, &attrs, ev.max_rank, ev.seed)?;
        let flat = |e: &ablation::Evaluation| -> Vec<bool> {
            e.impact.attributes.iter().flat_map(|a| a.correct_with.iter().copied()).collect()
        };
        report.mcnemar = Some(metrics::mcnemar(&flat(&evaluation), &flat(&theirs))?);
    }
    let curves = out.join("curves");
    fs::create_dir_all(&curves)?;
    for (k, a) in evaluation.impact.attributes.iter().enumerate() {
        fs::write(curves.join(format!("cmc_{}.csv", a.name)), evaluation.impact.curve_csv(k))?;
        println!(
            "{:<12} rank-1 with {:6.2}%  without {:6.2}%  ({} identities)",
            a.name, a.rank1_with, a.rank1_without, a.eligible
        );
    }
    println!("ADP {:.2}", evaluation.impact.adp);
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("impact.json"), &evaluation.impact)?;
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let train = cfg.training_data()?.load()?;
    let test = cfg.evaluation_data()?.load()?;
    let attrs = attribute_list(cfg, test.n_attributes());
    let spec = GridSpec {
        model: &cfg.model,
        base: &cfg.train,
        attributes: &attrs,
        max_rank: cfg.eval.max_rank,
        eval_seed: cfg.eval.seed,
    };
    write_json(&out.join("config.json"), cfg)?;
    let cells = ablation::run_grid(&train, &test, &spec, Some(out))?;
    let table = ablation::table_csv(&cells)?;
    fs::write(out.join("ablation.csv"), &table)?;
    write_json(&out.join("ablation.json"), &cells)?;
    print!("{table}");
    Ok(())
}

fn cmd_render_attention(cfg: &RunConfig, out: &Path) -> Result<()> {
    let params = model::load_checkpoint(cfg.required(&cfg.paths.checkpoint, "checkpoint")?)?;
    if cfg.paths.images.is_empty() {
        return Err(InputError("render-attention needs `paths.images`".into()).into());
    }
    let size = params.config.image_size;
    for path in &cfg.paths.images {
        let img = image_io::read_raster(path)?;
        if img.width != size || img.height != size {
            return Err(OreoError::Shape(format!(
                "{} is {}x{}, checkpoint expects {size}x{size}",
                path.display(),
                img.width,
                img.height
            ))
            .into());
        }
        let maps = params.attention_maps(&img.to_unit())?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| InputError(format!("cannot derive a file stem from {}", path.display())))?;
        for (tag, mask, side) in [("A2", &maps.a2, maps.a2_side), ("A3", &maps.a3, maps.a3_side)] {
            let raster = render_attention(mask, side, size, cfg.render.normalize);
            image_io::write_pgm(&out.join(format!("{stem}_{tag}.pgm")), &raster)?;
        }
    }
    println!("{} rasters -> {}", 2 * cfg.paths.images.len(), out.display());
    Ok(())
}
