//! The component grid {baseline, +OAN, +OBS, +OBS+STL, +OAN+OBS+STL} and
//! the evaluation shared by `eval`, `analyze` and `ablate`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::backbone::BackboneConfig;
use crate::datagen::Dataset;
use crate::error::{OreoError, Result};
use crate::metrics::{self, ImpactReport, MetricsReport, ProtocolResult, FAR_TARGETS};
use crate::model::ModelParams;
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cell {
    Baseline,
    Oan,
    Obs,
    ObsStl,
    Full,
}

impl Cell {
    pub const ALL: [Cell; 5] = [Cell::Baseline, Cell::Oan, Cell::Obs, Cell::ObsStl, Cell::Full];

    pub fn name(self) -> &'static str {
        match self {
            Cell::Baseline => "baseline",
            Cell::Oan => "+OAN",
            Cell::Obs => "+OBS",
            Cell::ObsStl => "+OBS+STL",
            Cell::Full => "+OAN+OBS+STL",
        }
    }

    /// Sets the three toggles on top of `base`. The attribute loss travels
    /// with OAN: it is what guides the level-2 mask.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let (oan, obs, stl) = match self {
            Cell::Baseline => (false, false, false),
            Cell::Oan => (true, false, false),
            Cell::Obs => (false, true, false),
            Cell::ObsStl => (false, true, true),
            Cell::Full => (true, true, true),
        };
        TrainConfig {
            oan,
            obs,
            stl,
            attr_loss: oan,
            ..base.clone()
        }
    }
}

/// Held-out evaluation of one model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub impact: ImpactReport,
    /// Occlusion protocol: non-occluded gallery, occluded probes.
    pub occlusion: ProtocolResult,
}

impl Evaluation {
    /// The occlusion-protocol report with the attribute ADP filled in.
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            adp: Some(self.impact.adp),
            ..self.occlusion.report.clone()
        }
    }
}

pub fn evaluate_embeddings(
    test: &Dataset,
    embeddings: &[Vec<f32>],
    attributes: &[usize],
    max_rank: usize,
    seed: u64,
) -> Result<Evaluation> {
    let impact = metrics::attribute_impact_analysis(test, embeddings, attributes, max_rank, seed)?;
    let ids: Vec<u32> = test.samples.iter().map(|s| s.identity).collect();
    let occluded: Vec<bool> = test.samples.iter().map(|s| s.occluded).collect();
    let enrol: Vec<bool> = occluded.iter().map(|o| !o).collect();
    let protocol = metrics::build_protocol(&ids, &enrol, &occluded, seed)?;
    let occlusion = metrics::evaluate_protocol(embeddings, &ids, &protocol, max_rank, seed)?;
    Ok(Evaluation { impact, occlusion })
}

pub fn evaluate(
    params: &ModelParams<f32>,
    test: &Dataset,
    attributes: &[usize],
    max_rank: usize,
    seed: u64,
) -> Result<Evaluation> {
    let emb = trainer::embed(params, test)?;
    evaluate_embeddings(test, &emb, attributes, max_rank, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub cell: String,
    pub oan: bool,
    pub obs: bool,
    pub stl: bool,
    pub attr_loss: bool,
    pub steps: usize,
    pub final_epoch_loss: f64,
    pub mean_rank1_with: f64,
    pub mean_rank1_without: f64,
    pub report: MetricsReport,
}

/// Evaluation knobs for the grid.
#[derive(Debug, Clone)]
pub struct GridSpec<'a> {
    pub model: &'a BackboneConfig,
    pub base: &'a TrainConfig,
    pub attributes: &'a [usize],
    pub max_rank: usize,
    pub eval_seed: u64,
}

/// Trains every cell with the same seed and evaluates on `test`. McNemar
/// compares each cell's occluded-probe rank-1 decisions with the baseline's
/// (the baseline row carries none). `run_root`, when given, receives one
/// run directory per cell.
pub fn run_grid(train: &Dataset, test: &Dataset, spec: &GridSpec, run_root: Option<&Path>) -> Result<Vec<CellReport>> {
    let mut out = Vec::with_capacity(Cell::ALL.len());
    let mut baseline_correct: Option<Vec<bool>> = None;
    for (k, cell) in Cell::ALL.into_iter().enumerate() {
        let cfg = cell.apply(spec.base);
        log::info!("ablation cell {}/{}: {}", k + 1, Cell::ALL.len(), cell.name());
        let dir = run_root.map(|r| r.join(format!("cell_{k}")));
        let trained = trainer::train(train, spec.model, &cfg, dir.as_deref())?;
        let eval = evaluate(&trained.params, test, spec.attributes, spec.max_rank, spec.eval_seed)?;
        let mut report = eval.report();
        match &baseline_correct {
            None => baseline_correct = Some(eval.occlusion.correct.clone()),
            Some(base) => report.mcnemar = Some(metrics::mcnemar(base, &eval.occlusion.correct)?),
        }
        let last_epoch = cfg.epochs.saturating_sub(1);
        out.push(CellReport {
            cell: cell.name().to_string(),
            oan: cfg.oan,
            obs: cfg.obs,
            stl: cfg.stl,
            attr_loss: cfg.attr_loss,
            steps: trained.log.len(),
            final_epoch_loss: trained.epoch_mean(last_epoch, |r| r.total()),
            mean_rank1_with: eval.impact.mean_rank1_with,
            mean_rank1_without: eval.impact.mean_rank1_without,
            report,
        });
    }
    Ok(out)
}

/// Component table: one row per cell with the toggles, TAR at each FAR
/// target, closed-set rank-1 on occluded probes, ADP and the McNemar p-value
/// against the baseline.
pub fn table_csv(cells: &[CellReport]) -> Result<String> {
    let mut s = String::from("cell,oan,obs,stl");
    for t in FAR_TARGETS {
        let _ = write!(s, ",tar_at_far_{t}");
    }
    s.push_str(",rank1_occluded,adp,mcnemar_p\n");
    for c in cells {
        let tar = c
            .report
            .tar_at_far
            .as_ref()
            .ok_or_else(|| OreoError::Protocol(format!("cell {} has no verification results", c.cell)))?;
        let _ = write!(s, "{},{},{},{}", c.cell, c.oan as u8, c.obs as u8, c.stl as u8);
        for t in FAR_TARGETS {
            let _ = write!(s, ",{}", tar.get(&format!("{t}")).map_or(f64::NAN, |p| p.tar));
        }
        let _ = writeln!(
            s,
            ",{},{},{}",
            c.report.rank1.unwrap_or(f64::NAN),
            c.report.adp.unwrap_or(f64::NAN),
            c.report.mcnemar.map_or(String::new(), |m| m.p_value.to_string())
        );
    }
    Ok(s)
}
