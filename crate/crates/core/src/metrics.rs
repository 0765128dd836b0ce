//! Biometric measurement stack: cosine matching, closed-set CMC,
//! verification ROC (TAR@FAR), open-set TPIR@FPIR, set pooling, average
//! degradation (ADP), and McNemar's paired test.
//!
//! Ranking ties are broken by ascending gallery index. Operating points are
//! never interpolated; every query returns an achieved point of the curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::datagen::{split_by_attribute, AttributeSplit, Dataset};
use crate::error::{OreoError, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::seed::{self, tag};

/// Cosine similarity, evaluated in `f64`.
pub fn similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OreoError::Shape(format!("similarity of {}-d and {}-d vectors", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(OreoError::ZeroNorm("cosine similarity input".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Arithmetic mean of a set's templates (no normalization).
pub fn pool_set<T: Scalar>(templates: &[&[T]]) -> Result<Vec<T>> {
    let first = templates.first().ok_or_else(|| OreoError::Empty("cannot pool an empty set".into()))?;
    let d = first.len();
    let mut acc = vec![0.0f64; d];
    for t in templates {
        if t.len() != d {
            return Err(OreoError::Shape("templates in a set differ in length".into()));
        }
        for (a, &v) in acc.iter_mut().zip(t.iter()) {
            *a += v.as_f64();
        }
    }
    let n = templates.len() as f64;
    Ok(acc.into_iter().map(|v| T::from_f64_lossy(v / n)).collect())
}

/// Probe × gallery cosine scores.
pub fn score_matrix<T: Scalar>(gallery: &[Vec<T>], probes: &[Vec<T>]) -> Result<Vec<Vec<f64>>> {
    par::try_map_range(probes.len(), |p| gallery.iter().map(|g| similarity(&probes[p], g)).collect())
}

/// 1-based rank at which probe `p`'s identity first appears.
fn mated_rank(scores: &[f64], gallery_ids: &[u32], probe_id: u32) -> Option<usize> {
    gallery_ids
        .iter()
        .enumerate()
        .filter(|(_, &g)| g == probe_id)
        .map(|(m, _)| {
            let sm = scores[m];
            1 + scores
                .iter()
                .enumerate()
                .filter(|&(g, &s)| s > sm || (s == sm && g < m))
                .count()
        })
        .min()
}

/// Mated ranks for every probe from precomputed scores.
pub fn mated_ranks(scores: &[Vec<f64>], gallery_ids: &[u32], probe_ids: &[u32]) -> Result<Vec<usize>> {
    if scores.len() != probe_ids.len() {
        return Err(OreoError::Shape(format!("{} score rows for {} probes", scores.len(), probe_ids.len())));
    }
    scores
        .iter()
        .zip(probe_ids)
        .enumerate()
        .map(|(p, (row, &id))| {
            if row.len() != gallery_ids.len() {
                return Err(OreoError::Shape(format!("score row {p} has {} entries", row.len())));
            }
            mated_rank(row, gallery_ids, id)
                .ok_or_else(|| OreoError::Protocol(format!("probe {p} identity {id} is not enrolled in the gallery")))
        })
        .collect()
}

/// Identification rate at ranks `1..=max_rank` from precomputed scores.
pub fn cmc_from_scores(scores: &[Vec<f64>], gallery_ids: &[u32], probe_ids: &[u32], max_rank: usize) -> Result<Vec<f64>> {
    if probe_ids.is_empty() {
        return Err(OreoError::Empty("no probes".into()));
    }
    let ranks = mated_ranks(scores, gallery_ids, probe_ids)?;
    let n = ranks.len() as f64;
    Ok((1..=max_rank)
        .map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect())
}

/// Closed-set cumulative match characteristic.
pub fn cmc<T: Scalar>(
    gallery: &[Vec<T>],
    gallery_ids: &[u32],
    probes: &[Vec<T>],
    probe_ids: &[u32],
    max_rank: usize,
) -> Result<Vec<f64>> {
    if gallery.len() != gallery_ids.len() || probes.len() != probe_ids.len() {
        return Err(OreoError::Shape("embeddings and identity lists differ in length".into()));
    }
    let scores = score_matrix(gallery, probes)?;
    cmc_from_scores(&scores, gallery_ids, probe_ids, max_rank)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
    /// Accept when `score >= threshold`.
    pub threshold: f64,
}

/// Verification ROC over thresholds at every distinct score plus one just
/// above the maximum (accept nothing). Points are ordered by decreasing
/// threshold, so FAR and TAR are non-decreasing along the list.
pub fn roc_verification(scores: &[f64], genuine: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != genuine.len() {
        return Err(OreoError::Shape(format!("{} scores but {} labels", scores.len(), genuine.len())));
    }
    let n_gen = genuine.iter().filter(|&&g| g).count();
    let n_imp = genuine.len() - n_gen;
    if n_gen == 0 || n_imp == 0 {
        return Err(OreoError::Protocol("verification needs at least one genuine and one impostor pair".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(OreoError::NonFinite("verification scores".into()));
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(genuine.iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = order[0].0;
    let mut points = vec![RocPoint {
        far: 0.0,
        tar: 0.0,
        threshold: top.next_up(),
    }];
    let (mut g, mut i, mut k) = (0usize, 0usize, 0usize);
    while k < order.len() {
        let tau = order[k].0;
        while k < order.len() && order[k].0 == tau {
            if order[k].1 {
                g += 1;
            } else {
                i += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            far: i as f64 / n_imp as f64,
            tar: g as f64 / n_gen as f64,
            threshold: tau,
        });
    }
    Ok(points)
}

/// TAR at the lowest threshold whose FAR does not exceed `target`.
pub fn tar_at_far(roc: &[RocPoint], target: f64) -> RocPoint {
    roc.iter()
        .filter(|p| p.far <= target)
        .last()
        .copied()
        .unwrap_or(RocPoint {
            far: 0.0,
            tar: 0.0,
            threshold: f64::INFINITY,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetPoint {
    pub fpir: f64,
    pub tpir: f64,
    pub threshold: f64,
}

/// Open-set identification curve. A mated probe is a true positive at `τ`
/// when its top-1 gallery entry has the right identity and scores `≥ τ`; a
/// non-mated probe is a false positive when its top score is `≥ τ`.
pub fn open_set_curve(
    scores: &[Vec<f64>],
    gallery_ids: &[u32],
    probe_ids: &[u32],
    mated: &[bool],
) -> Result<Vec<OpenSetPoint>> {
    if scores.len() != probe_ids.len() || mated.len() != probe_ids.len() {
        return Err(OreoError::Shape("probe lists differ in length".into()));
    }
    let n_mated = mated.iter().filter(|&&m| m).count();
    let n_non = mated.len() - n_mated;
    if n_non == 0 {
        return Err(OreoError::Protocol("open-set evaluation needs at least one non-mated probe".into()));
    }
    if gallery_ids.is_empty() {
        return Err(OreoError::Empty("empty gallery".into()));
    }
    // (top score, counts as mated hit, is non-mated)
    let mut tops = Vec::with_capacity(scores.len());
    for (p, row) in scores.iter().enumerate() {
        if row.len() != gallery_ids.len() {
            return Err(OreoError::Shape(format!("score row {p} has {} entries", row.len())));
        }
        let in_gallery = gallery_ids.contains(&probe_ids[p]);
        if mated[p] != in_gallery {
            return Err(OreoError::Protocol(format!(
                "probe {p} is flagged {} but its identity is {} the gallery",
                if mated[p] { "mated" } else { "non-mated" },
                if in_gallery { "in" } else { "absent from" }
            )));
        }
        let mut best = 0;
        for (g, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = g;
            }
        }
        tops.push((row[best], mated[p] && gallery_ids[best] == probe_ids[p], !mated[p]));
    }
    tops.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![OpenSetPoint {
        fpir: 0.0,
        tpir: 0.0,
        threshold: tops[0].0.next_up(),
    }];
    let (mut tp, mut fp, mut k) = (0usize, 0usize, 0usize);
    while k < tops.len() {
        let tau = tops[k].0;
        while k < tops.len() && tops[k].0 == tau {
            tp += tops[k].1 as usize;
            fp += tops[k].2 as usize;
            k += 1;
        }
        curve.push(OpenSetPoint {
            fpir: fp as f64 / n_non as f64,
            tpir: if n_mated == 0 { 0.0 } else { tp as f64 / n_mated as f64 },
            threshold: tau,
        });
    }
    Ok(curve)
}

/// TPIR at the lowest threshold whose FPIR does not exceed `target`.
pub fn tpir_at_fpir(curve: &[OpenSetPoint], target: f64) -> OpenSetPoint {
    curve
        .iter()
        .filter(|p| p.fpir <= target)
        .last()
        .copied()
        .unwrap_or(OpenSetPoint {
            fpir: 0.0,
            tpir: 0.0,
            threshold: f64::INFINITY,
        })
}

pub const FPIR_TARGETS: [f64; 3] = [1e-1, 1e-2, 1e-3];
pub const FAR_TARGETS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// TPIR at each of [`FPIR_TARGETS`], keyed by the target's decimal string.
pub fn open_set_ident(
    scores: &[Vec<f64>],
    gallery_ids: &[u32],
    probe_ids: &[u32],
    mated: &[bool],
) -> Result<BTreeMap<String, OpenSetPoint>> {
    let curve = open_set_curve(scores, gallery_ids, probe_ids, mated)?;
    Ok(FPIR_TARGETS
        .iter()
        .map(|&t| (format!("{t}"), tpir_at_fpir(&curve, t)))
        .collect())
}

/// Average degradation: mean of `(rate_without − rate_with)` over
/// attributes, in the rates' own units (percentage points for %).
pub fn adp(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(OreoError::Empty("ADP over zero attributes".into()));
    }
    Ok(pairs.iter().map(|(without, with)| without - with).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: usize,
    /// A wrong, B correct.
    pub c: usize,
    /// Continuity-corrected chi-square, `max(|b−c|−1, 0)² / (b+c)`.
    pub statistic: f64,
    pub p_value: f64,
    /// p-value from the exact binomial test (used when `b + c < 25`).
    pub exact: bool,
}

/// McNemar's test on paired correctness vectors. Discordant counts below 25
/// use the exact two-sided binomial test; otherwise the continuity-corrected
/// chi-square with one degree of freedom. No discordant pairs gives p = 1.
pub fn mcnemar(correct_a: &[bool], correct_b: &[bool]) -> Result<McNemar> {
    if correct_a.len() != correct_b.len() {
        return Err(OreoError::Shape(format!(
            "paired predictions differ in length: {} vs {}",
            correct_a.len(),
            correct_b.len()
        )));
    }
    let b = correct_a.iter().zip(correct_b).filter(|(&a, &b)| a && !b).count();
    let c = correct_a.iter().zip(correct_b).filter(|(&a, &b)| !a && b).count();
    let n = b + c;
    if n == 0 {
        return Ok(McNemar {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
            exact: false,
        });
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let statistic = diff * diff / n as f64;
    let (p_value, exact) = if n < 25 {
        let k = b.min(c);
        let mut tail = 0.0;
        let mut coef = 1.0f64; // C(n, 0)
        for i in 0..=k {
            if i > 0 {
                coef = coef * (n - i + 1) as f64 / i as f64;
            }
            tail += coef;
        }
        ((2.0 * tail / 2f64.powi(n as i32)).min(1.0), true)
    } else {
        let chi = ChiSquared::new(1.0).expect("one degree of freedom");
        (chi.sf(statistic), false)
    };
    Ok(McNemar {
        b,
        c,
        statistic,
        p_value,
        exact,
    })
}

/// Per-attribute closed-set comparison of probes with and without the
/// attribute against a gallery of attribute-free images.
#[derive(Debug, Clone, Serialize)]
pub struct AttributeImpact {
    pub attribute: usize,
    pub name: String,
    pub eligible: usize,
    pub excluded: usize,
    pub cmc_with: Vec<f64>,
    pub cmc_without: Vec<f64>,
    /// Rank-1 identification rates in percent.
    pub rank1_with: f64,
    pub rank1_without: f64,
    /// Rank-1 correctness of the with-attribute probes, in split order.
    #[serde(skip)]
    pub correct_with: Vec<bool>,
    #[serde(skip)]
    pub correct_without: Vec<bool>,
    #[serde(skip)]
    pub split: Option<AttributeSplit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImpactReport {
    pub attributes: Vec<AttributeImpact>,
    /// Percentage points.
    pub adp: f64,
    /// Mean rank-1 of with-attribute probes, percent.
    pub mean_rank1_with: f64,
    pub mean_rank1_without: f64,
}

impl ImpactReport {
    /// `rank,rate_with,rate_without` rows for one attribute.
    pub fn curve_csv(&self, k: usize) -> String {
        let a = &self.attributes[k];
        let mut out = String::from("rank,rate_with,rate_without\n");
        for (r, (w, wo)) in a.cmc_with.iter().zip(&a.cmc_without).enumerate() {
            out.push_str(&format!("{},{},{}\n", r + 1, w, wo));
        }
        out
    }
}

/// For each attribute: split, match both probe sets against the shared
/// gallery, and collect CMCs; ADP is taken over the rank-1 drops.
pub fn attribute_impact_analysis(
    ds: &Dataset,
    embeddings: &[Vec<f32>],
    attributes: &[usize],
    max_rank: usize,
    seed_root: u64,
) -> Result<ImpactReport> {
    if embeddings.len() != ds.len() {
        return Err(OreoError::Shape(format!("{} embeddings for {} samples", embeddings.len(), ds.len())));
    }
    if attributes.is_empty() {
        return Err(OreoError::Empty("no attributes to analyze".into()));
    }
    let mut out = Vec::with_capacity(attributes.len());
    for &a in attributes {
        let split = split_by_attribute(ds, a, seed_root)?;
        let pick = |idx: &[usize]| -> (Vec<Vec<f32>>, Vec<u32>) {
            (
                idx.iter().map(|&i| embeddings[i].clone()).collect(),
                idx.iter().map(|&i| ds.samples[i].identity).collect(),
            )
        };
        let (g, gid) = pick(&split.gallery);
        let (pw, pwid) = pick(&split.probe_with);
        let (po, poid) = pick(&split.probe_without);
        let rank_cap = max_rank.min(g.len()).max(1);
        let sw = score_matrix(&g, &pw)?;
        let so = score_matrix(&g, &po)?;
        let cmc_with = cmc_from_scores(&sw, &gid, &pwid, rank_cap)?;
        let cmc_without = cmc_from_scores(&so, &gid, &poid, rank_cap)?;
        let correct_with = mated_ranks(&sw, &gid, &pwid)?.into_iter().map(|r| r == 1).collect();
        let correct_without = mated_ranks(&so, &gid, &poid)?.into_iter().map(|r| r == 1).collect();
        out.push(AttributeImpact {
            attribute: a,
            name: ds.attribute_names.get(a).cloned().unwrap_or_else(|| format!("attr_{a}")),
            eligible: split.eligible(),
            excluded: split.excluded.len(),
            rank1_with: 100.0 * cmc_with[0],
            rank1_without: 100.0 * cmc_without[0],
            cmc_with,
            cmc_without,
            correct_with,
            correct_without,
            split: Some(split),
        });
    }
    let pairs: Vec<(f64, f64)> = out.iter().map(|a| (a.rank1_without, a.rank1_with)).collect();
    let n = out.len() as f64;
    Ok(ImpactReport {
        adp: adp(&pairs)?,
        mean_rank1_with: out.iter().map(|a| a.rank1_with).sum::<f64>() / n,
        mean_rank1_without: out.iter().map(|a| a.rank1_without).sum::<f64>() / n,
        attributes: out,
    })
}

/// Evaluation output; absent sections are `null` in JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cmc: Option<Vec<f64>>,
    pub roc: Option<Vec<RocPoint>>,
    /// FPIR target → achieved point.
    pub tpir: Option<BTreeMap<String, OpenSetPoint>>,
    pub rank1: Option<f64>,
    pub adp: Option<f64>,
    pub mcnemar: Option<McNemar>,
    /// FAR target → achieved point (convenience view of `roc`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tar_at_far: Option<BTreeMap<String, RocPoint>>,
}

/// Gallery/probe selection over a list of templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Protocol {
    /// One entry per enrolled identity, ascending identity order.
    pub gallery: Vec<usize>,
    pub probes: Vec<usize>,
}

/// Enrols one `enrol`-eligible item per identity (seeded choice) and probes
/// with every `query`-eligible item of an enrolled identity other than the
/// enrolled one. The occlusion protocol is `enrol = !occluded`, `query =
/// occluded`.
pub fn build_protocol(identities: &[u32], enrol: &[bool], query: &[bool], seed_root: u64) -> Result<Protocol> {
    if enrol.len() != identities.len() || query.len() != identities.len() {
        return Err(OreoError::Shape("protocol flags differ in length from identities".into()));
    }
    let mut candidates: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &id) in identities.iter().enumerate() {
        if enrol[i] {
            candidates.entry(id).or_default().push(i);
        }
    }
    let mut chosen: BTreeMap<u32, usize> = BTreeMap::new();
    for (&id, c) in &candidates {
        let mut rng = seed::rng_for(seed_root, &[tag::PROTOCOL, id as u64]);
        chosen.insert(id, c[rng.random_range(0..c.len())]);
    }
    let probes: Vec<usize> = (0..identities.len())
        .filter(|&i| query[i] && chosen.get(&identities[i]).is_some_and(|&g| g != i))
        .collect();
    if chosen.len() < 2 {
        return Err(OreoError::Protocol(format!("only {} identities can be enrolled (need 2)", chosen.len())));
    }
    if probes.is_empty() {
        return Err(OreoError::Protocol("no probe matches an enrolled identity".into()));
    }
    Ok(Protocol {
        gallery: chosen.into_values().collect(),
        probes,
    })
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub report: MetricsReport,
    /// Rank-1 correctness per probe, in protocol order.
    pub correct: Vec<bool>,
}

/// Closed-set CMC and rank-1, verification ROC over every gallery × probe
/// score, and open-set TPIR with a seeded half of the gallery identities
/// withheld (their probes become non-mated).
pub fn evaluate_protocol<T: Scalar>(
    templates: &[Vec<T>],
    identities: &[u32],
    protocol: &Protocol,
    max_rank: usize,
    seed_root: u64,
) -> Result<ProtocolResult> {
    if templates.len() != identities.len() {
        return Err(OreoError::Shape(format!("{} templates for {} identities", templates.len(), identities.len())));
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<T>>, Vec<u32>) {
        (idx.iter().map(|&i| templates[i].clone()).collect(), idx.iter().map(|&i| identities[i]).collect())
    };
    let (g, gid) = pick(&protocol.gallery);
    let (p, pid) = pick(&protocol.probes);
    let scores = score_matrix(&g, &p)?;
    let cmc = cmc_from_scores(&scores, &gid, &pid, max_rank.clamp(1, g.len()))?;
    let correct: Vec<bool> = mated_ranks(&scores, &gid, &pid)?.into_iter().map(|r| r == 1).collect();

    let mut flat = Vec::with_capacity(scores.len() * g.len());
    let mut genuine = Vec::with_capacity(flat.capacity());
    for (row, &probe_id) in scores.iter().zip(&pid) {
        for (&s, &gallery_id) in row.iter().zip(&gid) {
            flat.push(s);
            genuine.push(gallery_id == probe_id);
        }
    }
    let roc = roc_verification(&flat, &genuine)?;
    let tar = FAR_TARGETS.iter().map(|&t| (format!("{t}"), tar_at_far(&roc, t))).collect();

    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(&mut seed::rng_for(seed_root, &[tag::PROTOCOL, u64::MAX]));
    let mut kept: Vec<usize> = order[..g.len().div_ceil(2)].to_vec();
    kept.sort_unstable();
    let kept_ids: Vec<u32> = kept.iter().map(|&k| gid[k]).collect();
    let open_scores: Vec<Vec<f64>> = scores.iter().map(|row| kept.iter().map(|&k| row[k]).collect()).collect();
    let mated: Vec<bool> = pid.iter().map(|id| kept_ids.contains(id)).collect();
    let tpir = if mated.iter().all(|&m| m) {
        None
    } else {
        Some(open_set_ident(&open_scores, &kept_ids, &pid, &mated)?)
    };

    Ok(ProtocolResult {
        report: MetricsReport {
            rank1: Some(cmc[0]),
            cmc: Some(cmc),
            roc: Some(roc),
            tpir,
            adp: None,
            mcnemar: None,
            tar_at_far: Some(tar),
        },
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_basics() {
        let v = [0.3f64, -1.2, 2.0];
        assert!((similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(similarity(&[0.0f64, 0.0], &[1.0, 0.0]), Err(OreoError::ZeroNorm(_))));
        assert!(similarity(&[1.0f64], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn pooling() {
        let v = [1.0f64, 2.0];
        assert_eq!(pool_set(&[&v[..]]).unwrap(), vec![1.0, 2.0]);
        let n = [-1.0f64, -2.0];
        let z = pool_set(&[&v[..], &n[..]]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert!(similarity(&z, &v).is_err());
        assert!(pool_set::<f64>(&[]).is_err());
    }

    #[test]
    fn cmc_hand_case() {
        // probe 0 matches at rank 2, probes 1 and 2 at rank 1
        let scores = vec![vec![0.9, 0.5, 0.1], vec![0.2, 0.8, 0.3], vec![0.1, 0.2, 0.7]];
        let c = cmc_from_scores(&scores, &[0, 1, 2], &[1, 1, 2], 3).unwrap();
        assert_eq!(c, vec![2.0 / 3.0, 1.0, 1.0]);
        assert!(cmc_from_scores(&scores, &[0, 1, 2], &[1, 5, 2], 3).is_err());
    }

    #[test]
    fn cmc_ties_use_gallery_index() {
        let scores = vec![vec![0.5, 0.5]];
        assert_eq!(cmc_from_scores(&scores, &[0, 1], &[1], 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(cmc_from_scores(&scores, &[0, 1], &[0], 2).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn roc_hand_case() {
        let roc = roc_verification(&[0.9, 0.8, 0.7, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(roc.len(), 5);
        let p = tar_at_far(&roc, 0.25);
        assert_eq!((p.far, p.tar, p.threshold), (0.0, 1.0, 0.8));
        let p = tar_at_far(&roc, 0.5);
        assert_eq!((p.far, p.tar, p.threshold), (0.5, 1.0, 0.7));
        assert!(roc_verification(&[0.1], &[true]).is_err());
    }

    #[test]
    fn open_set_extremes() {
        let scores = vec![vec![0.9, 0.1], vec![0.3, 0.6], vec![0.4, 0.2]];
        let curve = open_set_curve(&scores, &[0, 1], &[0, 0, 7], &[true, true, false]).unwrap();
        let first = curve[0];
        assert_eq!((first.fpir, first.tpir), (0.0, 0.0));
        let last = curve.last().unwrap();
        // vacuous threshold: TPIR = closed-set rank-1 of mated probes (1 of 2)
        assert_eq!((last.fpir, last.tpir), (1.0, 0.5));
        assert!(open_set_curve(&scores, &[0, 1], &[0, 0, 1], &[true, true, true]).is_err());
        assert!(open_set_curve(&scores, &[0, 1], &[0, 0, 1], &[true, true, false]).is_err());
    }

    #[test]
    fn adp_basics() {
        assert_eq!(adp(&[(80.0, 80.0), (70.0, 70.0)]).unwrap(), 0.0);
        assert!(adp(&[]).is_err());
    }

    #[test]
    fn mcnemar_cases() {
        let a: Vec<bool> = (0..10).map(|i| i < 9).collect();
        let b: Vec<bool> = (0..10).map(|i| i >= 9).collect();
        let r = mcnemar(&a, &b).unwrap();
        assert_eq!((r.b, r.c), (9, 1));
        assert_eq!(r.p_value, 0.021484375);
        let none = mcnemar(&[true, false], &[true, false]).unwrap();
        assert_eq!(none.p_value, 1.0);
        assert!(mcnemar(&[true], &[]).is_err());
        // b = c on the chi-square path: corrected difference clamps to zero
        let a: Vec<bool> = (0..60).map(|i| i < 30).collect();
        let b: Vec<bool> = (0..60).map(|i| i >= 30).collect();
        let r = mcnemar(&a, &b).unwrap();
        assert!(!r.exact);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }
}
