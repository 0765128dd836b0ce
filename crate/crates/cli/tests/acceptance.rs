//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1–6 and 8 are deterministic and fail the test when violated.
//! Criteria 7 and 9 are seed-pinned training experiments; their lines are
//! reported but do not fail the run (see README).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use oreo::ablation;
use oreo::attention::upsample_bilinear;
use oreo::backbone::BackboneConfig;
use oreo::datagen::{generate_dataset, generate_with_masks, ImageSample, SynthSpec};
use oreo::gradcheck::{worst_relative_errors, TOLERANCE};
use oreo::losses::{loss_attributes, loss_identity, loss_stl};
use oreo::metrics::{adp, cmc_from_scores, mcnemar, open_set_curve, roc_verification, tar_at_far, tpir_at_fpir};
use oreo::model::{ModelParams, Objective};
use oreo::sampler::build_index;
use oreo::tensor::Linear;
use oreo::trainer::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

/// Writes straight to the stdout handle so the lines survive the test
/// harness's output capture and appear in a plain `cargo test` log.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").and_then(|_| out.flush()).expect("write to stdout");
}

fn line(k: usize, name: &str, o: &Outcome) {
    emit(&format!("{} criterion {k} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail));
}

fn criterion_1() -> Outcome {
    let reference = [(73.76, 66.79), (81.38, 63.14), (83.26, 80.85), (81.47, 78.91), (77.74, 65.60)];
    let candidate = [(74.65, 68.66), (81.99, 65.53), (84.72, 82.53), (83.13, 81.47), (80.02, 68.34)];
    let a = adp(&reference).unwrap();
    let b = adp(&candidate).unwrap();
    let two = |x: f64| (x * 100.0).round() / 100.0;
    let rel = 100.0 * (two(a) - two(b)) / two(a);
    let rel_raw = 100.0 * (a - b) / a;
    Outcome {
        pass: (a - 8.46).abs() <= 0.005 && (b - 7.60).abs() <= 0.005 && (rel - 10.17).abs() <= 0.05,
        detail: format!(
            "ADP {a:.4} / {b:.4} (target 8.46 / 7.60 ±0.005); relative {rel:.3}% from printed ADPs, {rel_raw:.3}% unrounded (target 10.17 ±0.05)"
        ),
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let ds = generate_dataset(&SynthSpec {
        image_size: 16,
        ..SynthSpec::new(6, 5, 0.4, 11)
    })
    .unwrap();
    let cfg = BackboneConfig {
        channels: [3, 4, 6, 8],
        embedding_dim: 8,
        image_size: 16,
    };
    let params = ModelParams::<f64>::init(&cfg, ds.n_classes(), ds.n_attributes(), true, 5).unwrap();
    let layout = build_index(&ds, 3).unwrap().next_batch(4).unwrap().layout();
    let batch: Vec<&ImageSample> = layout.iter().map(|&i| &ds.samples[i]).collect();
    let obj = Objective {
        attr_loss: true,
        stl: true,
        margin: 0.2,
    };
    let worst = worst_relative_errors(&params, &batch, Some(4), &obj, 12).unwrap();
    let groups = [
        ("backbone", "backbone."),
        ("h2", "attention.level2."),
        ("h3", "attention.level3."),
        ("G_F", "attention.fuse"),
        ("classifier", "heads.identity"),
        ("attribute head", "heads.attributes"),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, prefix) in groups {
        let errs: Vec<f64> = worst.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, e)| *e).collect();
        let e = errs.iter().copied().fold(0.0, f64::max);
        pass &= !errs.is_empty() && e <= TOLERANCE;
        parts.push(format!("{label} {e:.1e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    Outcome {
        pass,
        detail: format!("max rel. err {} (tol {TOLERANCE:.0e}); {secs:.1}s (< 60s)", parts.join(", ")),
    }
}

fn criterion_3() -> Outcome {
    let n = 7;
    let t = vec![vec![0.4, -1.2, 0.3]; 5];
    let lc = loss_identity(&t, &[0, 1, 2, 3, 6], &Linear::<f64>::zeros(n, 3)).unwrap().value;
    let k = 5;
    let la = loss_attributes(&vec![vec![0.0f64; k]; 4], &vec![vec![1, 0, 1, 1, 0]; 4]).unwrap().value;
    let m = 0.2;
    let e = |i: usize| (0..2).map(|j| (i == j) as u8 as f64).collect::<Vec<f64>>();
    let lt_ortho = loss_stl(&[e(0), e(1)], &[e(0), e(1)], m).unwrap().value;
    let same = vec![vec![0.3, 0.5, -0.1]; 2];
    let lt_same = loss_stl(&same, &same, m).unwrap().value;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut drift: f64 = 0.0;
    for _ in 0..50 {
        let mut v = || (0..4).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()).collect::<Vec<_>>();
        let (a, b) = (v(), v());
        let scale = |x: &[Vec<f64>], rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            x.iter()
                .map(|t| {
                    let s = 10f64.powf(rng.random_range(-2.0..2.0));
                    t.iter().map(|y| y * s).collect()
                })
                .collect()
        };
        let (sa, sb) = (scale(&a, &mut rng), scale(&b, &mut rng));
        drift = drift.max((loss_stl(&a, &b, m).unwrap().value - loss_stl(&sa, &sb, m).unwrap().value).abs());
    }
    let d_c = (lc - (n as f64).ln()).abs();
    let d_a = (la - k as f64 * 2f64.ln()).abs();
    Outcome {
        pass: d_c <= 1e-9 && d_a <= 1e-9 && lt_ortho == 0.0 && (lt_same - 2.0 * m).abs() <= 1e-12 && drift <= 1e-12,
        detail: format!(
            "|L_C−ln n| {d_c:.1e}, |L_A−K ln2| {d_a:.1e} (tol 1e-9); L_T ortho {lt_ortho}, identical {lt_same} (2m = {}); scale drift {drift:.1e} (tol 1e-12)",
            2.0 * m
        ),
    }
}

fn criterion_4() -> Outcome {
    let ds = generate_dataset(&SynthSpec::new(50, 10, 0.4, 4)).unwrap();
    let mut st = build_index(&ds, 4).unwrap();
    let p = 3;
    let mut violations = 0;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let batches = 1000;
    for _ in 0..batches {
        let b = st.next_batch(p).unwrap();
        let occ = b.layout().iter().filter(|&&i| ds.samples[i].occluded).count();
        violations += (occ != p || b.pairs.len() != p) as usize;
        for &(n, o) in &b.pairs {
            violations += (ds.samples[n].identity != ds.samples[o].identity) as usize;
        }
        for id in b.identities {
            *counts.entry(id).or_default() += 1.0;
        }
    }
    let ids = st.eligible().len() as f64;
    let expected = (batches * p) as f64 / ids;
    let chi2: f64 = st
        .eligible()
        .iter()
        .map(|pool| (counts.get(&pool.identity).copied().unwrap_or(0.0) - expected).powi(2) / expected)
        .sum();
    let pv = 1.0 - ChiSquared::new(ids - 1.0).unwrap().cdf(chi2);
    Outcome {
        pass: violations == 0 && pv > 0.01,
        detail: format!("{batches} batches of P={p}: {violations} violations; identity chi² {chi2:.2}, p = {pv:.3} (> 0.01)"),
    }
}

fn grid(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-10..=10) as f64 / 10.0
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = [0usize; 3];
    for _ in 0..50 {
        // CMC
        let g = rng.random_range(2..=10);
        let np = rng.random_range(1..=100 / g);
        let gallery: Vec<u32> = (0..g as u32).collect();
        let probes: Vec<u32> = (0..np).map(|_| rng.random_range(0..g as u32)).collect();
        let scores: Vec<Vec<f64>> = (0..np).map(|_| (0..g).map(|_| grid(&mut rng)).collect()).collect();
        let got = cmc_from_scores(&scores, &gallery, &probes, g).unwrap();
        let ranks: Vec<usize> = scores
            .iter()
            .zip(&probes)
            .map(|(row, &id)| {
                let mut order: Vec<usize> = (0..g).collect();
                order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                order.iter().position(|&x| gallery[x] == id).unwrap() + 1
            })
            .collect();
        let want: Vec<f64> = (1..=g).map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / np as f64).collect();
        mismatches[0] += (got != want) as usize;

        // TAR@FAR
        let n = rng.random_range(2..=100);
        let mut genuine: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        genuine[0] = true;
        genuine[1] = false;
        let s: Vec<f64> = (0..n).map(|_| grid(&mut rng)).collect();
        let roc = roc_verification(&s, &genuine).unwrap();
        let (ng, ni) = (genuine.iter().filter(|&&x| x).count() as f64, genuine.iter().filter(|&&x| !x).count() as f64);
        let mut taus = s.clone();
        taus.sort_by(|a, b| b.total_cmp(a));
        taus.dedup();
        for target in [0.001, 0.01, 0.1, 0.3] {
            let mut want = (0.0, 0.0);
            for &t in &taus {
                let far = s.iter().zip(&genuine).filter(|(&v, &gn)| !gn && v >= t).count() as f64 / ni;
                let tar = s.iter().zip(&genuine).filter(|(&v, &gn)| gn && v >= t).count() as f64 / ng;
                if far <= target {
                    want = (far, tar);
                }
            }
            let p = tar_at_far(&roc, target);
            mismatches[1] += ((p.far, p.tar) != want) as usize;
        }

        // TPIR@FPIR
        let g = rng.random_range(2..=8);
        let np = rng.random_range(2..=100 / g);
        let gallery: Vec<u32> = (0..g as u32).collect();
        let mut probes: Vec<u32> = (0..np).map(|_| rng.random_range(0..2 * g as u32)).collect();
        probes[0] = g as u32;
        let mated: Vec<bool> = probes.iter().map(|&id| id < g as u32).collect();
        let scores: Vec<Vec<f64>> = (0..np).map(|_| (0..g).map(|_| grid(&mut rng)).collect()).collect();
        let curve = open_set_curve(&scores, &gallery, &probes, &mated).unwrap();
        let nm = mated.iter().filter(|&&x| x).count() as f64;
        let nn = np as f64 - nm;
        let tops: Vec<(f64, usize)> = scores
            .iter()
            .map(|r| {
                let b = (0..g).fold(0, |b, k| if r[k] > r[b] { k } else { b });
                (r[b], b)
            })
            .collect();
        let mut taus: Vec<f64> = tops.iter().map(|t| t.0).collect();
        taus.sort_by(|a, b| b.total_cmp(a));
        taus.dedup();
        for target in [0.001, 0.01, 0.1, 0.5] {
            let mut want = (0.0, 0.0);
            for &t in &taus {
                let fp = tops.iter().zip(&mated).filter(|(x, &m)| !m && x.0 >= t).count() as f64;
                let tp = tops
                    .iter()
                    .enumerate()
                    .filter(|(k, x)| mated[*k] && x.0 >= t && gallery[x.1] == probes[*k])
                    .count() as f64;
                if fp / nn <= target {
                    want = (fp / nn, if nm == 0.0 { 0.0 } else { tp / nm });
                }
            }
            let p = tpir_at_fpir(&curve, target);
            mismatches[2] += ((p.fpir, p.tpir) != want) as usize;
        }
    }
    Outcome {
        pass: mismatches == [0, 0, 0],
        detail: format!(
            "50 random instances each: CMC {} / TAR@FAR {} / TPIR@FPIR {} mismatches vs brute force (exact)",
            mismatches[0], mismatches[1], mismatches[2]
        ),
    }
}

fn criterion_6() -> Outcome {
    let a: Vec<bool> = (0..10).map(|k| k < 9).collect();
    let b: Vec<bool> = (0..10).map(|k| k >= 9).collect();
    let r = mcnemar(&a, &b).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut asym = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..300);
        let (pa, pb) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let x: Vec<bool> = (0..n).map(|_| rng.random_bool(pa)).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(pb)).collect();
        asym += (mcnemar(&x, &y).unwrap().p_value != mcnemar(&y, &x).unwrap().p_value) as usize;
    }
    Outcome {
        pass: (r.b, r.c) == (9, 1) && r.p_value == 0.021484375 && asym == 0,
        detail: format!("b=9,c=1 → p = {} (expected 0.021484375 exactly); {asym}/20 asymmetric cases", r.p_value),
    }
}

struct RunResult {
    adp: f64,
    rank1_with: f64,
    params: Option<ModelParams<f32>>,
}

fn reference_spec(seed: u64) -> (SynthSpec, SynthSpec) {
    let train = SynthSpec::new(200, 20, 0.4, seed);
    let test = SynthSpec {
        image_offset: 20,
        ..train.clone()
    };
    (train, test)
}

fn criterion_7(seeds: &[u64]) -> (Outcome, Option<ModelParams<f32>>) {
    let t = Instant::now();
    let model = BackboneConfig::default();
    let mut rows = Vec::new();
    let mut keep = None;
    for &seed in seeds {
        let (train_spec, test_spec) = reference_spec(seed);
        let train_ds = generate_dataset(&train_spec).unwrap();
        let test_ds = generate_dataset(&test_spec).unwrap();
        let attrs: Vec<usize> = (0..test_ds.n_attributes()).collect();
        let run = |cfg: TrainConfig| -> RunResult {
            let out = train(&train_ds, &model, &cfg, None).unwrap();
            let e = ablation::evaluate(&out.params, &test_ds, &attrs, 10, seed).unwrap();
            RunResult {
                adp: e.impact.adp,
                rank1_with: e.impact.mean_rank1_with,
                params: Some(out.params),
            }
        };
        let base = run(TrainConfig::baseline(seed));
        let mut full = run(TrainConfig::full(seed));
        emit(&format!(
            "  seed {seed}: ADP baseline {:.2} full {:.2}; occluded rank-1 baseline {:.2}% full {:.2}%",
            base.adp, full.adp, base.rank1_with, full.rank1_with
        ));
        if seed == seeds[0] {
            keep = full.params.take();
        }
        rows.push((base, full));
    }
    let wins = rows.iter().filter(|(b, f)| f.adp < b.adp).count();
    let n = rows.len() as f64;
    let gain = rows.iter().map(|(b, f)| f.rank1_with - b.rank1_with).sum::<f64>() / n;
    let mins = t.elapsed().as_secs_f64() / 60.0;
    (
        Outcome {
            pass: wins >= 4 && gain >= 2.0 && mins <= 45.0,
            detail: format!(
                "full ADP < baseline ADP in {wins}/{} seeds (need ≥ 4); mean occluded rank-1 change {gain:+.2} points (need ≥ +2); {mins:.1} min (≤ 45)",
                rows.len()
            ),
        },
        keep,
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "data": {"synth": {"n_identities": 20, "images_per_identity": 10, "occluded_fraction": 0.4,
                            "image_size": 32, "seed": 8}},
        "model": {"channels": [8, 16, 32, 64], "embedding_dim": 32, "image_size": 32},
        "train": {"epochs": 2, "steps_per_epoch": 6, "batch_pairs": 4, "checkpoint_every": 4, "seed": 8},
    });
    let path = dir.path().join("train.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let run = |out: &Path| {
        let st = Command::new(env!("CARGO_BIN_EXE_oreo"))
            .args(["train", "--deterministic", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    let files = ["final.bin", "ckpt_4.bin", "ckpt_8.bin", "ckpt_12.bin", "loss.csv"];
    let same = files
        .iter()
        .filter(|f| {
            let x = fs::read(a.join(f)).unwrap();
            x == fs::read(b.join(f)).unwrap()
        })
        .count();
    Outcome {
        pass: same == files.len(),
        detail: format!("{same}/{} files byte-identical across two `oreo train --deterministic` runs", files.len()),
    }
}

fn criterion_9(params: &ModelParams<f32>, seed: u64) -> Outcome {
    let (_, test_spec) = reference_spec(seed);
    let faces = generate_with_masks(&test_spec).unwrap();
    let size = test_spec.image_size;
    let (mut good, mut n) = (0, 0);
    for f in faces.iter().filter(|f| f.sample.occluded && f.occluder_mask.iter().any(|&o| o)) {
        let maps = params.attention_maps(&f.sample.pixels).unwrap();
        let up = upsample_bilinear(&maps.a2, maps.a2_side, size);
        let (mut so, mut no, mut sf, mut nf) = (0.0, 0usize, 0.0, 0usize);
        for (i, &a) in up.iter().enumerate() {
            if f.occluder_mask[i] {
                so += a;
                no += 1;
            } else if f.face_mask[i] {
                sf += a;
                nf += 1;
            }
        }
        n += 1;
        good += (so / no as f64 > sf / nf.max(1) as f64) as usize;
    }
    let frac = good as f64 / n as f64;
    Outcome {
        pass: frac >= 0.7,
        detail: format!(
            "mean A₂ on occluder > on visible face for {good}/{n} occluded test images = {:.1}% (need ≥ 70%; seed-{seed} full model)",
            100.0 * frac
        ),
    }
}

#[test]
fn acceptance() {
    let mut hard_failures = Vec::new();
    let mut check = |k: usize, name: &str, o: Outcome, hard: bool| {
        line(k, name, &o);
        if hard && !o.pass {
            hard_failures.push(k);
        }
    };
    check(1, "ADP oracle", criterion_1(), true);
    check(2, "gradient suite", criterion_2(), true);
    check(3, "loss identities", criterion_3(), true);
    check(4, "sampler balance", criterion_4(), true);
    check(5, "metric oracle equivalence", criterion_5(), true);
    check(6, "McNemar", criterion_6(), true);
    let seeds = [1, 2, 3, 4, 5];
    let (o7, reference) = criterion_7(&seeds);
    check(7, "end-to-end generalization", o7, false);
    check(8, "reproducibility", criterion_8(), true);
    check(9, "attention sanity", criterion_9(reference.as_ref().unwrap(), seeds[0]), false);
    assert!(hard_failures.is_empty(), "criteria failed: {hard_failures:?}");
}
