use std::collections::BTreeMap;

use oreo::datagen::{generate_dataset, SynthSpec};
use oreo::sampler::build_index;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn fifty_identities_all_eligible_by_recount() {
    let ds = generate_dataset(&SynthSpec::new(50, 10, 0.4, 1)).unwrap();
    let st = build_index(&ds, 0).unwrap();
    let recount = ds
        .identities()
        .into_iter()
        .filter(|&id| {
            let imgs: Vec<_> = ds.samples.iter().filter(|s| s.identity == id).collect();
            imgs.iter().any(|s| s.occluded) && imgs.iter().any(|s| !s.occluded)
        })
        .count();
    assert_eq!(st.report().eligible, recount);
    assert_eq!(recount, 50);
    assert_eq!(st.report().occluded_images, 200);
}

#[test]
fn thousand_batches_are_balanced() {
    let ds = generate_dataset(&SynthSpec {
        image_size: 16,
        ..SynthSpec::new(20, 6, 0.4, 3)
    })
    .unwrap();
    let mut st = build_index(&ds, 5).unwrap();
    let p = 6;
    let mut violations = 0;
    for _ in 0..1000 {
        let b = st.next_batch(p).unwrap();
        let idx = b.layout();
        let occ = idx.iter().filter(|&&i| ds.samples[i].occluded).count();
        violations += (occ != p) as usize;
        violations += (idx.len() != 2 * p) as usize;
        for &(n, o) in &b.pairs {
            violations += (ds.samples[n].identity != ds.samples[o].identity) as usize;
            violations += ds.samples[n].occluded as usize + (!ds.samples[o].occluded) as usize;
        }
        let mut ids = b.identities.clone();
        ids.sort_unstable();
        ids.dedup();
        violations += (ids.len() != p) as usize;
    }
    assert_eq!(violations, 0);
}

#[test]
fn identity_selection_is_uniform() {
    let ds = generate_dataset(&SynthSpec {
        image_size: 16,
        ..SynthSpec::new(10, 5, 0.4, 8)
    })
    .unwrap();
    let mut st = build_index(&ds, 77).unwrap();
    // P = 3 leaves a remainder of one identity per epoch, so counts are
    // not forced equal by construction.
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let batches = 10_000;
    for _ in 0..batches {
        for id in st.next_batch(3).unwrap().identities {
            *counts.entry(id).or_default() += 1.0;
        }
    }
    let expected = (batches * 3) as f64 / 10.0;
    let chi2: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
}

#[test]
fn batches_are_reproducible() {
    let ds = generate_dataset(&SynthSpec {
        image_size: 16,
        ..SynthSpec::new(8, 5, 0.4, 2)
    })
    .unwrap();
    let draw = |seed| {
        let mut st = build_index(&ds, seed).unwrap();
        (0..20).map(|_| st.next_batch(3).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
}
