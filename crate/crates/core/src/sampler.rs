//! Occlusion-balanced sampling: every batch holds `P` same-identity pairs
//! of one non-occluded and one occluded image, drawn from `P` distinct
//! identities. Identities are visited without replacement within an epoch
//! and images are redrawn uniformly each time an identity is visited.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::datagen::Dataset;
use crate::error::{OreoError, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityPool {
    pub identity: u32,
    pub non_occluded: Vec<usize>,
    pub occluded: Vec<usize>,
}

/// Counts reported after indexing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexReport {
    pub eligible: usize,
    pub ineligible: Vec<u32>,
    pub occluded_images: usize,
    pub non_occluded_images: usize,
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    pools: Vec<IdentityPool>,
    ineligible: Vec<u32>,
    seed: u64,
    epoch: u64,
    batch_in_epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

/// One balanced batch: `pairs[i] = (non_occluded_index, occluded_index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub identities: Vec<u32>,
    pub epoch: u64,
    pub index: u64,
}

impl PairBatch {
    /// Sample indices laid out as all non-occluded images, then their
    /// occluded partners in the same order.
    pub fn layout(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).chain(self.pairs.iter().map(|p| p.1)).collect()
    }
}

/// Partitions identities into those with at least one image of each
/// occlusion class (eligible) and the rest.
pub fn build_index(ds: &Dataset, seed_root: u64) -> Result<SamplerState> {
    let mut map: std::collections::BTreeMap<u32, IdentityPool> = Default::default();
    for (i, s) in ds.samples.iter().enumerate() {
        let pool = map.entry(s.identity).or_insert_with(|| IdentityPool {
            identity: s.identity,
            non_occluded: Vec::new(),
            occluded: Vec::new(),
        });
        if s.occluded {
            pool.occluded.push(i);
        } else {
            pool.non_occluded.push(i);
        }
    }
    let (pools, rest): (Vec<_>, Vec<_>) = map
        .into_values()
        .partition(|p| !p.occluded.is_empty() && !p.non_occluded.is_empty());
    if pools.is_empty() {
        return Err(OreoError::Protocol(format!(
            "no identity has both occluded and non-occluded images ({} identities inspected)",
            rest.len()
        )));
    }
    Ok(SamplerState {
        pools,
        ineligible: rest.into_iter().map(|p| p.identity).collect(),
        seed: seed_root,
        epoch: 0,
        batch_in_epoch: 0,
        order: Vec::new(),
        cursor: 0,
    })
}

impl SamplerState {
    pub fn report(&self) -> IndexReport {
        IndexReport {
            eligible: self.pools.len(),
            ineligible: self.ineligible.clone(),
            occluded_images: self.pools.iter().map(|p| p.occluded.len()).sum(),
            non_occluded_images: self.pools.iter().map(|p| p.non_occluded.len()).sum(),
        }
    }

    pub fn eligible(&self) -> &[IdentityPool] {
        &self.pools
    }

    pub fn ineligible(&self) -> &[u32] {
        &self.ineligible
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Full batches per epoch; a trailing partial batch is skipped.
    pub fn batches_per_epoch(&self, pairs: usize) -> usize {
        self.pools.len() / pairs.max(1)
    }

    fn start_epoch(&mut self, epoch: u64) {
        let mut rng = seed::rng_for(self.seed, &[tag::SAMPLER_EPOCH, epoch]);
        self.order = (0..self.pools.len()).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.epoch = epoch;
        self.batch_in_epoch = 0;
    }

    /// Draws the next batch of `pairs` pairs.
    pub fn next_batch(&mut self, pairs: usize) -> Result<PairBatch> {
        if pairs == 0 {
            return Err(OreoError::InvalidConfig("batch must contain at least one pair".into()));
        }
        if pairs > self.pools.len() {
            return Err(OreoError::InvalidConfig(format!(
                "{pairs} pairs per batch but only {} eligible identities",
                self.pools.len()
            )));
        }
        if self.order.is_empty() {
            self.start_epoch(0);
        } else if self.cursor + pairs > self.order.len() {
            self.start_epoch(self.epoch + 1);
        }
        let mut rng = seed::rng_for(self.seed, &[tag::SAMPLER_BATCH, self.epoch, self.batch_in_epoch]);
        let chosen = &self.order[self.cursor..self.cursor + pairs];
        let mut batch = PairBatch {
            pairs: Vec::with_capacity(pairs),
            identities: Vec::with_capacity(pairs),
            epoch: self.epoch,
            index: self.batch_in_epoch,
        };
        for &k in chosen {
            let pool = &self.pools[k];
            let n = pool.non_occluded[rng.random_range(0..pool.non_occluded.len())];
            let o = pool.occluded[rng.random_range(0..pool.occluded.len())];
            batch.pairs.push((n, o));
            batch.identities.push(pool.identity);
        }
        self.cursor += pairs;
        self.batch_in_epoch += 1;
        Ok(batch)
    }
}

/// Occlusion-agnostic sampler: epochs are shuffled passes over all images.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    n_images: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl UniformSampler {
    pub fn new(n_images: usize, seed_root: u64) -> Self {
        UniformSampler {
            n_images,
            seed: seed_root,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Vec<usize>> {
        if size == 0 || size > self.n_images {
            return Err(OreoError::InvalidConfig(format!(
                "batch of {size} images from a dataset of {}",
                self.n_images
            )));
        }
        if self.order.is_empty() || self.cursor + size > self.order.len() {
            let epoch = if self.order.is_empty() { 0 } else { self.epoch + 1 };
            let mut rng = seed::rng_for(self.seed, &[tag::UNIFORM_BATCH, epoch]);
            self.order = (0..self.n_images).collect();
            self.order.shuffle(&mut rng);
            self.epoch = epoch;
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ImageSample;

    fn toy(spec: &[(u32, bool)]) -> Dataset {
        Dataset {
            samples: spec
                .iter()
                .map(|&(id, occ)| ImageSample {
                    height: 1,
                    width: 1,
                    pixels: vec![0.0],
                    identity: id,
                    attributes: vec![occ as u8],
                    occluded: occ,
                    set_id: None,
                })
                .collect(),
            attribute_names: vec!["a".into()],
            occlusion_subset: vec![0],
        }
    }

    #[test]
    fn eligibility_partition() {
        // A: 2n/1o, B: 1n/1o, C: 3n/0o
        let ds = toy(&[(0, false), (0, false), (0, true), (1, false), (1, true), (2, false), (2, false), (2, false)]);
        let st = build_index(&ds, 1).unwrap();
        let ids: Vec<u32> = st.eligible().iter().map(|p| p.identity).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(st.ineligible(), &[2]);
    }

    #[test]
    fn all_occluded_is_an_error() {
        let ds = toy(&[(0, true), (1, true)]);
        assert!(build_index(&ds, 1).is_err());
    }

    #[test]
    fn two_identity_batch() {
        let ds = toy(&[(0, false), (0, true), (1, false), (1, true)]);
        let mut st = build_index(&ds, 5).unwrap();
        let b = st.next_batch(2).unwrap();
        let mut pairs = b.pairs.clone();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 1), (2, 3)]);
        assert!(st.next_batch(3).is_err());
    }

    #[test]
    fn epochs_exhaust_identities() {
        let spec: Vec<(u32, bool)> = (0..6).flat_map(|id| [(id, false), (id, true)]).collect();
        let ds = toy(&spec);
        let mut st = build_index(&ds, 9).unwrap();
        let mut seen: Vec<u32> = (0..3).flat_map(|_| st.next_batch(2).unwrap().identities).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        let b = st.next_batch(2).unwrap();
        assert_eq!((b.epoch, b.index), (1, 0));
    }

    #[test]
    fn uniform_sampler_covers_all_images_per_epoch() {
        let mut u = UniformSampler::new(10, 3);
        let mut all: Vec<usize> = (0..5).flat_map(|_| u.next_batch(2).unwrap()).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(u.next_batch(11).is_err());
    }
}
