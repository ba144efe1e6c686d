//! Triplet sampling with in-batch hard-negative mining.
//!
//! A training batch starts from positive pairs — two views of the same
//! object — and expands each into triplets by picking negatives from other
//! objects of the *same category*, so the embedding is forced to separate
//! instances rather than categories. Negatives come in two kinds per pair:
//! the hardest candidates under the current net (highest triplet loss) and
//! uniformly random ones, which keeps the gradient pool diverse.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::geometry;
use crate::net::{EmbeddingNet, TrainConfig};

/// Two views of the same object, by record index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositivePair {
    pub anchor: usize,
    pub positive: usize,
}

/// (anchor, positive, negative) record indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// A validated batch of triplets. Construction checks every triplet
/// against the dataset's object/category structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn new(triplets: Vec<Triplet>, dataset: &MultiViewDataset) -> Result<Self> {
        let batch = Self { triplets };
        batch.validate_against(dataset)?;
        Ok(batch)
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Checks the structural constraints of every triplet: anchor and
    /// positive are different views of one object; anchor and negative are
    /// different objects of one category.
    pub fn validate_against(&self, dataset: &MultiViewDataset) -> Result<()> {
        for (i, t) in self.triplets.iter().enumerate() {
            for idx in [t.anchor, t.positive, t.negative] {
                if idx >= dataset.len() {
                    return Err(Error::InvalidInput(format!(
                        "triplet {i}: record index {idx} out of bounds ({} records)",
                        dataset.len()
                    )));
                }
            }
            let (a, p, n) = (
                dataset.record(t.anchor),
                dataset.record(t.positive),
                dataset.record(t.negative),
            );
            if a.object_id != p.object_id {
                return Err(Error::InvalidInput(format!(
                    "triplet {i}: anchor object {} != positive object {}",
                    a.object_id, p.object_id
                )));
            }
            if a.view_index == p.view_index {
                return Err(Error::InvalidInput(format!(
                    "triplet {i}: anchor and positive are the same view {} of {}",
                    a.view_index, a.object_id
                )));
            }
            if a.category_id != n.category_id {
                return Err(Error::InvalidInput(format!(
                    "triplet {i}: anchor category {} != negative category {}",
                    a.category_id, n.category_id
                )));
            }
            if a.object_id == n.object_id {
                return Err(Error::InvalidInput(format!(
                    "triplet {i}: negative is a view of the anchor object {}",
                    a.object_id
                )));
            }
        }
        Ok(())
    }
}

/// Samples `n` positive pairs: an object uniform among those with at least
/// two views, then two distinct views uniform within it.
pub fn sample_positive_pairs(
    dataset: &MultiViewDataset,
    n: usize,
    seed: u64,
) -> Result<Vec<PositivePair>> {
    let eligible: Vec<usize> = (0..dataset.objects().len())
        .filter(|&o| dataset.objects()[o].record_indices.len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientViews(
            "no object has at least two views".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let obj = &dataset.objects()[eligible[rng.random_range(0..eligible.len())]];
        let k = obj.record_indices.len();
        let vi = rng.random_range(0..k);
        let mut vj = rng.random_range(0..k - 1);
        if vj >= vi {
            vj += 1;
        }
        pairs.push(PositivePair {
            anchor: obj.record_indices[vi],
            positive: obj.record_indices[vj],
        });
    }
    Ok(pairs)
}

/// `k` distinct elements of `items` by partial Fisher-Yates; caller
/// guarantees `k <= items.len()`.
fn sample_distinct(rng: &mut ChaCha8Rng, items: &[usize], k: usize) -> Vec<usize> {
    let mut pool = items.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Core selection rule shared by [`mine_negatives`] and [`build_batch`]:
/// `scored` holds `(record index, d_pos - d_neg + margin)` per candidate.
/// The clamp of the hinge is monotone, so ranking by the raw score ranks by
/// triplet loss.
fn select_negatives(
    mut scored: Vec<(usize, f64)>,
    k_hard: usize,
    k_rand: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_hard = k_hard.min(scored.len());
    let mut picked: Vec<usize> = scored[..n_hard].iter().map(|&(r, _)| r).collect();
    let mut remainder: Vec<usize> = scored[n_hard..].iter().map(|&(r, _)| r).collect();
    remainder.sort_unstable();
    if remainder.len() >= k_rand {
        picked.extend(sample_distinct(rng, &remainder, k_rand));
    } else {
        // Too few left over: fall back to sampling with replacement from
        // the whole candidate list.
        let mut all: Vec<usize> = scored.iter().map(|&(r, _)| r).collect();
        all.sort_unstable();
        picked.extend((0..k_rand).map(|_| all[rng.random_range(0..all.len())]));
    }
    picked
}

/// Scores every candidate as the negative of `pair` under the current net
/// and returns the `k_hard` highest-loss records (ties to the lower record
/// index) plus `k_rand` sampled uniformly without replacement from the
/// rest — or with replacement from all candidates when the rest is too
/// small.
#[allow(clippy::too_many_arguments)]
pub fn mine_negatives(
    net: &EmbeddingNet,
    pair: &PositivePair,
    candidates: &[usize],
    dataset: &MultiViewDataset,
    margin: f64,
    k_hard: usize,
    k_rand: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::NoValidNegatives(format!(
            "empty candidate list for anchor record {}",
            pair.anchor
        )));
    }
    let anchor = dataset.record(pair.anchor);
    for &c in candidates {
        if c >= dataset.len() {
            return Err(Error::InvalidInput(format!(
                "candidate record index {c} out of bounds"
            )));
        }
        let cand = dataset.record(c);
        if cand.category_id != anchor.category_id || cand.object_id == anchor.object_id {
            return Err(Error::InvalidInput(format!(
                "candidate record {c} ({}/{}) is not a same-category different-object negative for anchor {}",
                cand.category_id, cand.object_id, anchor.object_id
            )));
        }
    }
    let emb_a = net.forward(&anchor.features)?;
    let emb_p = net.forward(&dataset.record(pair.positive).features)?;
    let d_pos = geometry::cosine_distance(&emb_a, &emb_p)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let emb_n = net.forward(&dataset.record(c).features)?;
        let d_neg = geometry::cosine_distance(&emb_a, &emb_n)?;
        scored.push((c, d_pos - d_neg + margin));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(select_negatives(scored, k_hard, k_rand, &mut rng))
}

/// Number of same-category records drawn into the shared candidate pool
/// per positive pair.
const POOL_DRAWS_PER_PAIR: usize = 4;

/// Assembles one training batch: sample positive pairs, draw a shared
/// candidate pool from the anchors' categories, then mine hard and random
/// negatives for each pair against that pool. Deterministic given
/// `(net, dataset, cfg, seed)`.
pub fn build_batch(
    net: &EmbeddingNet,
    dataset: &MultiViewDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TripletBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_positive_pairs(dataset, cfg.batch_positive_pairs, rng.next_u64())?;

    // Shared pool: up to POOL_DRAWS_PER_PAIR same-category different-object
    // records per pair, deduplicated.
    let mut pool: BTreeSet<usize> = BTreeSet::new();
    for pair in &pairs {
        let obj_index = dataset.object_of(pair.anchor);
        let cat = &dataset.categories()[dataset.objects()[obj_index].category_index];
        let eligible: Vec<usize> = cat
            .record_indices
            .iter()
            .copied()
            .filter(|&r| dataset.object_of(r) != obj_index)
            .collect();
        let draws = POOL_DRAWS_PER_PAIR.min(eligible.len());
        pool.extend(sample_distinct(&mut rng, &eligible, draws));
    }
    let pool: Vec<usize> = pool.into_iter().collect();

    // Embed everything we will score, once.
    let mut needed: BTreeSet<usize> = pool.iter().copied().collect();
    needed.extend(pairs.iter().flat_map(|p| [p.anchor, p.positive]));
    let needed: Vec<usize> = needed.into_iter().collect();
    let embeddings: Vec<Vec<f64>> = needed
        .iter()
        .map(|&r| net.embed_slice(dataset.record(r).features.as_slice()))
        .collect();
    let emb = |r: usize| -> &[f64] { &embeddings[needed.binary_search(&r).expect("embedded")] };

    let mut triplets = Vec::with_capacity(
        pairs.len() * (cfg.hard_negatives_per_pair + cfg.random_negatives_per_pair),
    );
    for pair in &pairs {
        let mut pair_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let anchor = dataset.record(pair.anchor);
        let obj_index = dataset.object_of(pair.anchor);
        let candidates: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&r| {
                dataset.record(r).category_id == anchor.category_id
                    && dataset.object_of(r) != obj_index
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::NoValidNegatives(format!(
                "no same-category different-object record reached the pool for anchor record {}",
                pair.anchor
            )));
        }
        let d_pos = geometry::cosine_distance_raw(emb(pair.anchor), emb(pair.positive))?;
        let mut scored = Vec::with_capacity(candidates.len());
        for &c in &candidates {
            let d_neg = geometry::cosine_distance_raw(emb(pair.anchor), emb(c))?;
            scored.push((c, d_pos - d_neg + cfg.margin));
        }
        let negatives = select_negatives(
            scored,
            cfg.hard_negatives_per_pair,
            cfg.random_negatives_per_pair,
            &mut pair_rng,
        );
        triplets.extend(negatives.into_iter().map(|negative| Triplet {
            anchor: pair.anchor,
            positive: pair.positive,
            negative,
        }));
    }
    TripletBatch::new(triplets, dataset)
}
