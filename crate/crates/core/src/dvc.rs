//! Dynamic vocabulary construction: a fixed-length category list per training batch,
//! made of every positive category plus negatives drawn from the rest of the registry.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::canonicalize_category;
use crate::error::{Error, Result};

/// Vocabulary length per batch used for open-vocabulary pre-training.
pub const DEFAULT_VOCAB_LEN: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct VocabRegistry {
    categories: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl VocabRegistry {
    /// Builds a registry from canonicalized names; duplicates are an error.
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut categories = Vec::new();
        let mut lookup = HashMap::new();
        for raw in names {
            let c = canonicalize_category(raw.as_ref())?;
            if lookup.insert(c.clone(), categories.len()).is_some() {
                return Err(Error::DuplicateCategory(c));
            }
            categories.push(c);
        }
        Ok(Self { categories, lookup })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, category: &str) -> Option<usize> {
        self.lookup.get(category).copied()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabBatch {
    pub entries: Vec<String>,
    pub positive_count: usize,
}

impl VocabBatch {
    pub fn positives(&self) -> &[String] {
        &self.entries[..self.positive_count]
    }

    pub fn negatives(&self) -> &[String] {
        &self.entries[self.positive_count..]
    }
}

/// How negatives are drawn from the non-positive part of the registry.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum NegativeSampling {
    #[default]
    Uniform,
    /// Weighted without replacement; one non-negative weight per registry entry.
    FrequencyWeighted(Vec<f64>),
}

pub fn build_batch(registry: &VocabRegistry, positives: &[String], n_dv: usize, seed: u64) -> Result<VocabBatch> {
    build_batch_with(registry, positives, n_dv, seed, &NegativeSampling::Uniform)
}

/// Assembles one batch vocabulary.
///
/// Positives come first in registry order. When the registry is no larger than `n_dv`
/// the whole registry is returned; otherwise exactly `n_dv` entries with the remainder
/// filled by negatives sampled without replacement under `seed`.
pub fn build_batch_with(
    registry: &VocabRegistry,
    positives: &[String],
    n_dv: usize,
    seed: u64,
    sampling: &NegativeSampling,
) -> Result<VocabBatch> {
    let mut pos_idx = Vec::with_capacity(positives.len());
    let mut is_pos = vec![false; registry.len()];
    for p in positives {
        let c = canonicalize_category(p)?;
        let i = registry.index_of(&c).ok_or(Error::UnknownPositive(c))?;
        if !is_pos[i] {
            is_pos[i] = true;
            pos_idx.push(i);
        }
    }
    if pos_idx.len() > n_dv {
        return Err(Error::PositivesExceedCapacity {
            positives: pos_idx.len(),
            capacity: n_dv,
        });
    }
    pos_idx.sort_unstable();

    let pool: Vec<usize> = (0..registry.len()).filter(|&i| !is_pos[i]).collect();
    let negatives: Vec<usize> = if registry.len() <= n_dv {
        pool
    } else {
        let k = n_dv - pos_idx.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match sampling {
            NegativeSampling::Uniform => index::sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect(),
            NegativeSampling::FrequencyWeighted(weights) => {
                if weights.len() != registry.len() {
                    return Err(Error::LengthMismatch {
                        left: weights.len(),
                        right: registry.len(),
                    });
                }
                index::sample_weighted(&mut rng, pool.len(), |j| weights[pool[j]], k)
                    .map_err(|e| Error::InvalidParameter(format!("negative weights: {e}")))?
                    .into_iter()
                    .map(|j| pool[j])
                    .collect()
            }
        }
    };

    let entries = pos_idx
        .iter()
        .chain(&negatives)
        .map(|&i| registry.categories[i].clone())
        .collect();
    Ok(VocabBatch {
        entries,
        positive_count: pos_idx.len(),
    })
}

/// Per-step seed for batch `step` of a run seeded with `run_seed`.
pub fn step_seed(run_seed: u64, step: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = run_seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Checks the structural guarantees of a batch against its inputs.
pub fn check_batch(batch: &VocabBatch, registry: &VocabRegistry, positives: &[String], n_dv: usize) -> bool {
    let unique: HashSet<&String> = batch.entries.iter().collect();
    let pos: HashSet<&String> = positives.iter().collect();
    unique.len() == batch.entries.len()
        && batch.entries.len() == registry.len().min(n_dv)
        && batch.positives().iter().all(|p| pos.contains(p))
        && batch.positive_count == pos.len()
        && batch.negatives().iter().all(|n| !pos.contains(n))
        && batch.entries.iter().all(|e| registry.index_of(e).is_some())
}
