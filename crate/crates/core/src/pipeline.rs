//! Manifest-level transformations: class-preserving sampling, dense-image splitting,
//! merging and benchmark assembly.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_category, DatasetManifest, ImageRecord};
use crate::error::{Error, Result};

/// Annotation cap per record before an image is split.
pub const DEFAULT_DENSE_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePolicy {
    pub rate: f64,
    /// Categories with more instances than this are sampled.
    pub threshold: usize,
    pub seed: u64,
}

impl Default for SamplePolicy {
    fn default() -> Self {
        Self {
            rate: 0.4,
            threshold: 100,
            seed: 0,
        }
    }
}

impl SamplePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidParameter(format!("sampling rate {} outside (0, 1]", self.rate)));
        }
        Ok(())
    }

    /// Number of survivors for a category with `count` instances.
    pub fn survivors(&self, count: usize) -> usize {
        if count > self.threshold {
            (count as f64 * self.rate).round() as usize
        } else {
            count
        }
    }
}

/// Samples instances per category, keeping exactly `round(count * rate)` of every
/// category above the threshold. Images keep their place even when emptied.
pub fn sample_by_class(m: &DatasetManifest, p: &SamplePolicy) -> Result<DatasetManifest> {
    p.validate()?;
    let mut members: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for (ii, im) in m.images.iter().enumerate() {
        for (k, inst) in im.instances.iter().enumerate() {
            members.entry(inst.category.as_str()).or_default().push((ii, k));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut dropped: HashSet<(usize, usize)> = HashSet::new();
    for cat in &m.categories {
        let Some(slots) = members.get(cat.as_str()) else {
            continue;
        };
        let keep = p.survivors(slots.len());
        if keep == slots.len() {
            continue;
        }
        let chosen: HashSet<usize> = index::sample(&mut rng, slots.len(), keep).into_iter().collect();
        dropped.extend(slots.iter().enumerate().filter(|(i, _)| !chosen.contains(i)).map(|(_, s)| *s));
    }

    let mut out = m.clone();
    for (ii, im) in out.images.iter_mut().enumerate() {
        let mut k = 0;
        im.instances.retain(|_| {
            let keep = !dropped.contains(&(ii, k));
            k += 1;
            keep
        });
    }
    Ok(out)
}

/// Splits an image whose annotation count exceeds `cap` into consecutive chunks.
/// Chunk ids are `<image_id>#<ordinal>` starting from 0.
pub fn split_dense(rec: &ImageRecord, cap: usize) -> Result<Vec<ImageRecord>> {
    if cap == 0 {
        return Err(Error::InvalidParameter("dense split cap must be positive".into()));
    }
    if rec.instances.len() <= cap {
        return Ok(vec![rec.clone()]);
    }
    Ok(rec
        .instances
        .chunks(cap)
        .enumerate()
        .map(|(i, chunk)| ImageRecord {
            image_id: format!("{}#{i}", rec.image_id),
            instances: chunk.to_vec(),
            ..rec.clone()
        })
        .collect())
}

pub fn split_dense_manifest(m: &DatasetManifest, cap: usize) -> Result<DatasetManifest> {
    let mut images = Vec::with_capacity(m.images.len());
    for im in &m.images {
        images.extend(split_dense(im, cap)?);
    }
    Ok(DatasetManifest {
        images,
        ..m.clone()
    })
}

const NAMESPACE_SEP: char = ':';

fn qualify(source: &str, image_id: &str) -> String {
    if image_id.contains(NAMESPACE_SEP) {
        image_id.to_owned()
    } else {
        format!("{source}{NAMESPACE_SEP}{image_id}")
    }
}

/// Unions several manifests.
///
/// Categories are unioned in order of first appearance. Image ids are qualified as
/// `<manifest name>:<image id>` unless they already carry a qualifier, which keeps nested
/// merges stable. With `dedup`, later instances sharing a `source_id` with an earlier
/// one are dropped. A single manifest is returned unchanged.
pub fn merge_manifests(ms: &[DatasetManifest], dedup: bool) -> Result<DatasetManifest> {
    match ms {
        [] => return Ok(DatasetManifest::default()),
        [only] if !dedup => return Ok(only.clone()),
        _ => {}
    }
    let mut out = DatasetManifest::new(ms.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+"));
    if ms.len() == 1 {
        out.name = ms[0].name.clone();
    }
    let mut cats = HashSet::new();
    let mut seen_sources = HashSet::new();
    let mut seen_images = HashSet::new();
    for m in ms {
        for c in &m.categories {
            let c = canonicalize_category(c)?;
            if cats.insert(c.clone()) {
                out.categories.push(c);
            }
        }
        for im in &m.images {
            let image_id = if ms.len() == 1 { im.image_id.clone() } else { qualify(&m.name, &im.image_id) };
            if !seen_images.insert(image_id.clone()) {
                return Err(Error::InvalidParameter(format!("image id {image_id:?} appears twice in merge")));
            }
            let mut rec = ImageRecord {
                image_id,
                instances: Vec::with_capacity(im.instances.len()),
                ..im.clone()
            };
            for inst in &im.instances {
                if dedup && !seen_sources.insert(inst.source_id.clone()) {
                    continue;
                }
                let mut inst = inst.clone();
                inst.category = canonicalize_category(&inst.category)?;
                rec.instances.push(inst);
            }
            out.images.push(rec);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSelection {
    pub source_dataset: String,
    pub selected_categories: Vec<String>,
}

pub fn read_selections(bytes: &[u8]) -> Result<Vec<BenchmarkSelection>> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Builds a benchmark from per-source category selections over test-split pools.
///
/// Pools are matched to selections by manifest name. Only instances of selected
/// categories survive, and images left without any are dropped.
pub fn assemble_benchmark(
    name: &str,
    selections: &[BenchmarkSelection],
    pools: &[DatasetManifest],
) -> Result<DatasetManifest> {
    let mut out = DatasetManifest::new(name);
    let mut global = HashSet::new();
    let mut per_source: Vec<HashSet<String>> = Vec::with_capacity(selections.len());
    for sel in selections {
        let mut local = HashSet::new();
        for raw in &sel.selected_categories {
            let c = canonicalize_category(raw)?;
            if !local.insert(c.clone()) {
                return Err(Error::DuplicateCategory(c));
            }
            if !global.insert(c.clone()) {
                return Err(Error::DuplicateCategoryAcrossSelections(c));
            }
            out.categories.push(c);
        }
        per_source.push(local);
    }

    for (sel, wanted) in selections.iter().zip(&per_source) {
        let pool = pools
            .iter()
            .find(|p| p.name == sel.source_dataset)
            .ok_or_else(|| Error::MissingPool(sel.source_dataset.clone()))?;
        let available: HashSet<&str> = pool.categories.iter().map(String::as_str).collect();
        // report in selection order so the first missing name is deterministic
        for raw in &sel.selected_categories {
            let c = canonicalize_category(raw)?;
            if !available.contains(c.as_str()) {
                return Err(Error::MissingCategory {
                    source_dataset: sel.source_dataset.clone(),
                    category: c,
                });
            }
        }
        for im in &pool.images {
            let instances: Vec<_> = im.instances.iter().filter(|i| wanted.contains(&i.category)).cloned().collect();
            if instances.is_empty() {
                continue;
            }
            out.images.push(ImageRecord {
                image_id: qualify(&pool.name, &im.image_id),
                instances,
                ..im.clone()
            });
        }
    }
    Ok(out)
}
