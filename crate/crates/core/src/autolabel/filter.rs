//! Client-side proposal selection and the rule-based record filter.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_category, Instance};
use crate::error::{Error, Result};
use crate::formats::{AutoLabelRecord, RoiProposal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub points_per_image: u32,
    pub pred_iou_threshold: f64,
    pub stability_threshold: f64,
    pub downsample_factor: u32,
    /// Proposals kept for images whose shorter side reaches `small_image_cutoff`.
    pub top_k_large: usize,
    pub top_k_small: usize,
    pub small_image_cutoff: u32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            points_per_image: 32,
            pred_iou_threshold: 0.86,
            stability_threshold: 0.92,
            downsample_factor: 2,
            top_k_large: 10,
            top_k_small: 5,
            small_image_cutoff: 600,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pred_iou_threshold", self.pred_iou_threshold),
            ("stability_threshold", self.stability_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.top_k_large == 0 || self.top_k_small == 0 {
            return Err(Error::InvalidParameter("top-k limits must be at least 1".into()));
        }
        Ok(())
    }

    pub fn top_k(&self, width: u32, height: u32) -> usize {
        if width.min(height) >= self.small_image_cutoff {
            self.top_k_large
        } else {
            self.top_k_small
        }
    }
}

/// Applies the quality thresholds, then keeps the `K` largest-area proposals
/// (ties by ascending id) with `K` chosen from the image size.
pub fn select_proposals(proposals: Vec<RoiProposal>, cfg: &ProposalConfig, width: u32, height: u32) -> Vec<RoiProposal> {
    let mut kept: Vec<RoiProposal> = proposals
        .into_iter()
        .filter(|p| p.predicted_iou >= cfg.pred_iou_threshold && p.stability_score >= cfg.stability_threshold)
        .collect();
    kept.sort_by(|a, b| b.area.cmp(&a.area).then(a.id.cmp(&b.id)));
    kept.truncate(cfg.top_k(width, height));
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_likelihood: f64,
    /// Crops whose grayscale standard deviation (0-255 scale) falls below this are monotone.
    pub monotone_std_threshold: f64,
    pub category_blocklist: BTreeSet<String>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_likelihood: 0.5,
            monotone_std_threshold: 5.0,
            category_blocklist: BTreeSet::new(),
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_likelihood) {
            return Err(Error::InvalidParameter(format!(
                "min_likelihood {} outside [0, 1]",
                self.min_likelihood
            )));
        }
        if self.monotone_std_threshold.is_nan() || self.monotone_std_threshold < 0.0 {
            return Err(Error::InvalidParameter("monotone threshold must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_blocklist<I: IntoIterator<Item = S>, S: AsRef<str>>(mut self, items: I) -> Result<Self> {
        for i in items {
            self.category_blocklist.insert(canonicalize_category(i.as_ref())?);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Unparseable,
    Unrecognized,
    MissingLikelihood,
    LowLikelihood,
    Blocklisted,
    Monotone,
}

/// Decision for one proposal/record pair; `None` means kept.
pub fn judge(
    proposal: &RoiProposal,
    record: &AutoLabelRecord,
    policy: &FilterPolicy,
    crop_stats: &HashMap<String, f64>,
) -> Option<DropReason> {
    let _ = proposal;
    let Some(category) = record.category.as_deref() else {
        return Some(DropReason::Unparseable);
    };
    if record.unrecognized {
        return Some(DropReason::Unrecognized);
    }
    match record.likelihood {
        None => return Some(DropReason::MissingLikelihood),
        Some(l) if l < policy.min_likelihood => return Some(DropReason::LowLikelihood),
        Some(_) => {}
    }
    if policy.category_blocklist.contains(category) {
        return Some(DropReason::Blocklisted);
    }
    if let Some(&std) = crop_stats.get(&record.det_name) {
        if std < policy.monotone_std_threshold {
            return Some(DropReason::Monotone);
        }
    }
    None
}

/// Keeps records that pass every rule and turns them into instances, in input order.
///
/// Crops without an entry in `crop_stats` skip the monotone check.
pub fn rule_filter(
    records: &[(RoiProposal, AutoLabelRecord)],
    policy: &FilterPolicy,
    crop_stats: &HashMap<String, f64>,
) -> Vec<Instance> {
    records
        .iter()
        .filter(|(p, r)| judge(p, r, policy, crop_stats).is_none())
        .map(|(p, r)| {
            let mut inst = Instance::new(p.bbox, r.category.clone().unwrap_or_default(), r.det_name.clone());
            inst.likelihood = r.likelihood;
            inst
        })
        .collect()
}
