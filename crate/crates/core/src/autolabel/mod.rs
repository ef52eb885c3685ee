//! Coarse labelling of raw imagery: region proposals, crop naming, then rule filtering.

mod client;
mod crop;
mod filter;
pub mod mock;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

pub use client::{
    crop_uri, NamingRequest, NamingResponse, ProposalRequest, ProposalResponse, ProposalRow, RetryPolicy,
    ServiceClient, NAMING_PROMPT,
};
pub use crop::{crop_stddev, load_gray, local_path};
pub use filter::{judge, rule_filter, select_proposals, DropReason, FilterPolicy, ProposalConfig};

use crate::domain::{DatasetManifest, ImageRecord, Instance};
use crate::error::{Error, Result};
use crate::formats::{crop_name, AutoLabelRecord, RoiProposal};

pub const ENV_PROPOSAL_ENDPOINT: &str = "LAE_SAM_ENDPOINT";
pub const ENV_NAMING_ENDPOINT: &str = "LAE_LVLM_ENDPOINT";
pub const ENV_API_KEY: &str = "LAE_LVLM_API_KEY";
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Clone)]
pub struct AutoLabelConfig {
    pub proposal: ProposalConfig,
    pub filter: FilterPolicy,
    pub retry: RetryPolicy,
    /// In-flight request limit, applied to each endpoint separately.
    pub concurrency: usize,
    pub proposal_endpoint: String,
    pub naming_endpoint: String,
    pub api_key: Option<String>,
}

impl AutoLabelConfig {
    pub fn new(proposal_endpoint: impl Into<String>, naming_endpoint: impl Into<String>) -> Self {
        Self {
            proposal: ProposalConfig::default(),
            filter: FilterPolicy::default(),
            retry: RetryPolicy::default(),
            concurrency: DEFAULT_CONCURRENCY,
            proposal_endpoint: proposal_endpoint.into(),
            naming_endpoint: naming_endpoint.into(),
            api_key: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal.validate()?;
        self.filter.validate()?;
        if self.concurrency == 0 {
            return Err(Error::InvalidParameter("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

/// One named proposal and what the filter made of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub image_id: String,
    pub proposal: RoiProposal,
    pub record: AutoLabelRecord,
    pub crop_std: Option<f64>,
    pub dropped: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub image_id: String,
    /// Set when a single crop failed rather than the whole image.
    pub det_name: Option<String>,
    pub kind: String,
    pub message: String,
}

impl ItemFailure {
    fn new(image_id: &str, det_name: Option<String>, e: &Error) -> Self {
        Self {
            image_id: image_id.to_owned(),
            det_name,
            kind: e.kind().to_owned(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AutoLabelOutput {
    /// Input images that got proposals, with surviving labels appended. Images whose
    /// proposal request failed are left out and reported in `failures`.
    pub manifest: DatasetManifest,
    pub audit: Vec<AuditEntry>,
    pub failures: Vec<ItemFailure>,
}

struct Named {
    proposal: RoiProposal,
    record: AutoLabelRecord,
    crop_std: Option<f64>,
}

struct ImageOutcome {
    named: Vec<Named>,
    failures: Vec<ItemFailure>,
}

fn crop_stats(uri: &str, proposals: &[RoiProposal]) -> Vec<Option<f64>> {
    let Some(path) = local_path(uri) else {
        return vec![None; proposals.len()];
    };
    match load_gray(&path) {
        Ok(img) => proposals.iter().map(|p| crop_stddev(&img, &p.bbox)).collect(),
        Err(e) => {
            tracing::warn!(uri, error = %e, "crop statistics unavailable");
            vec![None; proposals.len()]
        }
    }
}

async fn label_image(
    image: ImageRecord,
    cfg: Arc<AutoLabelConfig>,
    client: ServiceClient,
    proposal_slots: Arc<Semaphore>,
    naming_slots: Arc<Semaphore>,
) -> Result<ImageOutcome> {
    let proposals = {
        let _permit = proposal_slots.acquire().await.expect("semaphore open");
        client
            .request_proposals(&image.uri, image.width, image.height, &cfg.proposal, &cfg.proposal_endpoint)
            .await?
    };

    let uri = image.uri.clone();
    let for_stats = proposals.clone();
    let stats = tokio::task::spawn_blocking(move || crop_stats(&uri, &for_stats))
        .await
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let mut tasks = JoinSet::new();
    for (j, p) in proposals.iter().enumerate() {
        let det_name = crop_name(&image.image_id, &p.bbox);
        let target = crop_uri(&image.uri, &p.bbox);
        let (client, slots, cfg) = (client.clone(), naming_slots.clone(), cfg.clone());
        tasks.spawn(async move {
            let _permit = slots.acquire().await.expect("semaphore open");
            let r = client.request_category(&target, &det_name, &cfg.naming_endpoint).await;
            (j, det_name, r)
        });
    }
    let mut replies = Vec::with_capacity(proposals.len());
    while let Some(joined) = tasks.join_next().await {
        replies.push(joined.map_err(|e| Error::Io(std::io::Error::other(e)))?);
    }
    replies.sort_by_key(|(j, _, _)| *j);

    let mut out = ImageOutcome {
        named: Vec::new(),
        failures: Vec::new(),
    };
    for (j, det_name, r) in replies {
        match r {
            Ok(record) => out.named.push(Named {
                proposal: proposals[j].clone(),
                record,
                crop_std: stats[j],
            }),
            Err(e) => out.failures.push(ItemFailure::new(&image.image_id, Some(det_name), &e)),
        }
    }
    Ok(out)
}

/// Labels every image of `input`. Service failures are isolated per image or per
/// crop; output order follows input order whatever the completion order.
pub async fn run_autolabel(input: &DatasetManifest, cfg: &AutoLabelConfig) -> Result<AutoLabelOutput> {
    cfg.validate()?;
    let client = ServiceClient::new(cfg.retry, cfg.api_key.clone())?;
    let shared = Arc::new(cfg.clone());
    let proposal_slots = Arc::new(Semaphore::new(cfg.concurrency));
    let naming_slots = Arc::new(Semaphore::new(cfg.concurrency));

    let mut tasks = JoinSet::new();
    for (i, image) in input.images.iter().enumerate() {
        let fut = label_image(
            image.clone(),
            shared.clone(),
            client.clone(),
            proposal_slots.clone(),
            naming_slots.clone(),
        );
        tasks.spawn(async move { (i, fut.await) });
    }
    let mut outcomes = Vec::with_capacity(input.images.len());
    while let Some(joined) = tasks.join_next().await {
        outcomes.push(joined.map_err(|e| Error::Io(std::io::Error::other(e)))?);
    }
    outcomes.sort_by_key(|(i, _)| *i);

    let mut manifest = DatasetManifest::new(input.name.clone());
    manifest.categories = input.categories.clone();
    let mut known: BTreeSet<String> = manifest.categories.iter().cloned().collect();
    let mut audit = Vec::new();
    let mut failures = Vec::new();

    for (i, outcome) in outcomes {
        let src = &input.images[i];
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                tracing::warn!(image = %src.image_id, error = %e, "image failed");
                failures.push(ItemFailure::new(&src.image_id, None, &e));
                continue;
            }
        };
        failures.extend(outcome.failures);

        let stats: HashMap<String, f64> = outcome
            .named
            .iter()
            .filter_map(|n| n.crop_std.map(|s| (n.record.det_name.clone(), s)))
            .collect();
        let pairs: Vec<(RoiProposal, AutoLabelRecord)> =
            outcome.named.iter().map(|n| (n.proposal.clone(), n.record.clone())).collect();
        let kept: Vec<Instance> = rule_filter(&pairs, &cfg.filter, &stats);

        for n in outcome.named {
            let dropped = judge(&n.proposal, &n.record, &cfg.filter, &stats);
            audit.push(AuditEntry {
                image_id: src.image_id.clone(),
                proposal: n.proposal,
                record: n.record,
                crop_std: n.crop_std,
                dropped,
            });
        }

        let mut image = src.clone();
        for inst in kept {
            if known.insert(inst.category.clone()) {
                manifest.categories.push(inst.category.clone());
            }
            image.instances.push(inst);
        }
        manifest.images.push(image);
    }

    Ok(AutoLabelOutput {
        manifest,
        audit,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::mock::{MockConfig, MockServer};
    use super::*;

    fn images(n: usize, side: u32) -> DatasetManifest {
        let mut m = DatasetManifest::new("raw");
        for i in 0..n {
            m.images.push(ImageRecord::new(format!("image{i}"), side, side, format!("mem://image{i}.png")));
        }
        m
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            base_delay_ms: 1,
            max_delay_ms: 5,
            ..RetryPolicy::default()
        }
    }

    #[tokio::test]
    async fn labels_survive_transient_failures() {
        let server = MockServer::start_local(MockConfig {
            seed: 11,
            failure_rate: 0.2,
            ..MockConfig::default()
        })
        .await
        .unwrap();
        let mut cfg = AutoLabelConfig::new(server.proposal_endpoint(), server.naming_endpoint());
        cfg.retry = fast_retry();
        let input = images(6, 256);
        let out = run_autolabel(&input, &cfg).await.unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.manifest.images.len(), 6);
        assert!(server.injected_failures() > 0);
        for (img, src) in out.manifest.images.iter().zip(&input.images) {
            assert_eq!(img.image_id, src.image_id);
        }
        let kept = out.audit.iter().filter(|a| a.dropped.is_none()).count();
        assert_eq!(kept, out.manifest.instance_count());
        out.manifest.validate().unwrap();
        server.stop().await;
    }

    #[tokio::test]
    async fn unreachable_service_fails_each_image() {
        let mut cfg = AutoLabelConfig::new("http://127.0.0.1:9/v1/proposals", "http://127.0.0.1:9/v1/name");
        cfg.retry = RetryPolicy {
            max_retries: 1,
            ..fast_retry()
        };
        let out = run_autolabel(&images(3, 256), &cfg).await.unwrap();
        assert_eq!(out.failures.len(), 3);
        assert!(out.failures.iter().all(|f| f.kind == "service-unreachable" && f.det_name.is_none()));
        assert!(out.manifest.images.is_empty());
    }

    #[tokio::test]
    async fn api_key_is_sent() {
        let server = MockServer::start_local(MockConfig {
            api_key: Some("k1".into()),
            ..MockConfig::default()
        })
        .await
        .unwrap();
        let mut cfg = AutoLabelConfig::new(server.proposal_endpoint(), server.naming_endpoint());
        cfg.retry = fast_retry();
        let out = run_autolabel(&images(1, 256), &cfg).await.unwrap();
        assert_eq!(out.failures.len(), 1);

        cfg.api_key = Some("k1".into());
        let out = run_autolabel(&images(1, 256), &cfg).await.unwrap();
        assert!(out.failures.is_empty());
        server.stop().await;
    }
}
