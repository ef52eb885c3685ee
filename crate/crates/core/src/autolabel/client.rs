//! JSON-over-HTTP clients for the proposal and naming services.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::filter::{select_proposals, ProposalConfig};
use crate::domain::BBox;
use crate::error::{Error, Result};
use crate::formats::{parse_lvlm_record, AutoLabelRecord, RoiProposal};

/// Prompt sent with every crop to the naming service.
pub const NAMING_PROMPT: &str = "Tell me the possible object category in the remote sensing image by returning a \"object category\" phrase surrounded by quotation marks and given a likelihood from 0 to 1 \"object category\" with likelihood, if it is not recognized, output \"Unrecognized\" and providing reasoning details.\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalRequest {
    pub image_uri: String,
    pub points: u32,
    pub iou_threshold: f64,
    pub stability_threshold: f64,
    pub downsample: u32,
}

/// One proposal as it travels over the wire, using the proposal CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRow {
    pub id: u64,
    pub area: u64,
    pub bbox_x0: f64,
    pub bbox_y0: f64,
    pub bbox_w: f64,
    pub bbox_h: f64,
    pub point_input_x: f64,
    pub point_input_y: f64,
    pub predicted_iou: f64,
    pub stability_score: f64,
    pub crop_box_x0: f64,
    pub crop_box_y0: f64,
    pub crop_box_w: f64,
    pub crop_box_h: f64,
}

impl From<ProposalRow> for RoiProposal {
    fn from(r: ProposalRow) -> Self {
        RoiProposal {
            id: r.id,
            area: r.area,
            bbox: BBox::new(r.bbox_x0, r.bbox_y0, r.bbox_w, r.bbox_h),
            point_input_x: r.point_input_x,
            point_input_y: r.point_input_y,
            predicted_iou: r.predicted_iou,
            stability_score: r.stability_score,
            crop_box: BBox::new(r.crop_box_x0, r.crop_box_y0, r.crop_box_w, r.crop_box_h),
        }
    }
}

impl From<&RoiProposal> for ProposalRow {
    fn from(p: &RoiProposal) -> Self {
        ProposalRow {
            id: p.id,
            area: p.area,
            bbox_x0: p.bbox.x,
            bbox_y0: p.bbox.y,
            bbox_w: p.bbox.w,
            bbox_h: p.bbox.h,
            point_input_x: p.point_input_x,
            point_input_y: p.point_input_y,
            predicted_iou: p.predicted_iou,
            stability_score: p.stability_score,
            crop_box_x0: p.crop_box.x,
            crop_box_y0: p.crop_box.y,
            crop_box_w: p.crop_box.w,
            crop_box_h: p.crop_box.h,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalResponse {
    pub proposals: Vec<ProposalRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamingRequest {
    pub image_uri: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamingResponse {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay_ms: 100,
            max_delay_ms: 2_000,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    http: reqwest::Client,
    retry: RetryPolicy,
    api_key: Option<String>,
}

impl ServiceClient {
    pub fn new(retry: RetryPolicy, api_key: Option<String>) -> Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(retry.timeout_ms))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("http client: {e}")))?;
        Ok(Self { http, retry, api_key })
    }

    async fn attempt<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp, Attempt> {
        let mut req = self.http.post(endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(Error::ServiceUnreachable {
                endpoint: endpoint.to_owned(),
                message: format!("status {status}"),
            }));
        }
        let bytes = resp.bytes().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| Attempt::Fatal(Error::MalformedResponse(e.to_string())))
    }

    /// POSTs `body` as JSON, retrying transport errors and 5xx/429 with exponential backoff.
    pub async fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp> {
        let mut attempt = 0;
        loop {
            match self.attempt(endpoint, body).await {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) if attempt >= self.retry.max_retries => {
                    return Err(Error::ServiceUnreachable {
                        endpoint: endpoint.to_owned(),
                        message: format!("{msg} after {} attempts", attempt + 1),
                    })
                }
                Err(Attempt::Retry(msg)) => {
                    tracing::debug!(endpoint, attempt, %msg, "retrying");
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    /// Proposals for one image after thresholding and top-K selection.
    pub async fn request_proposals(
        &self,
        image_uri: &str,
        width: u32,
        height: u32,
        cfg: &ProposalConfig,
        endpoint: &str,
    ) -> Result<Vec<RoiProposal>> {
        let body = ProposalRequest {
            image_uri: image_uri.to_owned(),
            points: cfg.points_per_image,
            iou_threshold: cfg.pred_iou_threshold,
            stability_threshold: cfg.stability_threshold,
            downsample: cfg.downsample_factor,
        };
        let resp: ProposalResponse = self.post_json(endpoint, &body).await?;
        let proposals: Vec<RoiProposal> = resp.proposals.into_iter().map(RoiProposal::from).collect();
        for p in &proposals {
            p.validate().map_err(|e| Error::MalformedResponse(format!("proposal {}: {e}", p.id)))?;
        }
        Ok(select_proposals(proposals, cfg, width, height))
    }

    pub async fn request_category(&self, crop_uri: &str, det_name: &str, endpoint: &str) -> Result<AutoLabelRecord> {
        let body = NamingRequest {
            image_uri: crop_uri.to_owned(),
            prompt: NAMING_PROMPT.to_owned(),
        };
        let resp: NamingResponse = self.post_json(endpoint, &body).await?;
        Ok(parse_lvlm_record(det_name, &resp.text))
    }
}

/// Uri addressing a crop of `image_uri` through a media-fragment suffix.
pub fn crop_uri(image_uri: &str, bbox: &BBox) -> String {
    format!("{image_uri}#xywh={},{},{},{}", bbox.x, bbox.y, bbox.w, bbox.h)
}
