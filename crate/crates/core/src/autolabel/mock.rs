//! Deterministic stand-ins for the proposal and naming services.
//!
//! Responses depend only on the seed and the request uri, so test runs are
//! reproducible. Transient 503s can be injected at a fixed rate; each request
//! key fails at most `max_consecutive_failures` times in a row.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::client::{NamingRequest, NamingResponse, ProposalRequest, ProposalResponse, ProposalRow};
use crate::error::{Error, Result};

pub const PROPOSAL_ROUTE: &str = "/v1/proposals";
pub const NAMING_ROUTE: &str = "/v1/name";

/// Canned naming replies. The first six mirror real engine output; the rest
/// exercise the low-likelihood and unparseable paths.
pub const MOCK_TEXTS: [&str; 9] = [
    "\"Road\" with a likelihood of 0.9. The image shows a paved surface with clear lane markings, which is characteristic of a road.",
    "\"Airport runway\" with a likelihood of 1. The image shows a large, flat, and elongated surface with distinct markings and lines.",
    "\"Airport\" with a likelihood of 0.9. The image shows a complex network of runways, taxiways, and terminal buildings.",
    "\"Runway\" with a likelihood of 0.9. The image shows a large, flat, and elongated area with distinct markings.",
    "\"Airplanes\" with a likelihood of 0.9. The image shows a row of objects that resemble the tail sections of airplanes.",
    "\"Unrecognized\" with a likelihood of 0.8. The image is too blurry and lacks clear features to confidently determine the object category.",
    "\"Storage tank\" with a likelihood of 0.3. A round structure is visible but the crop is too small to be sure.",
    "I am unable to describe this region.",
    "\"Ship\" with a likelihood of 0.95. An elongated hull is moored next to a pier.",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub seed: u64,
    pub failure_rate: f64,
    pub max_consecutive_failures: u32,
    /// When set, requests must carry `Authorization: Bearer <key>`.
    pub api_key: Option<String>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            failure_rate: 0.0,
            max_consecutive_failures: 2,
            api_key: None,
        }
    }
}

fn keyed_rng(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Proposals the mock returns for `image_uri`: 3 to 14 rows inside a 256 px frame,
/// some of which fall below the default quality thresholds.
pub fn mock_proposals(seed: u64, image_uri: &str) -> Vec<ProposalRow> {
    let mut rng = keyed_rng(seed, &["proposals", image_uri]);
    let n = rng.random_range(3..=14u64);
    (0..n)
        .map(|id| {
            let w = rng.random_range(4..=60u32) as f64;
            let h = rng.random_range(4..=60u32) as f64;
            let x = rng.random_range(0..=(256 - w as u32)) as f64;
            let y = rng.random_range(0..=(256 - h as u32)) as f64;
            let fill: f64 = rng.random_range(0.55..1.0);
            ProposalRow {
                id,
                area: (w * h * fill).round() as u64,
                bbox_x0: x,
                bbox_y0: y,
                bbox_w: w,
                bbox_h: h,
                point_input_x: x + w / 2.0,
                point_input_y: y + h / 2.0,
                predicted_iou: round4(rng.random_range(0.80..1.0)),
                stability_score: round4(rng.random_range(0.88..1.0)),
                crop_box_x0: 0.0,
                crop_box_y0: 0.0,
                crop_box_w: 256.0,
                crop_box_h: 256.0,
            }
        })
        .collect()
}

pub fn mock_text(seed: u64, crop_uri: &str) -> &'static str {
    let mut rng = keyed_rng(seed, &["name", crop_uri]);
    MOCK_TEXTS[rng.random_range(0..MOCK_TEXTS.len())]
}

struct MockState {
    cfg: MockConfig,
    attempts: Mutex<HashMap<String, u32>>,
    injected: AtomicU64,
    served: AtomicU64,
}

impl MockState {
    fn gate(&self, headers: &HeaderMap, key: String) -> Option<Response> {
        if let Some(k) = &self.cfg.api_key {
            let expected = format!("Bearer {k}");
            let ok = headers
                .get(axum::http::header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .is_some_and(|v| v == expected);
            if !ok {
                return Some(StatusCode::UNAUTHORIZED.into_response());
            }
        }
        let attempt = {
            let mut map = self.attempts.lock().expect("mock state poisoned");
            let slot = map.entry(key.clone()).or_insert(0);
            let a = *slot;
            *slot += 1;
            a
        };
        if attempt < self.cfg.max_consecutive_failures && self.cfg.failure_rate > 0.0 {
            let mut rng = keyed_rng(self.cfg.seed, &["fail", &key, &attempt.to_string()]);
            if rng.random::<f64>() < self.cfg.failure_rate {
                self.injected.fetch_add(1, Ordering::Relaxed);
                return Some(StatusCode::SERVICE_UNAVAILABLE.into_response());
            }
        }
        self.served.fetch_add(1, Ordering::Relaxed);
        None
    }
}

async fn proposals(State(s): State<Arc<MockState>>, headers: HeaderMap, Json(req): Json<ProposalRequest>) -> Response {
    if let Some(r) = s.gate(&headers, format!("p:{}", req.image_uri)) {
        return r;
    }
    Json(ProposalResponse {
        proposals: mock_proposals(s.cfg.seed, &req.image_uri),
    })
    .into_response()
}

async fn naming(State(s): State<Arc<MockState>>, headers: HeaderMap, Json(req): Json<NamingRequest>) -> Response {
    if let Some(r) = s.gate(&headers, format!("n:{}", req.image_uri)) {
        return r;
    }
    Json(NamingResponse {
        text: mock_text(s.cfg.seed, &req.image_uri).to_owned(),
    })
    .into_response()
}

pub struct MockServer {
    pub addr: SocketAddr,
    state: Arc<MockState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and serves on the current runtime.
    pub async fn start(cfg: MockConfig, addr: SocketAddr) -> Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let state = Arc::new(MockState {
            cfg,
            attempts: Mutex::new(HashMap::new()),
            injected: AtomicU64::new(0),
            served: AtomicU64::new(0),
        });
        let app = Router::new()
            .route(PROPOSAL_ROUTE, post(proposals))
            .route(NAMING_ROUTE, post(naming))
            .with_state(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = serve.await {
                tracing::error!(error = %e, "mock server stopped");
            }
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub async fn start_local(cfg: MockConfig) -> Result<Self> {
        Self::start(cfg, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub fn proposal_endpoint(&self) -> String {
        format!("http://{}{PROPOSAL_ROUTE}", self.addr)
    }

    pub fn naming_endpoint(&self) -> String {
        format!("http://{}{NAMING_ROUTE}", self.addr)
    }

    pub fn injected_failures(&self) -> u64 {
        self.state.injected.load(Ordering::Relaxed)
    }

    pub fn served(&self) -> u64 {
        self.state.served.load(Ordering::Relaxed)
    }

    /// Resolves when the server task exits, which only happens after [`MockServer::stop`].
    pub async fn wait(mut self) -> Result<()> {
        if let Some(t) = self.task.take() {
            t.await.map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        Ok(())
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.task.take() {
            let _ = t.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
