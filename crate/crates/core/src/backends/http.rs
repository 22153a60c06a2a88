//! Blocking HTTP clients for remote engines, the QE service and embeddings.
//!
//! Each client owns one endpoint base URL and an [`HttpConfig`]. Requests
//! are never retried unless `retries` is set explicitly; every attempt is
//! counted in [`calls`](HttpTranslator::calls) so cost audits can see them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{QualityEstimator, RequestContext, Translator};
use crate::domain::{EngineSpec, QeScore};
use crate::error::{BackendError, Error, Result};
use crate::features::EmbeddingSource;
use crate::scalar::Scalar;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_CONCURRENT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Whole-request timeout in milliseconds (default 30000).
    pub timeout_ms: u64,
    /// Concurrent in-flight requests allowed per endpoint (default 8).
    pub max_concurrent: usize,
    /// Extra attempts after a failure (default 0).
    pub retries: u32,
    pub target_lang: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT.as_millis() as u64,
            max_concurrent: DEFAULT_MAX_CONCURRENT,
            retries: 0,
            target_lang: "de".into(),
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Shared plumbing: one base URL, a capped agent and an attempt counter.
struct Endpoint {
    base: String,
    agent: ureq::Agent,
    permits: Permits,
    retries: u32,
    calls: AtomicU64,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

impl Endpoint {
    fn new(base: &str, cfg: &HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent,
            permits: Permits::new(cfg.max_concurrent),
            retries: cfg.retries,
            calls: AtomicU64::new(0),
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let mut result = self.post_once(path, body);
        for _ in 0..self.retries {
            if result.is_ok() {
                break;
            }
            result = self.post_once(path, body);
        }
        result
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let _permit = self.permits.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let url = format!("{}{}", self.base, path);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            return Err(BackendError::Status { status, message });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }

    fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R, BackendError> {
        let _permit = self.permits.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut resp = self
            .agent
            .get(&format!("{}{}", self.base, path))
            .call()
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, message: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    id: &'a str,
    source: &'a str,
    target_lang: &'a str,
}

#[derive(Deserialize)]
struct TranslateResponse {
    translation: String,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    source: &'a str,
    hypotheses: &'a [&'a str],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    source: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Service metadata served at `GET /meta`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ServiceMeta {
    pub embedding_dim: usize,
    #[serde(default)]
    pub model: Option<String>,
}

pub struct HttpTranslator {
    endpoint: Endpoint,
    target_lang: String,
}

impl HttpTranslator {
    pub fn new(base_url: &str, cfg: HttpConfig) -> Self {
        Self {
            endpoint: Endpoint::new(base_url, &cfg),
            target_lang: cfg.target_lang,
        }
    }

    pub fn calls(&self) -> u64 {
        self.endpoint.calls.load(Ordering::SeqCst)
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, _engine: &EngineSpec, ctx: &RequestContext<'_>) -> Result<String, BackendError> {
        let target_lang = if ctx.target_lang.is_empty() {
            &self.target_lang
        } else {
            ctx.target_lang
        };
        let resp: TranslateResponse = self.endpoint.post(
            "/translate",
            &TranslateRequest {
                id: ctx.request_id,
                source: ctx.source,
                target_lang,
            },
        )?;
        Ok(resp.translation)
    }
}

pub struct HttpQe {
    endpoint: Endpoint,
}

impl HttpQe {
    pub fn new(base_url: &str, cfg: HttpConfig) -> Self {
        Self {
            endpoint: Endpoint::new(base_url, &cfg),
        }
    }

    pub fn calls(&self) -> u64 {
        self.endpoint.calls.load(Ordering::SeqCst)
    }

    pub fn meta(&self) -> Result<ServiceMeta, BackendError> {
        self.endpoint.get("/meta")
    }
}

impl QualityEstimator for HttpQe {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QeScore, BackendError> {
        Ok(self.batch_score(source, &[hypothesis])?.remove(0))
    }

    fn batch_score(&self, source: &str, hypotheses: &[&str]) -> Result<Vec<QeScore>, BackendError> {
        let resp: ScoreResponse = self
            .endpoint
            .post("/score", &ScoreRequest { source, hypotheses })?;
        if resp.scores.len() != hypotheses.len() {
            return Err(BackendError::Malformed(format!(
                "{} scores for {} hypotheses",
                resp.scores.len(),
                hypotheses.len()
            )));
        }
        resp.scores
            .into_iter()
            .map(|s| QeScore::new(s).map_err(|e| BackendError::Malformed(e.to_string())))
            .collect()
    }
}

/// Fetches sentence embeddings from `POST /embed`.
pub struct HttpEmbedder {
    endpoint: Endpoint,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, cfg: HttpConfig, dim: usize) -> Self {
        Self {
            endpoint: Endpoint::new(base_url, &cfg),
            dim,
        }
    }

    pub fn calls(&self) -> u64 {
        self.endpoint.calls.load(Ordering::SeqCst)
    }
}

impl<T: Scalar> EmbeddingSource<T> for HttpEmbedder {
    fn embedding(&self, id: &str, source: &str) -> Result<Vec<T>> {
        let resp: EmbedResponse = self
            .endpoint
            .post("/embed", &EmbedRequest { source })
            .map_err(Error::Qe)?;
        if resp.embedding.len() != self.dim {
            return Err(Error::Format(format!(
                "embedding for {id:?} has dimension {}, expected {}",
                resp.embedding.len(),
                self.dim
            )));
        }
        if resp.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("embedding for {id:?} is not finite")));
        }
        Ok(resp.embedding.into_iter().map(T::of).collect())
    }
}
