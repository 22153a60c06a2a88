//! Translation and quality-estimation backends.
//!
//! The router talks to engines through [`Translator`] and to the quality
//! estimator through [`QualityEstimator`]. Two families are provided:
//! seeded simulators ([`sim`]) and blocking HTTP clients ([`http`]) speaking
//! the JSON wire protocol below.
//!
//! ```text
//! POST /translate {"id": str, "source": str, "target_lang": str} -> {"translation": str}
//! POST /score     {"source": str, "hypotheses": [str]}           -> {"scores": [num]}
//! POST /embed     {"source": str}                                -> {"embedding": [num]}
//! GET  /meta                                                     -> {"embedding_dim": int, ...}
//! non-2xx                                                        -> {"error": str}
//! ```

pub mod http;
pub mod sim;

use std::sync::Arc;

use crate::domain::{EngineSpec, QeScore};
use crate::error::BackendError;

pub use http::{HttpConfig, HttpEmbedder, HttpQe, HttpTranslator};
pub use sim::{SimulatedQe, SimulatedTranslator, SimulatedWorld};

#[derive(Debug, Clone, Copy)]
pub struct RequestContext<'a> {
    pub request_id: &'a str,
    pub source: &'a str,
    pub target_lang: &'a str,
}

pub trait Translator: Send + Sync {
    fn translate(&self, engine: &EngineSpec, ctx: &RequestContext<'_>) -> Result<String, BackendError>;
}

pub trait QualityEstimator: Send + Sync {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QeScore, BackendError>;

    /// Scores several hypotheses for one source, preserving order.
    fn batch_score(&self, source: &str, hypotheses: &[&str]) -> Result<Vec<QeScore>, BackendError> {
        hypotheses.iter().map(|h| self.score(source, h)).collect()
    }
}

impl<T: Translator + ?Sized> Translator for Arc<T> {
    fn translate(&self, engine: &EngineSpec, ctx: &RequestContext<'_>) -> Result<String, BackendError> {
        (**self).translate(engine, ctx)
    }
}

impl<T: QualityEstimator + ?Sized> QualityEstimator for Arc<T> {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QeScore, BackendError> {
        (**self).score(source, hypothesis)
    }

    fn batch_score(&self, source: &str, hypotheses: &[&str]) -> Result<Vec<QeScore>, BackendError> {
        (**self).batch_score(source, hypotheses)
    }
}

/// Routes each engine id to its own translator.
pub struct EnginePool {
    translators: Vec<Arc<dyn Translator>>,
}

impl EnginePool {
    pub fn new(translators: Vec<Arc<dyn Translator>>) -> Self {
        Self { translators }
    }

    /// Builds translators from each engine's backend binding, using `sim`
    /// for simulated engines.
    pub fn from_specs(
        engines: &[EngineSpec],
        sim: Option<Arc<SimulatedWorld>>,
        http: &HttpConfig,
    ) -> crate::Result<Self> {
        let mut translators: Vec<Arc<dyn Translator>> = Vec::with_capacity(engines.len());
        for e in engines {
            match &e.backend {
                crate::domain::BackendKind::Sim => {
                    let world = sim.clone().ok_or_else(|| {
                        crate::Error::Config(format!(
                            "engine {} is simulated but no simulation is configured",
                            e.name
                        ))
                    })?;
                    translators.push(Arc::new(SimulatedTranslator::new(world)));
                }
                crate::domain::BackendKind::Http { endpoint } => {
                    translators.push(Arc::new(HttpTranslator::new(endpoint, http.clone())));
                }
            }
        }
        Ok(Self { translators })
    }
}

impl Translator for EnginePool {
    fn translate(&self, engine: &EngineSpec, ctx: &RequestContext<'_>) -> Result<String, BackendError> {
        self.translators
            .get(engine.engine_id)
            .ok_or_else(|| BackendError::Contract(format!("no translator for engine {}", engine.engine_id)))?
            .translate(engine, ctx)
    }
}
