//! Seeded stand-ins for MT engines and the quality estimator.
//!
//! Engine `e` translating a request from latent domain `d` has hidden true
//! quality `q* = clamp(Q[e][d] + sigma_q * z, 0, 1)` and the estimator
//! reports `q* + sigma_qe * z'`. Both `z` and `z'` are standard normal draws
//! keyed by `(seed, request_id, engine_id)` and a tag, so every value is a
//! pure function of its coordinates.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{QualityEstimator, RequestContext, Translator};
use crate::domain::{EngineSpec, QeScore, TranslationRequest};
use crate::error::{BackendError, Error, Result};
use crate::scalar::Scalar;
use crate::seeding::SeedKey;

const HYP_PREFIX: &str = "sim:e";

#[derive(Debug, Clone)]
pub struct SimulatedWorld {
    seed: u64,
    quality_matrix: Vec<Vec<f64>>,
    quality_noise_sigma: f64,
    qe_noise_sigma: f64,
    domains: HashMap<String, usize>,
}

impl SimulatedWorld {
    /// `quality_matrix[e][d]` is the mean quality of engine `e` on domain `d`.
    pub fn new(
        seed: u64,
        quality_matrix: Vec<Vec<f64>>,
        quality_noise_sigma: f64,
        qe_noise_sigma: f64,
    ) -> Result<Self> {
        let d = quality_matrix.first().map_or(0, Vec::len);
        if quality_matrix.is_empty() || d == 0 {
            return Err(Error::Config("quality matrix must be non-empty".into()));
        }
        for (e, row) in quality_matrix.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Config(format!("quality matrix row {e} is ragged")));
            }
            if row.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(Error::Config(format!("quality matrix row {e} leaves [0, 1]")));
            }
        }
        for (name, s) in [("quality", quality_noise_sigma), ("qe", qe_noise_sigma)] {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Config(format!("{name} noise sigma must be >= 0")));
            }
        }
        Ok(Self {
            seed,
            quality_matrix,
            quality_noise_sigma,
            qe_noise_sigma,
            domains: HashMap::new(),
        })
    }

    pub fn engines(&self) -> usize {
        self.quality_matrix.len()
    }

    pub fn domains(&self) -> usize {
        self.quality_matrix[0].len()
    }

    pub fn quality_matrix(&self) -> &[Vec<f64>] {
        &self.quality_matrix
    }

    pub fn register(&mut self, request_id: impl Into<String>, domain: usize) -> Result<()> {
        if domain >= self.domains() {
            return Err(Error::Invalid(format!("domain {domain} out of range")));
        }
        self.domains.insert(request_id.into(), domain);
        Ok(())
    }

    /// Registers every request's latent domain.
    pub fn register_all<T: Scalar>(&mut self, requests: &[TranslationRequest<T>]) -> Result<()> {
        for r in requests {
            let d = r
                .latent_domain()
                .ok_or_else(|| Error::Invalid(format!("request {} has no latent domain", r.id)))?;
            self.register(r.id.clone(), d)?;
        }
        Ok(())
    }

    fn domain_of(&self, request_id: &str) -> Result<usize> {
        self.domains
            .get(request_id)
            .copied()
            .ok_or_else(|| Error::Lookup(request_id.to_string()))
    }

    fn check_engine(&self, engine: usize) -> Result<()> {
        if engine >= self.engines() {
            return Err(Error::Lookup(format!("engine {engine}")));
        }
        Ok(())
    }

    /// Hidden noise-free quality of `engine` on `request_id`.
    pub fn true_quality(&self, request_id: &str, engine: usize) -> Result<f64> {
        self.check_engine(engine)?;
        let d = self.domain_of(request_id)?;
        let mean = self.quality_matrix[engine][d];
        if self.quality_noise_sigma == 0.0 {
            return Ok(mean);
        }
        let z: f64 = SeedKey::new(self.seed)
            .str("quality")
            .str(request_id)
            .int(engine as u64)
            .rng()
            .sample(StandardNormal);
        Ok((mean + self.quality_noise_sigma * z).clamp(0.0, 1.0))
    }

    /// Noisy estimator reading for `(request_id, engine)`.
    pub fn qe_value(&self, request_id: &str, engine: usize) -> Result<f64> {
        let q = self.true_quality(request_id, engine)?;
        if self.qe_noise_sigma == 0.0 {
            return Ok(q);
        }
        let z: f64 = SeedKey::new(self.seed)
            .str("qe")
            .str(request_id)
            .int(engine as u64)
            .rng()
            .sample(StandardNormal);
        Ok(q + self.qe_noise_sigma * z)
    }

    /// Synthetic hypothesis text. It carries `(request_id, engine)` in a
    /// header so the simulated estimator can recover them.
    pub fn hypothesis(&self, request_id: &str, engine: usize, source: &str) -> String {
        let mut rng = SeedKey::new(self.seed)
            .str("text")
            .str(request_id)
            .int(engine as u64)
            .rng();
        let mut out = format!("{HYP_PREFIX}{engine}:{}:{request_id}|", request_id.len());
        for (i, _) in source.split_whitespace().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let w: u32 = rng.random_range(0..0x10000);
            out.push_str(&format!("w{w:04x}"));
        }
        out
    }

    /// Inverse of [`hypothesis`](Self::hypothesis)'s header.
    pub fn parse_hypothesis(h: &str) -> Option<(&str, usize)> {
        let rest = h.strip_prefix(HYP_PREFIX)?;
        let (engine, rest) = rest.split_once(':')?;
        let (len, rest) = rest.split_once(':')?;
        let len: usize = len.parse().ok()?;
        let id = rest.get(..len)?;
        if !rest[len..].starts_with('|') {
            return None;
        }
        Some((id, engine.parse().ok()?))
    }
}

pub struct SimulatedTranslator {
    world: Arc<SimulatedWorld>,
}

impl SimulatedTranslator {
    pub fn new(world: Arc<SimulatedWorld>) -> Self {
        Self { world }
    }
}

impl Translator for SimulatedTranslator {
    fn translate(&self, engine: &EngineSpec, ctx: &RequestContext<'_>) -> Result<String, BackendError> {
        self.world
            .check_engine(engine.engine_id)
            .and_then(|_| self.world.domain_of(ctx.request_id))
            .map_err(|e| BackendError::Contract(e.to_string()))?;
        Ok(self.world.hypothesis(ctx.request_id, engine.engine_id, ctx.source))
    }
}

pub struct SimulatedQe {
    world: Arc<SimulatedWorld>,
}

impl SimulatedQe {
    pub fn new(world: Arc<SimulatedWorld>) -> Self {
        Self { world }
    }
}

impl QualityEstimator for SimulatedQe {
    fn score(&self, _source: &str, hypothesis: &str) -> Result<QeScore, BackendError> {
        let (id, engine) = SimulatedWorld::parse_hypothesis(hypothesis)
            .ok_or_else(|| BackendError::Contract("hypothesis was not produced by this simulation".into()))?;
        let v = self
            .world
            .qe_value(id, engine)
            .map_err(|e| BackendError::Contract(e.to_string()))?;
        QeScore::new(v).map_err(|e| BackendError::Contract(e.to_string()))
    }
}
