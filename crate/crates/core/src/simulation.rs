//! Seeded synthetic corpora.
//!
//! Each request belongs to a hidden domain `d`, drawn uniformly. Its
//! features are `signal * e_d` (the one-hot for `d` in the first D
//! dimensions of an F-dimensional vector) plus independent Gaussian noise,
//! so the domain, and with it the best engine, is learnable from features.
//! Everything about request `i` is drawn from its own derived RNG, so
//! generation is order-independent and reproducible from the seed.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backends::SimulatedWorld;
use crate::domain::{EngineSpec, FeatureVector, TranslationRequest};
use crate::error::{Error, Result};
use crate::seeding::SeedKey;

pub const CORPUS_FORMAT: &str = "mtroute-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub n_requests: usize,
    pub n_domains: usize,
    pub n_engines: usize,
    pub feature_dim: usize,
    pub feature_signal: f64,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n_requests: 2000,
            n_domains: 4,
            n_engines: 6,
            feature_dim: 32,
            feature_signal: 1.0,
            feature_noise_sigma: 0.3,
            seed: 1,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_requests == 0 || self.n_domains == 0 || self.n_engines == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if self.feature_dim < self.n_domains {
            return Err(Error::Config(format!(
                "feature_dim {} must be at least n_domains {}",
                self.feature_dim, self.n_domains
            )));
        }
        if self.feature_signal.is_nan()
            || self.feature_signal < 0.0
            || self.feature_noise_sigma.is_nan()
            || self.feature_noise_sigma < 0.0
        {
            return Err(Error::Config("signal and noise must be nonnegative".into()));
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ba", "de", "fi", "go", "hu", "ja", "po", "ze",
];

pub fn generate_corpus(params: &CorpusParams) -> Result<Vec<TranslationRequest<f64>>> {
    params.validate()?;
    let noise = Normal::new(0.0, params.feature_noise_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..params.n_requests)
        .map(|i| {
            let mut rng = SeedKey::new(params.seed).str("request").int(i as u64).rng();
            let domain = rng.random_range(0..params.n_domains);
            let mut x: Vec<f64> = (0..params.feature_dim)
                .map(|_| noise.sample(&mut rng))
                .collect();
            x[domain] += params.feature_signal;

            let words = rng.random_range(3..=30);
            let mut source = String::new();
            for w in 0..words {
                if w > 0 {
                    source.push(' ');
                }
                for _ in 0..rng.random_range(1..=3) {
                    source.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
                }
            }
            TranslationRequest::new(
                format!("req-{i:06}"),
                source,
                FeatureVector::new(x).expect("finite features"),
                i as u64,
            )
            .with_latent_domain(domain)
        })
        .collect())
}

/// Mean-quality table with one specialist per domain (engine `e < D` is best
/// on domain `e`) and uniform generalists for `e >= D`.
pub fn default_quality_matrix(engines: usize, domains: usize) -> Vec<Vec<f64>> {
    (0..engines)
        .map(|e| {
            (0..domains)
                .map(|d| {
                    if e >= domains {
                        0.76 - 0.01 * (e - domains) as f64
                    } else if e == d {
                        0.86
                    } else {
                        0.62 + 0.03 * ((e + 2 * d) % 3) as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Prices per million characters, spread over [8, 24] so the cheapest engine
/// costs a third of the most expensive one.
pub fn default_prices(engines: usize) -> Vec<f64> {
    if engines == 1 {
        return vec![8.0];
    }
    (0..engines)
        .map(|e| 8.0 + 16.0 * ((e * 5) % engines) as f64 / (engines - 1) as f64)
        .collect()
}

pub fn default_engines(engines: usize) -> Vec<EngineSpec> {
    default_prices(engines)
        .into_iter()
        .enumerate()
        .map(|(i, p)| EngineSpec::simulated(i, format!("sim-{i}"), p))
        .collect()
}

/// Everything needed to simulate a study: corpus shape plus engine and
/// estimator noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationParams {
    #[serde(flatten)]
    pub corpus: CorpusParams,
    pub quality_noise_sigma: f64,
    pub qe_noise_sigma: f64,
    pub quality_matrix: Option<Vec<Vec<f64>>>,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            corpus: CorpusParams::default(),
            quality_noise_sigma: 0.04,
            qe_noise_sigma: 0.01,
            quality_matrix: None,
        }
    }
}

impl SimulationParams {
    pub fn quality_matrix(&self) -> Vec<Vec<f64>> {
        self.quality_matrix.clone().unwrap_or_else(|| {
            default_quality_matrix(self.corpus.n_engines, self.corpus.n_domains)
        })
    }

    /// Builds the hidden world for `requests`, keyed by the corpus seed.
    pub fn world(&self, requests: &[TranslationRequest<f64>]) -> Result<Arc<SimulatedWorld>> {
        let qm = self.quality_matrix();
        if qm.len() != self.corpus.n_engines || qm.iter().any(|r| r.len() != self.corpus.n_domains) {
            return Err(Error::Config("quality_matrix must be n_engines x n_domains".into()));
        }
        let mut world = SimulatedWorld::new(
            self.corpus.seed,
            qm,
            self.quality_noise_sigma,
            self.qe_noise_sigma,
        )?;
        world.register_all(requests)?;
        Ok(Arc::new(world))
    }
}

/// Noise-free quality of `engine` on `request`; evaluation only.
pub fn true_quality(
    world: &SimulatedWorld,
    request: &TranslationRequest<f64>,
    engine: usize,
) -> Result<f64> {
    world.true_quality(&request.id, engine)
}

#[derive(Serialize, Deserialize)]
struct RequestRecord {
    id: String,
    source: String,
    arrival_index: u64,
    latent_domain: Option<usize>,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    params: Option<CorpusParams>,
    n_requests: usize,
}

/// Writes a corpus as JSON lines: a header object followed by one object
/// per request (`id`, `source`, `arrival_index`, `latent_domain`,
/// `features`).
pub fn write_corpus<W: Write>(
    mut w: W,
    params: Option<&CorpusParams>,
    requests: &[TranslationRequest<f64>],
) -> Result<()> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        params: params.cloned(),
        n_requests: requests.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).map_err(json_err)?)?;
    for r in requests {
        let rec = RequestRecord {
            id: r.id.clone(),
            source: r.source.clone(),
            arrival_index: r.arrival_index,
            latent_domain: r.latent_domain(),
            features: r.features.values().to_vec(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).map_err(json_err)?)?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<(Option<CorpusParams>, Vec<TranslationRequest<f64>>)> {
    let mut lines = r.lines();
    let header: CorpusHeader = serde_json::from_str(
        &lines
            .next()
            .ok_or_else(|| Error::Format("empty corpus file".into()))??,
    )
    .map_err(json_err)?;
    if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
        return Err(Error::Format(format!(
            "unsupported corpus {} v{}",
            header.format, header.version
        )));
    }
    let mut requests = Vec::with_capacity(header.n_requests);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RequestRecord = serde_json::from_str(&line).map_err(json_err)?;
        let mut req = TranslationRequest::new(
            rec.id,
            rec.source,
            FeatureVector::new(rec.features)?,
            rec.arrival_index,
        );
        if let Some(d) = rec.latent_domain {
            req = req.with_latent_domain(d);
        }
        requests.push(req);
    }
    if requests.len() != header.n_requests {
        return Err(Error::Format(format!(
            "header announces {} requests, found {}",
            header.n_requests,
            requests.len()
        )));
    }
    Ok((header.params, requests))
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}
