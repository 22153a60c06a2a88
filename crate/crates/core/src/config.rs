//! TOML study configuration and assembly of an [`Experiment`] from it.
//!
//! ```toml
//! qe = "sim"                 # or "http:http://127.0.0.1:8080"
//! corpus = "corpus.jsonl"    # optional; generated from [simulation] otherwise
//!
//! [router]
//! max_mts = 4
//! alpha = 0.2
//!
//! [simulation]
//! n_requests = 2000
//! n_engines = 6
//! qe_noise_sigma = 0.01
//!
//! [grid]
//! max_mts = [1, 2, 3]
//! alpha = [0.1, 0.5]
//! repetitions = 5
//!
//! [[engine]]
//! engine_id = 0
//! name = "deepl"
//! price_per_million_chars = 20.0
//! backend = { kind = "http", endpoint = "http://127.0.0.1:9001" }
//! ```
//!
//! Evaluation always uses the simulated world: true quality has no
//! remote counterpart.

use std::fmt;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{EnginePool, HttpConfig, HttpQe, QualityEstimator, SimulatedQe};
use crate::domain::{validate_config, BackendKind, EngineSpec, RouterConfig};
use crate::error::{Error, Result};
use crate::harness::{Experiment, GridSpec};
use crate::simulation::{default_engines, generate_corpus, read_corpus, SimulationParams};

/// Where QE scores come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum QeSource {
    #[default]
    Sim,
    Http(String),
}

impl fmt::Display for QeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QeSource::Sim => write!(f, "sim"),
            QeSource::Http(url) => write!(f, "http:{url}"),
        }
    }
}

impl FromStr for QeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sim" {
            return Ok(QeSource::Sim);
        }
        match s.strip_prefix("http:") {
            Some(url) if !url.is_empty() => Ok(QeSource::Http(url.to_string())),
            _ => Err(Error::Config(format!("qe must be `sim` or `http:URL`, got {s:?}"))),
        }
    }
}

impl Serialize for QeSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QeSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub qe: QeSource,
    pub corpus: Option<PathBuf>,
    /// Run a cell's repetitions on parallel threads.
    pub parallel: bool,
    pub router: RouterConfig,
    pub simulation: SimulationParams,
    pub grid: GridSpec,
    pub http: HttpConfig,
    /// Empty means the simulator's default price table.
    #[serde(rename = "engine")]
    pub engines: Vec<EngineSpec>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            qe: QeSource::Sim,
            corpus: None,
            parallel: true,
            router: RouterConfig::default(),
            simulation: SimulationParams::default(),
            grid: GridSpec::default(),
            http: HttpConfig::default(),
            engines: Vec::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineFile {
    engine: Vec<EngineSpec>,
}

/// Reads an engine table (`[[engine]]` entries) from a TOML file.
pub fn load_engines(path: &Path) -> Result<Vec<EngineSpec>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file: EngineFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    check_engines(&file.engine)?;
    Ok(file.engine)
}

fn check_engines(engines: &[EngineSpec]) -> Result<()> {
    for (i, e) in engines.iter().enumerate() {
        if e.engine_id != i {
            return Err(Error::Config(format!(
                "engine ids must be 0..K in order; entry {i} has id {}",
                e.engine_id
            )));
        }
        if !e.price_per_million_chars.is_finite() || e.price_per_million_chars < 0.0 {
            return Err(Error::Config(format!("engine {} has an invalid price", e.name)));
        }
    }
    Ok(())
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative corpus paths are relative to the config file.
        if let (Some(c), Some(dir)) = (&cfg.corpus, path.parent()) {
            if c.is_relative() {
                cfg.corpus = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    /// The engine table in effect, checked against the router settings.
    pub fn engines(&self) -> Result<Vec<EngineSpec>> {
        let engines = if self.engines.is_empty() {
            default_engines(self.simulation.corpus.n_engines)
        } else {
            self.engines.clone()
        };
        check_engines(&engines)?;
        if engines.len() != self.simulation.corpus.n_engines {
            return Err(Error::Config(format!(
                "{} engines configured but the simulation models {}",
                engines.len(),
                self.simulation.corpus.n_engines
            )));
        }
        validate_config(self.router.clone(), &engines)?;
        Ok(engines)
    }

    /// Loads or generates the corpus and binds it to backends.
    pub fn experiment(&self) -> Result<Experiment> {
        let mut sim = self.simulation.clone();
        let requests = match &self.corpus {
            Some(path) => {
                let f = File::open(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let (params, requests) = read_corpus(BufReader::new(f))?;
                if let Some(p) = params {
                    sim.corpus = p;
                }
                sim.corpus.n_requests = requests.len();
                requests
            }
            None => generate_corpus(&sim.corpus)?,
        };
        let cfg = StudyConfig {
            simulation: sim.clone(),
            ..self.clone()
        };
        let engines = cfg.engines()?;
        let world = sim.world(&requests)?;
        let translator = EnginePool::from_specs(&engines, Some(world.clone()), &self.http)?;
        let qe: Arc<dyn QualityEstimator> = match &self.qe {
            QeSource::Sim => Arc::new(SimulatedQe::new(world.clone())),
            QeSource::Http(url) => Arc::new(HttpQe::new(url, self.http.clone())),
        };
        Ok(Experiment {
            requests,
            engines,
            translator: Arc::new(translator),
            qe,
            oracle: world,
            router: self.router.clone(),
            parallel: self.parallel,
        })
    }

    pub fn uses_remote_backends(&self) -> bool {
        matches!(self.qe, QeSource::Http(_))
            || self
                .engines
                .iter()
                .any(|e| matches!(e.backend, BackendKind::Http { .. }))
    }
}
