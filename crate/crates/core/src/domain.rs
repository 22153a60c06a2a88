//! Value types shared across the router: requests, feature vectors, engine
//! descriptions, class probabilities, configuration and step audit records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed-length feature vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("feature vector must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("feature {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FeatureVector<U> {
        FeatureVector {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// One translation request as it flows through the queue and router.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationRequest<T> {
    pub id: String,
    pub source: String,
    pub features: FeatureVector<T>,
    pub arrival_index: u64,
    latent_domain: Option<usize>,
}

impl<T: Scalar> TranslationRequest<T> {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        features: FeatureVector<T>,
        arrival_index: u64,
    ) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            features,
            arrival_index,
            latent_domain: None,
        }
    }

    /// Attaches simulation ground truth. Router code never reads it.
    pub fn with_latent_domain(mut self, domain: usize) -> Self {
        self.latent_domain = Some(domain);
        self
    }

    /// Ground-truth domain, for evaluation harnesses only.
    pub fn latent_domain(&self) -> Option<usize> {
        self.latent_domain
    }

    /// Source length in Unicode scalar values; the unit prices are charged in.
    pub fn char_count(&self) -> usize {
        self.source.chars().count()
    }

    pub fn cast<U: Scalar>(&self) -> TranslationRequest<U> {
        TranslationRequest {
            id: self.id.clone(),
            source: self.source.clone(),
            features: self.features.cast(),
            arrival_index: self.arrival_index,
            latent_domain: self.latent_domain,
        }
    }
}

/// Where an engine's translations come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSpec {
    pub engine_id: usize,
    pub name: String,
    pub price_per_million_chars: f64,
    #[serde(default)]
    pub backend: BackendKind,
}

impl EngineSpec {
    pub fn simulated(engine_id: usize, name: impl Into<String>, price: f64) -> Self {
        Self {
            engine_id,
            name: name.into(),
            price_per_million_chars: price,
            backend: BackendKind::Sim,
        }
    }

    pub fn cost_for(&self, chars: usize) -> f64 {
        self.price_per_million_chars * chars as f64 / 1e6
    }
}

/// Probability vector over the K engines.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities<T> {
    probs: Vec<T>,
}

impl<T: Scalar> ClassProbabilities<T> {
    /// Rejects vectors that leave the probability simplex by more than the
    /// scalar's simplex tolerance (1e-9 for f64).
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invalid("empty probability vector".into()));
        }
        let tol = T::simplex_tolerance(probs.len());
        let mut sum = 0.0;
        for (i, p) in probs.iter().enumerate() {
            let p = p.as_f64();
            if !p.is_finite() || p < -tol || p > 1.0 + tol {
                return Err(Error::Invalid(format!("probability {i} = {p} outside [0, 1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::Invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        let p = T::one() / T::of(k as f64);
        Self { probs: vec![p; k] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    /// Index of the largest probability; ties go to the lowest engine id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Quality-estimation score; higher is better.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct QeScore(f64);

impl QeScore {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::Invalid(format!("QE score {value} is not finite")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// How the queue refreshes cached entropies between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RerankPolicy {
    /// Recompute every stale entry before each pop.
    Full,
    /// Refresh only the popped candidate until its entropy is current.
    Lazy,
    /// Refresh the `n` stalest entries before each pop.
    Subset(usize),
    /// `Full` while the queue holds at most 1024 entries, else `Subset(64)`.
    #[default]
    Auto,
}

impl fmt::Display for RerankPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RerankPolicy::Full => write!(f, "full"),
            RerankPolicy::Lazy => write!(f, "lazy"),
            RerankPolicy::Subset(n) => write!(f, "subset:{n}"),
            RerankPolicy::Auto => write!(f, "auto"),
        }
    }
}

impl FromStr for RerankPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RerankPolicy::Full),
            "lazy" => Ok(RerankPolicy::Lazy),
            "auto" => Ok(RerankPolicy::Auto),
            _ => {
                let n = s
                    .strip_prefix("subset:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown rerank policy {s:?}")))?;
                Ok(RerankPolicy::Subset(n))
            }
        }
    }
}

impl Serialize for RerankPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RerankPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr / sqrt(1 + updates_seen)`.
    InvSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub max_mts: usize,
    pub alpha: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub l2: f64,
    pub lr_schedule: LrSchedule,
    pub rerank_policy: RerankPolicy,
    pub standardize_features: bool,
    /// Issue the translate calls of an explore step from parallel threads.
    pub concurrent_calls: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            max_mts: 4,
            alpha: 0.2,
            seed: 0,
            learning_rate: 0.1,
            l2: 1e-6,
            lr_schedule: LrSchedule::Constant,
            rerank_policy: RerankPolicy::Auto,
            standardize_features: false,
            concurrent_calls: false,
        }
    }
}

/// Checks a router configuration against the engine table.
pub fn validate_config(config: RouterConfig, engines: &[EngineSpec]) -> Result<RouterConfig> {
    let k = engines.len();
    if k == 0 {
        return Err(Error::Config("no engines configured".into()));
    }
    let mut seen = vec![false; k];
    for e in engines {
        if e.engine_id >= k || seen[e.engine_id] {
            return Err(Error::Config(format!(
                "engine ids must be exactly 0..{k} without gaps or duplicates (bad id {})",
                e.engine_id
            )));
        }
        seen[e.engine_id] = true;
        if !e.price_per_million_chars.is_finite() || e.price_per_million_chars < 0.0 {
            return Err(Error::Config(format!(
                "engine {} has invalid price {}",
                e.engine_id, e.price_per_million_chars
            )));
        }
    }
    if config.max_mts < 1 || config.max_mts > k {
        return Err(Error::Config(format!(
            "max_mts {} outside [1, {k}]",
            config.max_mts
        )));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::Config(format!("alpha {} outside [0, 1]", config.alpha)));
    }
    if !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    if !config.l2.is_finite() || config.l2 < 0.0 {
        return Err(Error::Config("l2 must be nonnegative".into()));
    }
    if config.rerank_policy == RerankPolicy::Subset(0) {
        return Err(Error::Config("subset rerank size must be at least 1".into()));
    }
    Ok(config)
}

/// Audit record of one routing decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub request_id: String,
    pub predicted_engine: usize,
    pub chosen_engine: usize,
    pub translation: String,
    /// Distinct engines translated during the step, ascending.
    pub engines_called: Vec<usize>,
    pub qe_calls: usize,
    pub cost: f64,
    pub explored: bool,
    pub learned_label: usize,
    pub entropy_at_decision: f64,
    pub source_chars: usize,
}

impl StepOutcome {
    /// Cost of the engines called, summed in ascending engine order.
    pub fn recompute_cost(&self, engines: &[EngineSpec]) -> f64 {
        step_cost(&self.engines_called, engines, self.source_chars)
    }
}

pub(crate) fn step_cost(called: &[usize], engines: &[EngineSpec], chars: usize) -> f64 {
    called
        .iter()
        .map(|&e| engines[e].cost_for(chars))
        .fold(0.0, |acc, c| acc + c)
}
