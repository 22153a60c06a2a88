//! The routing loop.
//!
//! One [`Router::step`] handles one request:
//!
//! 1. refresh queue entropies and pop the most uncertain request;
//! 2. predict engine probabilities `p`, take `pred = argmax p`;
//! 3. translate with `pred`;
//! 4. draw an ordered engine sample of size `max_mts` and compute the
//!    normalized entropy `h` of `p`;
//! 5. exploit when the sample leads with `pred` and `h < alpha`: learn
//!    `pred`, answer with its translation, no QE calls;
//! 6. otherwise explore: translate every sampled engine, score all distinct
//!    candidates, and switch to the best sampled engine only if its score
//!    strictly beats `pred`'s. The answered engine is the learned label.
//!
//! A failing backend aborts the step before the learner is touched and puts
//! the request back in the queue.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::{QualityEstimator, RequestContext, Translator};
use crate::classifier::{normalized_entropy, Learner, OnlineSoftmaxModel};
use crate::domain::{step_cost, validate_config, EngineSpec, RouterConfig, StepOutcome, TranslationRequest};
use crate::error::{Error, Result};
use crate::features::RunningStats;
use crate::queue::RankedQueue;
use crate::sampler::sample_engines;
use crate::scalar::Scalar;

/// Translations already obtained in this run, keyed by request and engine.
#[derive(Debug, Default)]
pub struct TranslationCache {
    entries: HashMap<(String, usize), String>,
    backend_calls: u64,
}

impl TranslationCache {
    pub fn get(&self, request_id: &str, engine: usize) -> Option<&str> {
        self.entries
            .get(&(request_id.to_string(), engine))
            .map(String::as_str)
    }

    /// Number of translations fetched from backends (cache misses).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn insert(&mut self, request_id: &str, engine: usize, text: String) {
        self.backend_calls += 1;
        self.entries.insert((request_id.to_string(), engine), text);
    }

    fn evict(&mut self, request_id: &str, engines: usize) {
        for e in 0..engines {
            self.entries.remove(&(request_id.to_string(), e));
        }
    }
}

pub struct Router<T: Scalar, L: Learner<T>> {
    config: RouterConfig,
    engines: Vec<EngineSpec>,
    translator: Arc<dyn Translator>,
    qe: Arc<dyn QualityEstimator>,
    learner: L,
    queue: RankedQueue<T>,
    rng: ChaCha8Rng,
    cache: TranslationCache,
    stats: Option<RunningStats<T>>,
    seen_ids: HashSet<String>,
    target_lang: String,
    backend_time: Duration,
}

impl<T: Scalar> Router<T, OnlineSoftmaxModel<T>> {
    /// Router backed by a zero-initialized softmax model over `dim` features.
    pub fn with_softmax(
        config: RouterConfig,
        engines: Vec<EngineSpec>,
        translator: Arc<dyn Translator>,
        qe: Arc<dyn QualityEstimator>,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let model = OnlineSoftmaxModel::new(engines.len().max(1), dim, config.learning_rate, config.l2)
            .with_schedule(config.lr_schedule);
        Self::new(config, engines, translator, qe, model)
    }
}

impl<T: Scalar, L: Learner<T>> Router<T, L> {
    pub fn new(
        config: RouterConfig,
        engines: Vec<EngineSpec>,
        translator: Arc<dyn Translator>,
        qe: Arc<dyn QualityEstimator>,
        learner: L,
    ) -> Result<Self> {
        let mut engines = engines;
        engines.sort_by_key(|e| e.engine_id);
        let config = validate_config(config, &engines)?;
        if learner.classes() != engines.len() {
            return Err(Error::Config(format!(
                "learner has {} classes but {} engines are configured",
                learner.classes(),
                engines.len()
            )));
        }
        let stats = config
            .standardize_features
            .then(|| RunningStats::new(learner.dim()));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            queue: RankedQueue::new(config.rerank_policy),
            config,
            engines,
            translator,
            qe,
            learner,
            cache: TranslationCache::default(),
            stats,
            seen_ids: HashSet::new(),
            target_lang: String::new(),
            backend_time: Duration::ZERO,
        })
    }

    pub fn with_target_lang(mut self, lang: impl Into<String>) -> Self {
        self.target_lang = lang.into();
        self
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn engines(&self) -> &[EngineSpec] {
        &self.engines
    }

    pub fn learner(&self) -> &L {
        &self.learner
    }

    pub fn queue(&self) -> &RankedQueue<T> {
        &self.queue
    }

    pub fn cache(&self) -> &TranslationCache {
        &self.cache
    }

    /// Wall time spent inside backend calls so far.
    pub fn backend_time(&self) -> Duration {
        self.backend_time
    }

    /// Enqueues a request. Ids must be unique for the lifetime of the router.
    pub fn push(&mut self, mut request: TranslationRequest<T>) -> Result<()> {
        if request.features.dim() != self.learner.dim() {
            return Err(Error::Dimension {
                expected: self.learner.dim(),
                got: request.features.dim(),
            });
        }
        if self.seen_ids.contains(&request.id) {
            return Err(Error::DuplicateId(request.id));
        }
        if let Some(stats) = &mut self.stats {
            request.features = stats.standardize(&request.features)?;
        }
        self.seen_ids.insert(request.id.clone());
        self.queue.push(request)
    }

    /// Processes the most uncertain pending request.
    pub fn step(&mut self) -> Result<StepOutcome> {
        self.queue.rerank(&self.learner)?;
        let entry = self.queue.pop_with(&self.learner)?;
        let request = entry.request;
        let rng_before = self.rng.clone();
        match self.decide(&request) {
            Ok(outcome) => {
                self.cache.evict(&request.id, self.engines.len());
                Ok(outcome)
            }
            Err(e) => {
                self.rng = rng_before;
                self.queue.push(request)?;
                Err(e)
            }
        }
    }

    /// Drains the queue, returning outcomes in processing order.
    pub fn drain(&mut self) -> Result<Vec<StepOutcome>> {
        let mut out = Vec::with_capacity(self.queue.len());
        while !self.queue.is_empty() {
            match self.step() {
                Ok(o) => out.push(o),
                Err(e) => {
                    return Err(Error::Run {
                        completed: out.len(),
                        source: Box::new(e),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Pushes every request, then drains the queue.
    pub fn run(&mut self, requests: Vec<TranslationRequest<T>>) -> Result<Vec<StepOutcome>> {
        for r in requests {
            self.push(r)?;
        }
        self.drain()
    }

    fn translate(&mut self, request: &TranslationRequest<T>, engine: usize) -> Result<String> {
        if let Some(t) = self.cache.get(&request.id, engine) {
            return Ok(t.to_string());
        }
        let spec = &self.engines[engine];
        let ctx = RequestContext {
            request_id: &request.id,
            source: &request.source,
            target_lang: &self.target_lang,
        };
        let started = Instant::now();
        let result = self.translator.translate(spec, &ctx);
        self.backend_time += started.elapsed();
        let text = result.map_err(|source| Error::Backend {
            engine,
            name: spec.name.clone(),
            source,
        })?;
        self.cache.insert(&request.id, engine, text.clone());
        Ok(text)
    }

    /// Fetches all uncached engines at once from scoped threads. Results are
    /// inserted in ascending engine order; the first failure (by engine id)
    /// is reported.
    fn translate_concurrently(&mut self, request: &TranslationRequest<T>, engines: &BTreeSet<usize>) -> Result<()> {
        let missing: Vec<usize> = engines
            .iter()
            .copied()
            .filter(|&e| self.cache.get(&request.id, e).is_none())
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let ctx = RequestContext {
            request_id: &request.id,
            source: &request.source,
            target_lang: &self.target_lang,
        };
        let started = Instant::now();
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = missing
                .iter()
                .map(|&e| {
                    let spec = &self.engines[e];
                    let tr = &self.translator;
                    s.spawn(move || tr.translate(spec, &ctx))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("translator thread panicked")).collect()
        });
        self.backend_time += started.elapsed();
        let mut first_err = None;
        for (&e, r) in missing.iter().zip(results) {
            match r {
                Ok(text) => self.cache.insert(&request.id, e, text),
                Err(source) => {
                    first_err.get_or_insert(Error::Backend {
                        engine: e,
                        name: self.engines[e].name.clone(),
                        source,
                    });
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    fn decide(&mut self, request: &TranslationRequest<T>) -> Result<StepOutcome> {
        let p = self.learner.predict_proba(&request.features)?;
        let pred = p.argmax();
        let pred_text = self.translate(request, pred)?;
        let sampled = sample_engines(&p, self.config.max_mts, &mut self.rng)?;
        let entropy = normalized_entropy(&p).as_f64();

        let mut called = BTreeSet::from([pred]);
        let (label, translation, qe_calls, explored);
        if sampled[0] == pred && entropy < self.config.alpha {
            label = pred;
            translation = pred_text;
            qe_calls = 0;
            explored = false;
        } else {
            called.extend(sampled.iter().copied());
            if self.config.concurrent_calls {
                self.translate_concurrently(request, &called)?;
            }
            let mut texts = BTreeMap::new();
            for &e in &called {
                texts.insert(e, self.translate(request, e)?);
            }
            let hyps: Vec<&str> = texts.values().map(String::as_str).collect();
            let started = Instant::now();
            let scored = self.qe.batch_score(&request.source, &hyps);
            self.backend_time += started.elapsed();
            let scored = scored.map_err(Error::Qe)?;
            let n_hyps = hyps.len();
            drop(hyps);
            if scored.len() != n_hyps {
                return Err(Error::Invariant("QE returned a wrong number of scores".into()));
            }
            let scores: BTreeMap<usize, f64> =
                texts.keys().copied().zip(scored.iter().map(|s| s.value())).collect();

            let pred_score = scores[&pred];
            let mut best = sampled[0];
            for &e in &sampled[1..] {
                if scores[&e] > scores[&best] || (scores[&e] == scores[&best] && e < best) {
                    best = e;
                }
            }
            if scores[&best] > pred_score {
                label = best;
                translation = texts.remove(&best).expect("sampled engine was translated");
            } else {
                label = pred;
                translation = pred_text;
            }
            qe_calls = n_hyps;
            explored = true;
        }

        self.learner.learn(&request.features, label)?;

        let engines_called: Vec<usize> = called.into_iter().collect();
        let source_chars = request.char_count();
        Ok(StepOutcome {
            request_id: request.id.clone(),
            predicted_engine: pred,
            chosen_engine: label,
            translation,
            cost: step_cost(&engines_called, &self.engines, source_chars),
            engines_called,
            qe_calls,
            explored,
            learned_label: label,
            entropy_at_decision: entropy,
            source_chars,
        })
    }
}
