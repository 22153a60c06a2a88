//! Experiment driver: grid studies over `(max_mts, alpha)`, repetition
//! averaging, the two reference baselines, and the metrics that compare
//! the router against the full ensemble.
//!
//! Every number in an [`ExperimentReport`] is derived from per-step
//! [`AuditRecord`]s and per-request [`BaselineRecord`]s through the same
//! aggregation code that [`report::recompute`] runs over audit files, so a
//! report can be rebuilt exactly from its audit trail.

pub mod metrics;
pub mod report;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{QualityEstimator, RequestContext, SimulatedWorld, Translator};
use crate::domain::{step_cost, EngineSpec, RouterConfig, StepOutcome, TranslationRequest};
use crate::error::{Error, Result};
use crate::router::Router;
use crate::seeding::SeedKey;

pub use metrics::{confusion_matrix, mean_std, weighted_f1, windowed_f1, ConfusionMatrix};

/// Noise-free evaluation quality; the harness's stand-in for a
/// reference-based metric.
pub trait QualityOracle: Send + Sync {
    fn true_quality(&self, request_id: &str, engine: usize) -> Result<f64>;
}

impl QualityOracle for SimulatedWorld {
    fn true_quality(&self, request_id: &str, engine: usize) -> Result<f64> {
        SimulatedWorld::true_quality(self, request_id, engine)
    }
}

/// One routed request as written to the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub step: usize,
    #[serde(flatten)]
    pub outcome: StepOutcome,
    /// Evaluation quality of the answered translation.
    pub true_quality: f64,
    /// The full ensemble's pick for the same request.
    pub ensemble_choice: usize,
}

/// Full-ensemble evaluation of one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub request_id: String,
    pub source_chars: usize,
    pub ensemble_choice: usize,
    pub qe_scores: Vec<f64>,
    pub true_qualities: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullEnsembleSummary {
    pub total_cost: f64,
    pub mean_quality: f64,
    pub engine_calls: u64,
    pub qe_calls: u64,
}

impl FullEnsembleSummary {
    pub fn from_records(records: &[BaselineRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let k = records.first().map_or(0, |r| r.qe_scores.len()) as u64;
        Self {
            total_cost: records.iter().fold(0.0, |a, r| a + r.cost),
            mean_quality: records
                .iter()
                .fold(0.0, |a, r| a + r.true_qualities[r.ensemble_choice])
                / n,
            engine_calls: k * records.len() as u64,
            qe_calls: k * records.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMtSummary {
    pub engine: usize,
    pub total_cost: f64,
    pub mean_quality: f64,
}

impl BestMtSummary {
    /// Picks the engine with the highest mean evaluation quality (ties to
    /// the lowest id) from per-request quality rows.
    pub fn from_qualities(rows: &[(usize, Vec<f64>)], engines: &[EngineSpec]) -> Result<Self> {
        let k = engines.len();
        if rows.is_empty() || k == 0 {
            return Err(Error::Invalid("best-MT baseline needs requests and engines".into()));
        }
        let mut sums = vec![0.0; k];
        for (_, q) in rows {
            for (s, v) in sums.iter_mut().zip(q) {
                *s += v;
            }
        }
        let mut best = 0;
        for e in 1..k {
            if sums[e] > sums[best] {
                best = e;
            }
        }
        let total_cost = rows
            .iter()
            .fold(0.0, |a, (chars, _)| a + engines[best].cost_for(*chars));
        Ok(Self {
            engine: best,
            total_cost,
            mean_quality: sums[best] / rows.len() as f64,
        })
    }
}

/// Best single engine by mean evaluation quality over the corpus.
pub fn baseline_best_mt(
    requests: &[TranslationRequest<f64>],
    engines: &[EngineSpec],
    oracle: &dyn QualityOracle,
) -> Result<BestMtSummary> {
    let rows = requests
        .iter()
        .map(|r| {
            let q = (0..engines.len())
                .map(|e| oracle.true_quality(&r.id, e))
                .collect::<Result<Vec<_>>>()?;
            Ok((r.char_count(), q))
        })
        .collect::<Result<Vec<_>>>()?;
    BestMtSummary::from_qualities(&rows, engines)
}

/// Grid definition. Alpha values are used verbatim as thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Empty means `1..=K`.
    pub max_mts: Vec<usize>,
    pub alpha: Vec<f64>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Sliding window for the weighted-F1 convergence series.
    pub window: usize,
    /// Number of leading requests the confusion matrix covers.
    pub confusion_prefix: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            max_mts: Vec::new(),
            alpha: (1..=10).map(|i| i as f64 / 10.0).collect(),
            repetitions: 1,
            base_seed: 0,
            window: 100,
            confusion_prefix: 100,
        }
    }
}

impl GridSpec {
    pub fn max_mts_for(&self, k: usize) -> Vec<usize> {
        if self.max_mts.is_empty() {
            (1..=k).collect()
        } else {
            self.max_mts.clone()
        }
    }

    /// Cells in report order: ascending `max_mts`, then ascending `alpha`.
    pub fn cells(&self, k: usize) -> Vec<(usize, f64)> {
        let mut alphas = self.alpha.clone();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let mut m = self.max_mts_for(k);
        m.sort_unstable();
        m.dedup();
        m.into_iter()
            .flat_map(|m| alphas.iter().map(move |&a| (m, a)))
            .collect()
    }
}

/// Router seed for repetition `r` of a cell; depends only on the cell.
pub fn derive_seed(base_seed: u64, max_mts: usize, alpha: f64, repetition: usize) -> u64 {
    SeedKey::new(base_seed)
        .str("cell")
        .int(max_mts as u64)
        .int(alpha.to_bits())
        .int(repetition as u64)
        .finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub max_mts: usize,
    pub alpha: f64,
    pub repetition: usize,
    pub seed: u64,
}

/// Per-run aggregates computed from an audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub total_cost: f64,
    pub mean_quality: f64,
    pub engine_calls: u64,
    pub qe_calls: u64,
    pub exploit_fraction: f64,
    pub f1_series: Vec<f64>,
    pub final_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl RunSummary {
    pub fn from_records(
        records: &[AuditRecord],
        k: usize,
        window: usize,
        confusion_prefix: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Invalid("empty run".into()));
        }
        let n = records.len() as f64;
        let router: Vec<usize> = records.iter().map(|r| r.outcome.chosen_engine).collect();
        let ensemble: Vec<usize> = records.iter().map(|r| r.ensemble_choice).collect();
        Ok(Self {
            total_cost: records.iter().fold(0.0, |a, r| a + r.outcome.cost),
            mean_quality: records.iter().fold(0.0, |a, r| a + r.true_quality) / n,
            engine_calls: records.iter().map(|r| r.outcome.engines_called.len() as u64).sum(),
            qe_calls: records.iter().map(|r| r.outcome.qe_calls as u64).sum(),
            exploit_fraction: records.iter().filter(|r| r.outcome.qe_calls == 0).count() as f64 / n,
            f1_series: windowed_f1(&router, &ensemble, window)?,
            final_f1: weighted_f1(&router, &ensemble)?,
            confusion: confusion_matrix(&router, &ensemble, confusion_prefix.min(records.len()), k)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub max_mts: usize,
    pub alpha: f64,
    pub repetitions: usize,
    /// Set when only one repetition ran, so every `std` is 0 by convention.
    pub std_undefined: bool,
    pub cost: Stat,
    pub quality: Stat,
    pub engine_calls: Stat,
    pub qe_calls: Stat,
    pub exploit_fraction: Stat,
    pub weighted_f1: Stat,
    /// Mean windowed weighted F1 by processing index.
    #[serde(skip)]
    pub convergence: Vec<f64>,
    /// Pooled over repetitions.
    #[serde(skip)]
    pub confusion: Option<ConfusionMatrix>,
}

impl CellReport {
    pub fn aggregate(max_mts: usize, alpha: f64, runs: &[RunSummary]) -> Self {
        let pick = |f: &dyn Fn(&RunSummary) -> f64| -> Stat {
            Stat::of(&runs.iter().map(f).collect::<Vec<_>>())
        };
        let len = runs.iter().map(|r| r.f1_series.len()).min().unwrap_or(0);
        let convergence = (0..len)
            .map(|i| runs.iter().map(|r| r.f1_series[i]).sum::<f64>() / runs.len() as f64)
            .collect();
        let confusion = runs
            .iter()
            .map(|r| r.confusion.clone())
            .reduce(|a, b| a.merge(&b));
        Self {
            max_mts,
            alpha,
            repetitions: runs.len(),
            std_undefined: runs.len() < 2,
            cost: pick(&|r| r.total_cost),
            quality: pick(&|r| r.mean_quality),
            engine_calls: pick(&|r| r.engine_calls as f64),
            qe_calls: pick(&|r| r.qe_calls as f64),
            exploit_fraction: pick(&|r| r.exploit_fraction),
            weighted_f1: pick(&|r| r.final_f1),
            convergence,
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_requests: usize,
    pub n_engines: usize,
    pub window: usize,
    pub confusion_prefix: usize,
    pub full_ensemble: FullEnsembleSummary,
    pub best_mt: BestMtSummary,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    /// Checks the report-level invariants: the full ensemble is never
    /// cheaper than a router cell, and supported confusion rows sum to 1.
    pub fn check_invariants(&self) -> Result<()> {
        for c in &self.cells {
            if c.cost.mean > self.full_ensemble.total_cost * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!(
                    "cell (max_mts={}, alpha={}) costs {} > full ensemble {}",
                    c.max_mts, c.alpha, c.cost.mean, self.full_ensemble.total_cost
                )));
            }
            if let Some(m) = &c.confusion {
                for (row, ok) in m.normalized.iter().zip(&m.supported) {
                    let s: f64 = row.iter().sum();
                    if (*ok && (s - 1.0).abs() > 1e-9) || (!*ok && s != 0.0) {
                        return Err(Error::Invariant("confusion row not normalized".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cell(&self, max_mts: usize, alpha: f64) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.max_mts == max_mts && c.alpha == alpha)
    }
}

/// A corpus bound to engines, estimator and evaluation oracle.
pub struct Experiment {
    pub requests: Vec<TranslationRequest<f64>>,
    pub engines: Vec<EngineSpec>,
    pub translator: Arc<dyn Translator>,
    pub qe: Arc<dyn QualityEstimator>,
    pub oracle: Arc<dyn QualityOracle>,
    /// Template for every run; `max_mts`, `alpha` and `seed` are overridden.
    pub router: RouterConfig,
    /// Run the repetitions of a cell on parallel threads.
    pub parallel: bool,
}

impl Experiment {
    pub fn feature_dim(&self) -> usize {
        self.requests.first().map_or(0, |r| r.features.dim())
    }

    /// Translates every request with every engine and keeps the highest QE
    /// score (ties to the lowest engine id). Records are in corpus order.
    pub fn baseline_full_ensemble(&self) -> Result<Vec<BaselineRecord>> {
        let k = self.engines.len();
        self.requests
            .iter()
            .map(|r| {
                let ctx = RequestContext {
                    request_id: &r.id,
                    source: &r.source,
                    target_lang: "",
                };
                let texts = self
                    .engines
                    .iter()
                    .map(|e| {
                        self.translator.translate(e, &ctx).map_err(|source| Error::Backend {
                            engine: e.engine_id,
                            name: e.name.clone(),
                            source,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let hyps: Vec<&str> = texts.iter().map(String::as_str).collect();
                let scores: Vec<f64> = self
                    .qe
                    .batch_score(&r.source, &hyps)
                    .map_err(Error::Qe)?
                    .into_iter()
                    .map(|s| s.value())
                    .collect();
                let mut best = 0;
                for e in 1..k {
                    if scores[e] > scores[best] {
                        best = e;
                    }
                }
                let true_qualities = (0..k)
                    .map(|e| self.oracle.true_quality(&r.id, e))
                    .collect::<Result<Vec<_>>>()?;
                let all: Vec<usize> = (0..k).collect();
                let chars = r.char_count();
                Ok(BaselineRecord {
                    request_id: r.id.clone(),
                    source_chars: chars,
                    ensemble_choice: best,
                    qe_scores: scores,
                    true_qualities,
                    cost: step_cost(&all, &self.engines, chars),
                })
            })
            .collect()
    }

    /// Runs the router once over the whole corpus and attaches evaluation
    /// data to every step.
    pub fn run_once(
        &self,
        max_mts: usize,
        alpha: f64,
        seed: u64,
        ensemble: &HashMap<String, usize>,
    ) -> Result<Vec<AuditRecord>> {
        let config = RouterConfig {
            max_mts,
            alpha,
            seed,
            ..self.router.clone()
        };
        let mut router = Router::<f64, _>::with_softmax(
            config,
            self.engines.clone(),
            self.translator.clone(),
            self.qe.clone(),
            self.feature_dim(),
        )?;
        let outcomes = router.run(self.requests.clone())?;
        outcomes
            .into_iter()
            .enumerate()
            .map(|(step, outcome)| {
                let true_quality = self
                    .oracle
                    .true_quality(&outcome.request_id, outcome.chosen_engine)?;
                let ensemble_choice = *ensemble
                    .get(&outcome.request_id)
                    .ok_or_else(|| Error::Lookup(outcome.request_id.clone()))?;
                Ok(AuditRecord {
                    step,
                    outcome,
                    true_quality,
                    ensemble_choice,
                })
            })
            .collect()
    }

    /// Runs every cell of `grid` for `grid.repetitions` seeds. `sink`
    /// receives each run's audit trail in deterministic order.
    pub fn run_grid(
        &self,
        grid: &GridSpec,
        mut sink: impl FnMut(&RunKey, &[AuditRecord]) -> Result<()>,
    ) -> Result<(ExperimentReport, Vec<BaselineRecord>)> {
        if grid.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        let k = self.engines.len();
        let baseline = self.baseline_full_ensemble()?;
        let ensemble: HashMap<String, usize> = baseline
            .iter()
            .map(|b| (b.request_id.clone(), b.ensemble_choice))
            .collect();

        let mut cells = Vec::new();
        for (max_mts, alpha) in grid.cells(k) {
            let keys: Vec<RunKey> = (0..grid.repetitions)
                .map(|repetition| RunKey {
                    max_mts,
                    alpha,
                    repetition,
                    seed: derive_seed(grid.base_seed, max_mts, alpha, repetition),
                })
                .collect();
            let runs = self.run_keys(&keys, &ensemble);
            let mut summaries = Vec::with_capacity(keys.len());
            for (key, run) in keys.iter().zip(runs) {
                let records = run.map_err(|e| Error::Cell {
                    max_mts,
                    alpha,
                    repetition: key.repetition,
                    source: Box::new(e),
                })?;
                sink(key, &records)?;
                summaries.push(RunSummary::from_records(
                    &records,
                    k,
                    grid.window,
                    grid.confusion_prefix,
                )?);
            }
            cells.push(CellReport::aggregate(max_mts, alpha, &summaries));
        }
        let report = assemble_report(&baseline, &self.engines, grid, cells)?;
        Ok((report, baseline))
    }

    /// One run with an explicit router seed, reported as a one-cell grid.
    /// `grid` supplies only the window and confusion prefix.
    pub fn run_single(
        &self,
        key: RunKey,
        grid: &GridSpec,
        mut sink: impl FnMut(&RunKey, &[AuditRecord]) -> Result<()>,
    ) -> Result<(ExperimentReport, Vec<BaselineRecord>)> {
        let baseline = self.baseline_full_ensemble()?;
        let ensemble: HashMap<String, usize> = baseline
            .iter()
            .map(|b| (b.request_id.clone(), b.ensemble_choice))
            .collect();
        let records = self
            .run_once(key.max_mts, key.alpha, key.seed, &ensemble)
            .map_err(|e| Error::Cell {
                max_mts: key.max_mts,
                alpha: key.alpha,
                repetition: key.repetition,
                source: Box::new(e),
            })?;
        sink(&key, &records)?;
        let summary =
            RunSummary::from_records(&records, self.engines.len(), grid.window, grid.confusion_prefix)?;
        let cells = vec![CellReport::aggregate(key.max_mts, key.alpha, &[summary])];
        let report = assemble_report(&baseline, &self.engines, grid, cells)?;
        Ok((report, baseline))
    }

    fn run_keys(
        &self,
        keys: &[RunKey],
        ensemble: &HashMap<String, usize>,
    ) -> Vec<Result<Vec<AuditRecord>>> {
        let run = |k: &RunKey| self.run_once(k.max_mts, k.alpha, k.seed, ensemble);
        if !self.parallel || keys.len() < 2 {
            return keys.iter().map(run).collect();
        }
        let threads = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(keys.len());
        let chunk = keys.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = keys
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("grid worker panicked"))
                .collect()
        })
    }
}

pub(crate) fn assemble_report(
    baseline: &[BaselineRecord],
    engines: &[EngineSpec],
    grid: &GridSpec,
    cells: Vec<CellReport>,
) -> Result<ExperimentReport> {
    let rows: Vec<(usize, Vec<f64>)> = baseline
        .iter()
        .map(|b| (b.source_chars, b.true_qualities.clone()))
        .collect();
    Ok(ExperimentReport {
        n_requests: baseline.len(),
        n_engines: engines.len(),
        window: grid.window,
        confusion_prefix: grid.confusion_prefix,
        full_ensemble: FullEnsembleSummary::from_records(baseline),
        best_mt: BestMtSummary::from_qualities(&rows, engines)?,
        cells,
    })
}
