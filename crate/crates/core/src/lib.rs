//! Cost-aware routing of translation requests across several MT engines.
//!
//! For every request the router predicts the engine most likely to produce
//! the best translation, and decides from the prediction's normalized
//! entropy whether to trust it or to explore: exploring translates with a
//! probability-weighted sample of engines, scores every candidate with a
//! reference-free quality estimator, answers with the best one and feeds
//! that engine back to the online classifier as a label. Pending requests
//! wait in a queue ranked by classifier uncertainty so the most informative
//! ones are handled first.
//!
//! Module map:
//! - [`domain`]: value types, configuration and the per-step audit record.
//! - [`features`]: surface features, precomputed embeddings, standardization.
//! - [`classifier`]: the [`Learner`] seam and the online softmax model.
//! - [`sampler`]: ordered weighted sampling of distinct engines.
//! - [`queue`]: the uncertainty-ranked request queue.
//! - [`router`]: the per-request decision loop with cost accounting.
//! - [`backends`]: simulated and HTTP engines and quality estimators.
//! - [`simulation`]: seeded synthetic corpora with latent domains.
//! - [`harness`]: grid experiments, baselines, metrics and reports.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod backends;
pub mod classifier;
pub mod config;
pub mod domain;
pub mod error;
pub mod features;
pub mod harness;
pub mod queue;
pub mod router;
pub mod sampler;
pub mod scalar;
pub mod seeding;
pub mod simulation;

pub use classifier::{normalized_entropy, Learner, OnlineSoftmaxModel};
pub use domain::{
    validate_config, BackendKind, ClassProbabilities, EngineSpec, FeatureVector, LrSchedule,
    QeScore, RerankPolicy, RouterConfig, StepOutcome, TranslationRequest,
};
pub use error::{BackendError, Error, ErrorClass, Result};
pub use router::Router;
pub use sampler::sample_engines;
pub use scalar::Scalar;

pub type Features = FeatureVector<f64>;
pub type Probabilities = ClassProbabilities<f64>;
pub type Request = TranslationRequest<f64>;
pub type SoftmaxModel = OnlineSoftmaxModel<f64>;
pub type Queue = queue::RankedQueue<f64>;
pub type Stats = features::RunningStats<f64>;
pub type DefaultRouter = Router<f64, SoftmaxModel>;
