//! Zero-shot multiple-choice evaluation for language models.
//!
//! Four scoring methods are supported: plain conditional scoring (ZS),
//! calibration against a null prompt (CA), an instruction + options prompt
//! (PE), and both together (FULL). Scores come from any [`LogprobBackend`]:
//! a remote `/v1/score` server, a fixture replay file, or either behind an
//! on-disk cache.

pub mod backend;
pub mod datasets;
pub mod runner;
pub mod scoring;
pub mod templates;

pub use backend::{
    BackendError, CachedBackend, FixtureBackend, LogprobBackend, LogprobQuery, LogprobResult, RemoteBackend,
};
pub use datasets::{CopaConnective, DatasetId, DatasetStats, LoadOptions, McqItem};
pub use runner::{evaluate, run_matrix, DatasetSource, EvalResult, RunConfig, RunSummary};
pub use scoring::{build_plan, calibrated_score, select_answer, sum_logprobs, Method, ScoreError};
pub use templates::{PromptRole, RenderedPrompt, TemplateConfig, TemplateFamily};

/// Scalar used for scores outside of the generic score algebra.
pub type Score = f64;
pub type OptionScore = scoring::OptionScore<Score>;
pub type ItemScore = scoring::ItemScore<Score>;

/// [`scoring::score_item`] at the default precision.
pub fn score_item<B: LogprobBackend + ?Sized>(
    item: &McqItem,
    method: Method,
    model_id: &str,
    backend: &B,
    templates: &TemplateConfig,
) -> Result<ItemScore, scoring::ItemError> {
    scoring::score_item::<Score, B>(item, method, model_id, backend, templates)
}
