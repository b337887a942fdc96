#![allow(dead_code)]

use std::path::PathBuf;

use mcq_eval::backend::{BackendError, LogprobBackend, LogprobQuery, LogprobResult};
use mcq_eval::scoring::{build_plan, Method};
use mcq_eval::{DatasetId, FixtureBackend, McqItem, TemplateConfig};

pub const TOY_MODEL: &str = "toy-lm";

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn synthetic_items() -> PathBuf {
    workspace_root().join("fixtures/synthetic.jsonl")
}

pub fn synthetic_logprobs() -> PathBuf {
    workspace_root().join("fixtures/synthetic.logprobs.jsonl")
}

/// Backend computing results from the query with a closure; the whole
/// continuation is one token.
pub struct FnBackend<F>(pub F);

impl<F> LogprobBackend for FnBackend<F>
where
    F: Fn(&LogprobQuery) -> f64 + Send + Sync,
{
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        Ok(LogprobResult { token_texts: vec![query.continuation.clone()], token_logprobs: vec![(self.0)(query)] })
    }
}

pub fn item(dataset: DatasetId, stem: &str, options: &[String], gold: usize) -> McqItem {
    McqItem::new(format!("it-{stem}"), dataset, stem, options.to_vec(), gold).unwrap()
}

/// Registers every prompt the method needs. `numerator(i)` and
/// `denominator(i)` give the token logprobs for option `i`.
pub fn register(
    fx: &mut FixtureBackend,
    item: &McqItem,
    method: Method,
    numerator: impl Fn(usize) -> Vec<f64>,
    denominator: impl Fn(usize) -> Vec<f64>,
) {
    let plan = build_plan(item, method, &TemplateConfig::default()).unwrap();
    for (i, p) in plan.options.iter().enumerate() {
        fx.insert(TOY_MODEL, &p.numerator.context, &p.numerator.continuation, &numerator(i)).unwrap();
        if let Some(d) = &p.denominator {
            fx.insert(TOY_MODEL, &d.context, &d.continuation, &denominator(i)).unwrap();
        }
    }
}

/// Independent oracle: multiply per-token probabilities in probability space.
pub fn probability_product(logprobs: &[f64]) -> f64 {
    logprobs.iter().fold(1.0, |acc, lp| acc * lp.exp())
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}
