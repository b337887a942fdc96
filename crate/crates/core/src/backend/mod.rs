//! Sources of per-token log-probabilities.
//!
//! A backend answers one question: given a context, what log-probabilities
//! does the model assign to each token of a continuation? The serving side
//! owns the tokenizer and resolves the continuation boundary; the harness only
//! checks that what comes back is well formed.

mod cache;
mod fixture;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::LOGPROB_TOLERANCE;

pub use cache::{cache_key, CachedBackend};
pub use fixture::{FixtureBackend, FixtureRecord};
pub use remote::{HealthStatus, RemoteBackend, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogprobQuery {
    pub model_id: String,
    pub context: String,
    pub continuation: String,
}

impl LogprobQuery {
    pub fn new(model_id: impl Into<String>, context: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), context: context.into(), continuation: continuation.into() }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.continuation.is_empty() {
            return Err(BackendError::InvalidQuery("continuation is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobResult {
    pub token_texts: Vec<String>,
    pub token_logprobs: Vec<f64>,
}

impl LogprobResult {
    /// Checks the response against the query it answers and clamps
    /// serialization noise (`0 < lp <= 1e-9`) to zero.
    pub fn validated(mut self, query: &LogprobQuery) -> Result<Self, BackendError> {
        let violation = |msg: String| Err(BackendError::ProtocolViolation(msg));
        if self.token_texts.is_empty() {
            return violation("no tokens returned".into());
        }
        if self.token_texts.len() != self.token_logprobs.len() {
            return violation(format!(
                "{} tokens but {} logprobs",
                self.token_texts.len(),
                self.token_logprobs.len()
            ));
        }
        if self.token_texts.concat() != query.continuation {
            return violation(format!(
                "tokens {:?} do not concatenate to continuation {:?}",
                self.token_texts, query.continuation
            ));
        }
        for (i, lp) in self.token_logprobs.iter_mut().enumerate() {
            if !lp.is_finite() || *lp > LOGPROB_TOLERANCE {
                return violation(format!("token {i} has logprob {lp}"));
            }
            if *lp > 0.0 {
                *lp = 0.0;
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("model `{model}` unavailable: {message}")]
    ModelUnavailable { model: String, message: String },
    #[error("backend unreachable after {attempts} attempt(s): {message}")]
    BackendUnreachable { attempts: u32, message: String },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("backend rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("no fixture for model={model:?} context={context:?} continuation={continuation:?}")]
    FixtureMiss { model: String, context: String, continuation: String },
    #[error("fixture {path}:{line}: {message}")]
    Fixture { path: String, line: usize, message: String },
}

impl BackendError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, BackendError::BackendUnreachable { .. })
    }
}

/// The scoring contract shared by every backend.
pub trait LogprobBackend: Send + Sync {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError>;
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for &B {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        (**self).score(query)
    }
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for Box<B> {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        (**self).score(query)
    }
}

impl<B: LogprobBackend + ?Sized> LogprobBackend for Arc<B> {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        (**self).score(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(tokens: &[&str], lps: &[f64]) -> LogprobResult {
        LogprobResult { token_texts: tokens.iter().map(|s| s.to_string()).collect(), token_logprobs: lps.to_vec() }
    }

    #[test]
    fn validation() {
        let q = LogprobQuery::new("m", "", " the cat");
        assert!(result(&[" the", " cat"], &[-1.0, -2.0]).validated(&q).is_ok());
        let clamped = result(&[" the", " cat"], &[5e-10, -2.0]).validated(&q).unwrap();
        assert_eq!(clamped.token_logprobs, [0.0, -2.0]);

        let bad = [
            result(&[" the", "cat"], &[-1.0, -2.0]),
            result(&[" the", " cat"], &[-1.0, 0.5]),
            result(&[" the", " cat"], &[-1.0]),
            result(&[], &[]),
            result(&[" the", " cat"], &[-1.0, f64::NAN]),
        ];
        for r in bad {
            assert!(matches!(r.validated(&q), Err(BackendError::ProtocolViolation(_))));
        }
    }

    #[test]
    fn empty_continuation_query() {
        assert!(LogprobQuery::new("m", "ctx", "").validate().is_err());
    }
}
