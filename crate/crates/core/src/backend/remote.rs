use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, LogprobBackend, LogprobQuery, LogprobResult};

/// Waits between attempts; the number of retries is `delays.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { delays: vec![Duration::from_millis(500), Duration::from_secs(2), Duration::from_secs(8)] }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new() }
    }

    pub fn attempts(&self) -> u32 {
        self.delays.len() as u32 + 1
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model: &'a str,
    context: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    #[serde(default)]
    pub models: Vec<String>,
}

impl HealthStatus {
    pub fn is_ok(&self) -> bool {
        self.status == "ok" && !self.models.is_empty()
    }
}

enum Attempt {
    Done(Result<LogprobResult, BackendError>),
    Retry(String),
}

/// HTTP client for the `/v1/score` protocol.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_options(base_url, Duration::from_secs(120), RetryPolicy::default())
    }

    pub fn with_options(base_url: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), agent: config.into(), retry }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<HealthStatus, BackendError> {
        let unreachable = |message: String| BackendError::BackendUnreachable { attempts: 1, message };
        let mut resp = self
            .agent
            .get(&format!("{}/v1/health", self.base_url))
            .call()
            .map_err(|e| unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| unreachable(e.to_string()))?;
        if status != 200 {
            return Err(BackendError::Rejected { status, message: body });
        }
        serde_json::from_str(&body).map_err(|e| BackendError::ProtocolViolation(format!("health body: {e}")))
    }

    fn attempt(&self, query: &LogprobQuery) -> Attempt {
        let request = ScoreRequest {
            model: &query.model_id,
            context: &query.context,
            continuation: &query.continuation,
        };
        let mut resp = match self.agent.post(&format!("{}/v1/score", self.base_url)).send_json(&request) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let error_text = || serde_json::from_str::<ErrorBody>(&body).map(|e| e.error).unwrap_or_else(|_| body.clone());
        let outcome = match status {
            200 => serde_json::from_str::<ScoreResponse>(&body)
                .map_err(|e| BackendError::ProtocolViolation(format!("score body: {e}")))
                .and_then(|r| LogprobResult { token_texts: r.tokens, token_logprobs: r.logprobs }.validated(query)),
            404 => Err(BackendError::ModelUnavailable { model: query.model_id.clone(), message: error_text() }),
            408 | 429 | 502 | 503 | 504 => return Attempt::Retry(format!("HTTP {status}: {}", error_text())),
            _ => Err(BackendError::Rejected { status, message: error_text() }),
        };
        Attempt::Done(outcome)
    }
}

impl LogprobBackend for RemoteBackend {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        query.validate()?;
        let mut last = String::new();
        for attempt in 0..self.retry.attempts() {
            if attempt > 0 {
                let delay = self.retry.delays[attempt as usize - 1];
                log::warn!("retrying {} in {:?} after: {last}", self.base_url, delay);
                thread::sleep(delay);
            }
            match self.attempt(query) {
                Attempt::Done(outcome) => return outcome,
                Attempt::Retry(message) => last = message,
            }
        }
        Err(BackendError::BackendUnreachable { attempts: self.retry.attempts(), message: last })
    }
}
