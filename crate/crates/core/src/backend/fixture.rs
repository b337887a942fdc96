use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, LogprobBackend, LogprobQuery, LogprobResult};

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub model: String,
    pub context: String,
    pub continuation: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl FixtureRecord {
    pub fn query(&self) -> LogprobQuery {
        LogprobQuery::new(&self.model, &self.context, &self.continuation)
    }
}

/// Replays stored results by exact `(model, context, continuation)` lookup.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    entries: HashMap<LogprobQuery, LogprobResult>,
}

impl FixtureBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Result<Self, BackendError> {
        let mut backend = Self::new();
        for (i, rec) in records.into_iter().enumerate() {
            backend.insert_record(rec).map_err(|e| BackendError::Fixture {
                path: "<memory>".into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(backend)
    }

    /// Loads a line-delimited fixture file. Every record is validated up front.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let fail = |line: usize, message: String| BackendError::Fixture {
            path: path.display().to_string(),
            line,
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(0, e.to_string()))?;
        let mut backend = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(line).map_err(|e| fail(i + 1, e.to_string()))?;
            backend.insert_record(rec).map_err(|e| fail(i + 1, e.to_string()))?;
        }
        Ok(backend)
    }

    pub fn insert_record(&mut self, rec: FixtureRecord) -> Result<(), BackendError> {
        let query = rec.query();
        query.validate()?;
        let result = LogprobResult { token_texts: rec.tokens, token_logprobs: rec.logprobs }.validated(&query)?;
        self.entries.insert(query, result);
        Ok(())
    }

    /// Adds an entry whose tokens are split on word boundaries, one logprob per token.
    pub fn insert(&mut self, model: &str, context: &str, continuation: &str, logprobs: &[f64]) -> Result<(), BackendError> {
        let tokens = split_tokens(continuation, logprobs.len());
        self.insert_record(FixtureRecord {
            model: model.into(),
            context: context.into(),
            continuation: continuation.into(),
            tokens,
            logprobs: logprobs.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes entries sorted by query so the output is stable.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut entries: Vec<_> = self.entries.iter().collect();
        entries.sort_by(|a, b| {
            (&a.0.model_id, &a.0.context, &a.0.continuation).cmp(&(&b.0.model_id, &b.0.context, &b.0.continuation))
        });
        for (q, r) in entries {
            let rec = FixtureRecord {
                model: q.model_id.clone(),
                context: q.context.clone(),
                continuation: q.continuation.clone(),
                tokens: r.token_texts.clone(),
                logprobs: r.token_logprobs.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Splits `text` into `n` pieces that concatenate back to it. Splits happen
/// before spaces where possible; the remainder goes into the last piece.
fn split_tokens(text: &str, n: usize) -> Vec<String> {
    if n <= 1 {
        return vec![text.to_string()];
    }
    let cuts: Vec<usize> = text.char_indices().filter(|&(i, c)| i > 0 && c == ' ').map(|(i, _)| i).collect();
    let mut pieces = Vec::with_capacity(n);
    let mut start = 0;
    for &cut in cuts.iter().take(n - 1) {
        pieces.push(text[start..cut].to_string());
        start = cut;
    }
    // Not enough word boundaries: pad with single characters from the tail.
    let mut rest = text[start..].to_string();
    let mut tail = Vec::new();
    while pieces.len() + tail.len() + 1 < n && rest.chars().count() > 1 {
        let c = rest.pop().unwrap();
        tail.push(c.to_string());
    }
    pieces.push(rest);
    pieces.extend(tail.into_iter().rev());
    while pieces.len() < n {
        pieces.push(String::new());
    }
    pieces
}

impl LogprobBackend for FixtureBackend {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        query.validate()?;
        self.entries.get(query).cloned().ok_or_else(|| BackendError::FixtureMiss {
            model: query.model_id.clone(),
            context: query.context.clone(),
            continuation: query.continuation.clone(),
        })
    }
}
