//! Score algebra for zero-shot multiple-choice selection.
//!
//! Everything here lives in natural-log space. An option's score is the sum of
//! its continuation token log-probabilities; calibration subtracts the score of
//! the same continuation under a null prompt; the prediction is the argmax.
//!
//! The arithmetic is generic over [`num_traits::Float`] so the same code path
//! serves `f64` (the default, see the aliases at the crate root) and `f32`.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, LogprobBackend, LogprobQuery};
use crate::datasets::McqItem;
use crate::templates::{self, PromptRole, RenderedPrompt, TemplateConfig, TemplateError};

/// Largest positive token log-probability accepted from a backend. Values in
/// `(0, LOGPROB_TOLERANCE]` are clamped to zero.
pub const LOGPROB_TOLERANCE: f64 = 1e-9;

/// Zero-shot scoring strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    /// Conditional log-probability of the option given the bare stem.
    Zs,
    /// `Zs` divided by the option's probability under a null prompt.
    Ca,
    /// Conditional log-probability under the instruction + options template.
    Pe,
    /// `Pe` calibrated against the instruction + options template without the question.
    Full,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Zs, Method::Ca, Method::Pe, Method::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Zs => "ZS",
            Method::Ca => "CA",
            Method::Pe => "PE",
            Method::Full => "FULL",
        }
    }

    pub fn uses_prompt_engineering(self) -> bool {
        matches!(self, Method::Pe | Method::Full)
    }

    pub fn uses_calibration(self) -> bool {
        matches!(self, Method::Ca | Method::Full)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method `{0}` (expected one of zs, ca, pe, full)")]
pub struct ParseMethodError(pub String);

impl FromStr for Method {
    type Err = ParseMethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zs" => Ok(Method::Zs),
            "ca" => Ok(Method::Ca),
            "pe" => Ok(Method::Pe),
            "full" => Ok(Method::Full),
            _ => Err(ParseMethodError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("continuation has no scored tokens")]
    EmptyContinuation,
    #[error("token {index} has invalid log-probability {value}")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("score is not finite")]
    NonFiniteScore,
    #[error("need at least 2 options to select an answer, got {options}")]
    DegenerateItem { options: usize },
}

fn as_f64<T: Float>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Sum of continuation token log-probabilities, i.e. `log P(y | x)`.
///
/// Uses Neumaier compensated summation over the given order. Tokens slightly
/// above zero (within [`LOGPROB_TOLERANCE`]) count as zero.
pub fn sum_logprobs<T: Float>(token_logprobs: &[T]) -> Result<T, ScoreError> {
    if token_logprobs.is_empty() {
        return Err(ScoreError::EmptyContinuation);
    }
    let tolerance = T::from(LOGPROB_TOLERANCE).unwrap_or_else(T::epsilon);
    let mut sum = T::zero();
    let mut compensation = T::zero();
    for (index, &lp) in token_logprobs.iter().enumerate() {
        if !lp.is_finite() || lp > tolerance {
            return Err(ScoreError::InvalidLogprob { index, value: as_f64(lp) });
        }
        let lp = lp.min(T::zero());
        let t = sum + lp;
        if sum.abs() >= lp.abs() {
            compensation = compensation + ((sum - t) + lp);
        } else {
            compensation = compensation + ((lp - t) + sum);
        }
        sum = t;
    }
    Ok(sum + compensation)
}

/// `log(P(y|x) / P(y))` given both terms in log space.
pub fn calibrated_score<T: Float>(numerator: T, denominator: T) -> Result<T, ScoreError> {
    if !numerator.is_finite() || !denominator.is_finite() {
        return Err(ScoreError::NonFiniteScore);
    }
    Ok(numerator - denominator)
}

/// Index of the highest score. Ties go to the lowest index.
pub fn select_answer<T: Float>(final_scores: &[T]) -> Result<usize, ScoreError> {
    if final_scores.len() < 2 {
        return Err(ScoreError::DegenerateItem { options: final_scores.len() });
    }
    if final_scores.iter().any(|s| !s.is_finite()) {
        return Err(ScoreError::NonFiniteScore);
    }
    let mut best = 0;
    for (i, &s) in final_scores.iter().enumerate().skip(1) {
        if s > final_scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Score of a single option under one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionScore<T> {
    pub raw_logprob: T,
    pub null_logprob: Option<T>,
    pub final_score: T,
    pub token_count: usize,
}

impl<T: Float> OptionScore<T> {
    /// Combines a numerator and an optional null score. The final score is the
    /// raw score, or the calibrated difference when a null score is present.
    pub fn new(raw_logprob: T, null_logprob: Option<T>, token_count: usize) -> Result<Self, ScoreError> {
        if token_count == 0 {
            return Err(ScoreError::EmptyContinuation);
        }
        let final_score = match null_logprob {
            Some(null) => calibrated_score(raw_logprob, null)?,
            None if raw_logprob.is_finite() => raw_logprob,
            None => return Err(ScoreError::NonFiniteScore),
        };
        Ok(Self { raw_logprob, null_logprob, final_score, token_count })
    }
}

/// Scores for every option of an item plus the selected index.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemScore<T> {
    pub options: Vec<OptionScore<T>>,
    pub predicted: usize,
}

impl<T: Float> ItemScore<T> {
    pub fn final_scores(&self) -> Vec<T> {
        self.options.iter().map(|o| o.final_score).collect()
    }
}

/// Prompts needed to score one option.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedOption {
    pub numerator: RenderedPrompt,
    pub denominator: Option<RenderedPrompt>,
}

/// One [`PlannedOption`] per option, in the item's option order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringPlan {
    pub method: Method,
    pub options: Vec<PlannedOption>,
}

impl ScoringPlan {
    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn is_calibrated(&self) -> bool {
        self.options.iter().all(|o| o.denominator.is_some())
    }
}

/// Expands an item into the prompt pairs the method requires.
///
/// | method | numerator | denominator |
/// |--------|-----------|-------------|
/// | ZS     | bare stem | none        |
/// | CA     | bare stem | null context |
/// | PE     | instruction + options + stem | none |
/// | FULL   | instruction + options + stem | instruction + options |
pub fn build_plan(item: &McqItem, method: Method, config: &TemplateConfig) -> Result<ScoringPlan, TemplateError> {
    if item.options.len() < 2 {
        return Err(TemplateError::InvalidItem(format!(
            "item {} has {} option(s), need at least 2",
            item.id,
            item.options.len()
        )));
    }
    let options = item
        .options
        .iter()
        .map(|option| {
            let numerator = if method.uses_prompt_engineering() {
                templates::render_pe(item, option)?
            } else {
                templates::render_zs(item, option)?
            };
            let denominator = match method {
                Method::Zs | Method::Pe => None,
                Method::Ca => Some(config.render_ca_null(option)?),
                Method::Full => Some(templates::render_full_null(item, option)?),
            };
            Ok(PlannedOption { numerator, denominator })
        })
        .collect::<Result<Vec<_>, TemplateError>>()?;
    Ok(ScoringPlan { method, options })
}

#[derive(Debug, Error)]
pub enum ItemError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("option {option} ({role}): {source}")]
    Backend {
        option: usize,
        role: PromptRole,
        #[source]
        source: BackendError,
    },
}

impl ItemError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            ItemError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

fn score_prompt<T: Float, B: LogprobBackend + ?Sized>(
    backend: &B,
    model_id: &str,
    prompt: &RenderedPrompt,
    option: usize,
) -> Result<(T, usize), ItemError> {
    let query = LogprobQuery::new(model_id, &prompt.context, &prompt.continuation);
    let result = backend
        .score(&query)
        .map_err(|source| ItemError::Backend { option, role: prompt.role, source })?;
    let logprobs = result
        .token_logprobs
        .iter()
        .map(|&lp| T::from(lp).ok_or(ScoreError::NonFiniteScore))
        .collect::<Result<Vec<T>, _>>()?;
    Ok((sum_logprobs(&logprobs)?, logprobs.len()))
}

/// Queries the backend for every prompt of the item's plan and selects an answer.
pub fn score_item<T: Float, B: LogprobBackend + ?Sized>(
    item: &McqItem,
    method: Method,
    model_id: &str,
    backend: &B,
    config: &TemplateConfig,
) -> Result<ItemScore<T>, ItemError> {
    let plan = build_plan(item, method, config)?;
    let mut options = Vec::with_capacity(plan.len());
    for (i, planned) in plan.options.iter().enumerate() {
        let (raw, token_count) = score_prompt::<T, B>(backend, model_id, &planned.numerator, i)?;
        let null = match &planned.denominator {
            Some(prompt) => Some(score_prompt::<T, B>(backend, model_id, prompt, i)?.0),
            None => None,
        };
        options.push(OptionScore::new(raw, null, token_count)?);
    }
    let finals: Vec<T> = options.iter().map(|o| o.final_score).collect();
    let predicted = select_answer(&finals)?;
    Ok(ItemScore { options, predicted })
}
