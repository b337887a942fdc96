//! Prompt construction for every scoring method.
//!
//! A prompt is a `(context, continuation)` pair. The continuation is always a
//! single space followed by the option text, so the scored tokens correspond
//! to the option alone. Options are never bound to letter symbols.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::McqItem;

pub const QUESTION_INSTRUCTION: &str =
    "Given answers in square brackets [], choose the best for the question.";
pub const SENTENCE_INSTRUCTION: &str =
    "Given answers in square brackets [], choose the one that best completes the sentence.";
pub const CALIBRATION_INSTRUCTION: &str = "Given answers in square brackets [], choose the best one.";
pub const ANSWER_CUE: &str = "The best answer is:";
pub const OPTION_SEPARATOR: &str = ", ";

/// Which instruction template an item uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    /// Items with an explicit question (CSQA, SIQA).
    QuestionStyle,
    /// Items whose stem is a sentence to complete (COPA, OBQA, PIQA).
    SentenceStyle,
}

impl TemplateFamily {
    fn instruction(self) -> &'static str {
        match self {
            TemplateFamily::QuestionStyle => QUESTION_INSTRUCTION,
            TemplateFamily::SentenceStyle => SENTENCE_INSTRUCTION,
        }
    }

    fn slot_label(self) -> &'static str {
        match self {
            TemplateFamily::QuestionStyle => "Question",
            TemplateFamily::SentenceStyle => "Sentence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    Numerator,
    Denominator,
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptRole::Numerator => "numerator",
            PromptRole::Denominator => "denominator",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub context: String,
    pub continuation: String,
    pub role: PromptRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("invalid item: {0}")]
    InvalidItem(String),
}

/// Rendering knobs that are not fixed by the templates themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Context used for the CA denominator. Empty means unconditional scoring.
    #[serde(default)]
    pub ca_null_context: String,
}

impl TemplateConfig {
    pub fn with_null_context(context: impl Into<String>) -> Self {
        Self { ca_null_context: context.into() }
    }

    /// CA denominator: the option under the configured null context.
    pub fn render_ca_null(&self, option: &str) -> Result<RenderedPrompt, TemplateError> {
        Ok(RenderedPrompt {
            context: self.ca_null_context.trim_end().to_string(),
            continuation: continuation(option)?,
            role: PromptRole::Denominator,
        })
    }
}

fn continuation(option: &str) -> Result<String, TemplateError> {
    let option = option.trim();
    if option.is_empty() {
        return Err(TemplateError::InvalidItem("empty option text".into()));
    }
    Ok(format!(" {option}"))
}

fn stem(item: &McqItem) -> Result<&str, TemplateError> {
    let stem = item.stem.trim();
    if stem.is_empty() {
        return Err(TemplateError::InvalidItem(format!("item {} has an empty stem", item.id)));
    }
    Ok(stem)
}

/// Joins option texts with `", "` in their original order.
pub fn serialize_options<S: AsRef<str>>(options: &[S]) -> Result<String, TemplateError> {
    if options.len() < 2 {
        return Err(TemplateError::InvalidItem(format!(
            "need at least 2 options, got {}",
            options.len()
        )));
    }
    let mut out = String::new();
    for (i, option) in options.iter().enumerate() {
        let option = option.as_ref().trim();
        if option.is_empty() {
            return Err(TemplateError::InvalidItem(format!("option {i} is empty")));
        }
        if i > 0 {
            out.push_str(OPTION_SEPARATOR);
        }
        out.push_str(option);
    }
    Ok(out)
}

/// Bare stem as context.
pub fn render_zs(item: &McqItem, option: &str) -> Result<RenderedPrompt, TemplateError> {
    Ok(RenderedPrompt {
        context: stem(item)?.to_string(),
        continuation: continuation(option)?,
        role: PromptRole::Numerator,
    })
}

/// Instruction, bracketed options and the stem.
pub fn render_pe(item: &McqItem, option: &str) -> Result<RenderedPrompt, TemplateError> {
    let answers = serialize_options(&item.options)?;
    let context = format!(
        "{} Answers: [{answers}]. {}: {} {ANSWER_CUE}",
        item.family.instruction(),
        item.family.slot_label(),
        stem(item)?,
    );
    Ok(RenderedPrompt { context, continuation: continuation(option)?, role: PromptRole::Numerator })
}

/// CA denominator with an empty null context.
pub fn render_ca_null(option: &str) -> Result<RenderedPrompt, TemplateError> {
    TemplateConfig::default().render_ca_null(option)
}

/// FULL denominator: the calibration instruction and options, with no question.
pub fn render_full_null(item: &McqItem, option: &str) -> Result<RenderedPrompt, TemplateError> {
    let answers = serialize_options(&item.options)?;
    let context = format!("{CALIBRATION_INSTRUCTION} Answers: [{answers}]. {ANSWER_CUE}");
    Ok(RenderedPrompt { context, continuation: continuation(option)?, role: PromptRole::Denominator })
}
