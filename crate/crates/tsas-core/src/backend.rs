//! The generation interface: prompt in, sampled answer out.
//!
//! Backends implement [`Generator`]; the scripted mock and the HTTP client
//! live in the `tsas` crate, the built-in trainable model in [`crate::toymodel`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::types::DecodeMode;

/// The prompt wording used when nothing else is configured. The newline
/// separators are configurable; plain concatenation would glue the
/// instruction, document, and question together.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "Read this and answer the question\n{context}\n{question}";

const CONTEXT_SLOT: &str = "{context}";
const QUESTION_SLOT: &str = "{question}";

/// Template validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateError {
    MissingPlaceholder(&'static str),
    DuplicatePlaceholder(&'static str),
}

impl fmt::Display for TemplateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateError::MissingPlaceholder(slot) => {
                write!(f, "prompt template is missing `{slot}`")
            }
            TemplateError::DuplicatePlaceholder(slot) => {
                write!(f, "prompt template contains `{slot}` more than once")
            }
        }
    }
}

impl core::error::Error for TemplateError {}

/// Checks that a template carries each placeholder exactly once.
pub fn check_template(template: &str) -> Result<(), TemplateError> {
    for slot in [CONTEXT_SLOT, QUESTION_SLOT] {
        match template.matches(slot).count() {
            0 => return Err(TemplateError::MissingPlaceholder(slot)),
            1 => {}
            _ => return Err(TemplateError::DuplicatePlaceholder(slot)),
        }
    }
    Ok(())
}

/// Substitutes `{context}` and `{question}` into the template.
pub fn render_prompt(
    template: &str,
    document: &str,
    question: &str,
) -> Result<String, TemplateError> {
    check_template(template)?;
    Ok(template
        .replacen(CONTEXT_SLOT, document, 1)
        .replacen(QUESTION_SLOT, question, 1))
}

/// Full decode instructions for one generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSpec {
    pub mode: DecodeMode,
    /// Candidate pool for top_k mode.
    pub top_k: u32,
    /// Softmax temperature for top_k mode.
    pub temperature: f64,
    /// Dropout rate for mc_dropout mode.
    pub dropout_rate: f64,
    /// Present iff `mode == McDropout`.
    pub mask_seed: Option<u64>,
    /// Present iff `mode == TopK`.
    pub sampling_seed: Option<u64>,
    pub max_new_tokens: u32,
}

impl DecodeSpec {
    pub fn greedy(max_new_tokens: u32) -> Self {
        DecodeSpec {
            mode: DecodeMode::Greedy,
            top_k: 0,
            temperature: 1.0,
            dropout_rate: 0.0,
            mask_seed: None,
            sampling_seed: None,
            max_new_tokens,
        }
    }

    pub fn top_k(k: u32, temperature: f64, sampling_seed: u64, max_new_tokens: u32) -> Self {
        DecodeSpec {
            mode: DecodeMode::TopK,
            top_k: k,
            temperature,
            dropout_rate: 0.0,
            mask_seed: None,
            sampling_seed: Some(sampling_seed),
            max_new_tokens,
        }
    }

    pub fn mc_dropout(dropout_rate: f64, mask_seed: u64, max_new_tokens: u32) -> Self {
        DecodeSpec {
            mode: DecodeMode::McDropout,
            top_k: 0,
            temperature: 1.0,
            dropout_rate,
            mask_seed: Some(mask_seed),
            sampling_seed: None,
            max_new_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |msg: &str| Err(GenerateError::InvalidSpec(msg.to_string()));
        match self.mode {
            DecodeMode::Greedy => {
                if self.mask_seed.is_some() || self.sampling_seed.is_some() {
                    return bad("greedy decoding takes no seed");
                }
            }
            DecodeMode::TopK => {
                if self.sampling_seed.is_none() {
                    return bad("top_k decoding requires sampling_seed");
                }
                if self.mask_seed.is_some() {
                    return bad("top_k decoding takes no mask_seed");
                }
                if self.top_k < 1 {
                    return bad("top_k must be >= 1");
                }
                if !(self.temperature > 0.0) {
                    return bad("temperature must be > 0");
                }
            }
            DecodeMode::McDropout => {
                if self.mask_seed.is_none() {
                    return bad("mc_dropout decoding requires mask_seed");
                }
                if self.sampling_seed.is_some() {
                    return bad("mc_dropout decoding takes no sampling_seed");
                }
                if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
                    return bad("dropout_rate must lie in (0, 1)");
                }
            }
        }
        if self.max_new_tokens < 1 {
            return bad("max_new_tokens must be >= 1");
        }
        Ok(())
    }
}

/// One generated answer, with per-token log-probabilities when the backend
/// reports them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
}

impl Generation {
    pub fn text_only(text: impl Into<String>) -> Self {
        Generation { text: text.into(), token_logprobs: None }
    }

    /// Sum of the token log-probabilities, when present; always <= 0.
    pub fn seq_logprob(&self) -> Option<f64> {
        self.token_logprobs.as_ref().map(|lps| lps.iter().sum())
    }
}

/// Errors a backend can raise from [`Generator::generate`].
#[derive(Debug, Clone, PartialEq)]
pub enum GenerateError {
    /// The backend does not advertise this decode mode.
    UnsupportedMode(DecodeMode),
    /// The decode spec violates its own invariants.
    InvalidSpec(String),
    /// The prompt exceeds the backend's token cap.
    PromptTooLong { tokens: usize, cap: usize },
    /// Transport-level failure after the retry budget was spent.
    Transport { attempts: u32, message: String },
    /// The server rejected the request; not retried.
    Rejected { status: u16, body_excerpt: String },
    /// The response could not be decoded.
    Protocol(String),
    /// The scripted mock had no entry for the prompt.
    Unscripted(String),
}

impl fmt::Display for GenerateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerateError::UnsupportedMode(mode) => {
                write!(f, "backend does not support decode mode `{mode}`")
            }
            GenerateError::InvalidSpec(msg) => write!(f, "invalid decode spec: {msg}"),
            GenerateError::PromptTooLong { tokens, cap } => {
                write!(f, "prompt has {tokens} tokens, cap is {cap}")
            }
            GenerateError::Transport { attempts, message } => {
                write!(f, "transport failure after {attempts} attempts: {message}")
            }
            GenerateError::Rejected { status, body_excerpt } => {
                write!(f, "server rejected request (HTTP {status}): {body_excerpt}")
            }
            GenerateError::Protocol(msg) => write!(f, "malformed server response: {msg}"),
            GenerateError::Unscripted(prompt) => {
                write!(f, "mock has no scripted reply for prompt starting `{prompt}`")
            }
        }
    }
}

impl core::error::Error for GenerateError {}

/// The generation contract. Implementations must be safe for concurrent
/// calls; decoding never mutates model state.
pub trait Generator: Sync {
    /// Capability query; callers never send a mode that is not advertised.
    fn supports(&self, mode: DecodeMode) -> bool;

    /// Generate one answer. Greedy decoding must be deterministic; seeded
    /// modes must be deterministic per seed.
    fn generate(&self, prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn supports(&self, mode: DecodeMode) -> bool {
        (**self).supports(mode)
    }

    fn generate(&self, prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError> {
        (**self).generate(prompt, spec)
    }
}
