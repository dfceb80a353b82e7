//! A small, fully self-contained trainable answer generator.
//!
//! The model copies tokens out of the prompt rather than generating from a
//! vocabulary: every dataset in scope is extractive, so pointer decoding
//! keeps the model tiny while still supporting greedy, top-k, and
//! MC-dropout decoding plus cross-entropy fine-tuning. Pseudo-labels that
//! cannot be copied from their prompt are rejected with
//! [`ToyError::UnrepresentableTarget`] so callers can drop and count them.
//!
//! Dropout defaults to literal weight masking on the encoder's candidate
//! and gate matrices; [`DropoutSite::Activations`] switches the mask to the
//! encoder outputs for comparison.

mod decode;
mod model;
mod train;
pub mod vocab;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::{DecodeSpec, GenerateError, Generation, Generator};
use crate::types::DecodeMode;

pub use model::{DropoutMask, DropoutSite, GateParams, Matrix, ToyParams};
pub use train::{TrainItem, TrainTrace};
pub use vocab::{Vocab, VocabError, EOS_ID, PAD_ID, UNK_ID};

/// Model dimensions and dropout wiring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub embed_dim: usize,
    /// Total encoder/decoder state width; split across the two directions,
    /// so it must be even.
    pub hidden_dim: usize,
    pub max_prompt_tokens: usize,
    /// Dropout rate used for training-time masks.
    pub dropout_rate: f64,
    pub dropout_site: DropoutSite,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            embed_dim: 32,
            hidden_dim: 64,
            max_prompt_tokens: 512,
            dropout_rate: 0.1,
            dropout_site: DropoutSite::Weights,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return Err(ToyError::BadConfig(
                "embed_dim must be positive and hidden_dim positive and even".to_string(),
            ));
        }
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(ToyError::BadConfig("dropout_rate must lie in (0, 1)".to_string()));
        }
        if self.max_prompt_tokens == 0 {
            return Err(ToyError::BadConfig("max_prompt_tokens must be positive".to_string()));
        }
        Ok(())
    }
}

/// Errors from the toy model's training-side operations.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyError {
    /// A target token does not occur in its prompt, so the copy decoder
    /// cannot express it.
    UnrepresentableTarget { token: String },
    /// Loss or parameters went non-finite.
    Diverged { epoch: u32, batch: u32 },
    EmptyDataset,
    BadConfig(String),
    /// A dropout mask was built for a different shape.
    MaskShape { expected: usize, actual: usize },
    /// Prompt handling failed (too long, bad spec).
    Generate(GenerateError),
}

impl fmt::Display for ToyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToyError::UnrepresentableTarget { token } => {
                write!(f, "target token `{token}` does not occur in the prompt")
            }
            ToyError::Diverged { epoch, batch } => {
                write!(f, "training diverged at epoch {epoch}, batch {batch}")
            }
            ToyError::EmptyDataset => f.write_str("training set is empty"),
            ToyError::BadConfig(msg) => write!(f, "invalid model config: {msg}"),
            ToyError::MaskShape { expected, actual } => {
                write!(f, "dropout mask has {actual} slots, model needs {expected}")
            }
            ToyError::Generate(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ToyError {}

impl From<GenerateError> for ToyError {
    fn from(e: GenerateError) -> Self {
        ToyError::Generate(e)
    }
}

/// The trainable copy-pointer generator: vocabulary, dimensions, and
/// parameters. Decoding is read-only and safe to share across threads;
/// training takes `&mut self`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub cfg: ToyConfig,
    pub vocab: Vocab,
    pub params: ToyParams,
}

impl ToyModel {
    /// Fresh model with seeded uniform parameter init.
    pub fn new(vocab: Vocab, cfg: ToyConfig, init_seed: u64) -> Result<Self, ToyError> {
        cfg.validate()?;
        let params = ToyParams::init(vocab.len(), cfg.embed_dim, cfg.hidden_dim, init_seed);
        Ok(ToyModel { cfg, vocab, params })
    }

    /// Reassemble from checkpointed parts, checking dimensions.
    pub fn from_parts(vocab: Vocab, cfg: ToyConfig, params: ToyParams) -> Result<Self, ToyError> {
        cfg.validate()?;
        let expected = (vocab.len(), cfg.embed_dim, cfg.hidden_dim);
        let actual = (params.embed.rows, params.embed.cols, params.w_init.rows);
        if expected != actual {
            return Err(ToyError::BadConfig(alloc::format!(
                "checkpoint dimensions {actual:?} do not match config {expected:?}"
            )));
        }
        Ok(ToyModel { cfg, vocab, params })
    }

    /// Weighted cross-entropy of the target under the copy distribution,
    /// with gradients for every parameter.
    pub fn loss_and_gradients(
        &self,
        prompt: &str,
        target: &str,
        weight: f64,
    ) -> Result<(f64, ToyParams), ToyError> {
        self.loss_and_gradients_masked(prompt, target, weight, None)
    }

    /// Same, under a dropout mask at the configured site (training path).
    pub fn loss_and_gradients_masked(
        &self,
        prompt: &str,
        target: &str,
        weight: f64,
        mask: Option<&DropoutMask>,
    ) -> Result<(f64, ToyParams), ToyError> {
        debug_assert!(weight > 0.0, "loss weight must be positive");
        let (ids, surfaces) = self.tokenize_prompt(prompt)?;
        let target_tokens: Vec<&str> = vocab::tokenize(target).collect();
        let target_ids: Vec<u32> = target_tokens.iter().map(|t| self.vocab.id_of(t)).collect();
        let dims = model::ModelDims { embed: self.cfg.embed_dim, hidden: self.cfg.hidden_dim };
        match (mask, self.cfg.dropout_site) {
            (None, _) => model::loss_and_gradients_inner(
                &self.params,
                &ids,
                &surfaces,
                &target_tokens,
                &target_ids,
                weight,
                None,
                &dims,
            ),
            (Some(m), DropoutSite::Weights) => {
                self.check_mask(m)?;
                let masked = model::apply_weight_mask(&self.params, m);
                let (loss, mut grads) = model::loss_and_gradients_inner(
                    &masked,
                    &ids,
                    &surfaces,
                    &target_tokens,
                    &target_ids,
                    weight,
                    None,
                    &dims,
                )?;
                model::mask_weight_grads(&mut grads, m);
                Ok((loss, grads))
            }
            (Some(m), DropoutSite::Activations) => {
                self.check_mask(m)?;
                model::loss_and_gradients_inner(
                    &self.params,
                    &ids,
                    &surfaces,
                    &target_tokens,
                    &target_ids,
                    weight,
                    Some(m),
                    &dims,
                )
            }
        }
    }

    fn check_mask(&self, mask: &DropoutMask) -> Result<(), ToyError> {
        let expected = self.mask_len();
        if mask.values.len() != expected {
            return Err(ToyError::MaskShape { expected, actual: mask.values.len() });
        }
        Ok(())
    }

    /// Loss only, on the unmasked forward pass; used by evaluation probes
    /// and tests.
    pub fn loss(&self, prompt: &str, target: &str, weight: f64) -> Result<f64, ToyError> {
        self.loss_and_gradients(prompt, target, weight).map(|(loss, _)| loss)
    }

    /// True when every whitespace token of `target` occurs in `prompt`, so
    /// the copy decoder can be trained toward it.
    pub fn is_representable(&self, prompt: &str, target: &str) -> bool {
        let surfaces: Vec<&str> = vocab::tokenize(prompt).collect();
        vocab::tokenize(target).all(|t| surfaces.contains(&t))
    }
}

impl Generator for ToyModel {
    fn supports(&self, _mode: DecodeMode) -> bool {
        true
    }

    fn generate(&self, prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError> {
        self.decode(prompt, spec)
    }
}

#[cfg(test)]
mod tests;
