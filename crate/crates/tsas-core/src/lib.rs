//! Core primitives for test-time self-adaptation of answer generators.
//!
//! The loop this crate supports: stochastically sample several answers per
//! unlabeled question+document pair, majority-vote a pseudo-label, drop
//! low-agreement examples, and fine-tune the generator on what survives.
//! The pieces live here as pure, allocation-only code:
//!
//! - [`types`] / [`config`]: domain records and run configuration
//! - [`textnorm`]: SQuAD-style answer normalization, EM, token F1
//! - [`ensemble`]: sample collection, majority voting, filtering
//! - [`backend`]: the generation interface and prompt rendering
//! - [`toymodel`]: a tiny trainable copy-pointer generator with dropout
//!
//! The crate is `no_std`-compatible (`alloc` required); IO, file formats,
//! HTTP, and orchestration live in the companion `tsas` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod backend;
pub mod config;
pub mod ensemble;
pub mod seed;
pub mod textnorm;
pub mod toymodel;
pub mod types;

pub use backend::{
    render_prompt, DecodeSpec, GenerateError, Generation, Generator, TemplateError,
    DEFAULT_PROMPT_TEMPLATE,
};
pub use config::{FilterConfig, FilterKind, SamplingConfig, Tau, TrainConfig};
pub use ensemble::{
    agreement_filter, build_pseudo_dataset, collect_samples, confidence_filter, majority_vote,
    soft_vote_targets, CollectError, FilterError, GroupingMode, SoftTarget, VotedExample,
};
pub use seed::derive_sample_seed;
pub use textnorm::{
    evaluate_set, exact_match, lexical_diversity, normalize_answer, token_f1, MetricsError,
    TokenizedAnswer,
};
pub use types::{
    AnswerSample, DecodeMode, PseudoLabeledExample, QaExample, Ratio, RunReport, Seeds,
    VariantTag, VoteGroup, VoteResult,
};
