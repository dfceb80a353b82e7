//! Shared domain records used by every stage of the adaptation loop.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::textnorm::normalize_answer;

/// Decoding strategy a backend is asked to use for one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Deterministic argmax decoding.
    Greedy,
    /// Sample from the renormalized top-k of the temperature softmax.
    TopK,
    /// Greedy decoding under a sampled dropout mask on the model weights.
    McDropout,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::TopK => "top_k",
            DecodeMode::McDropout => "mc_dropout",
        };
        f.write_str(name)
    }
}

/// An exact rational in [0, 1] with a small denominator, used for vote
/// agreement (`winner_count / n`) and soft-vote weights.
///
/// Threshold comparisons go through [`crate::config::Tau`] so that e.g.
/// 11/15 >= 0.7 holds exactly rather than through float rounding. The value
/// serializes as a plain float for report files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u32,
    den: u32,
}

impl Ratio {
    /// `num / den`. Panics if `den == 0`.
    pub fn new(num: u32, den: u32) -> Self {
        assert!(den > 0, "Ratio denominator must be nonzero");
        Ratio { num, den }
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        // cross-multiply in u64; u32 * u32 cannot overflow u64
        let lhs = u64::from(self.num) * u64::from(other.den);
        let rhs = u64::from(other.num) * u64::from(self.den);
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

/// One test instance: a question, its supporting document, and (for
/// evaluation only) the gold answers. The adaptation stages never see the
/// gold answers; they operate on a blinded view constructed by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub document: String,
    /// May be empty for purely unlabeled use.
    pub gold_answers: Vec<String>,
}

/// Construction error for [`QaExample`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidExample {
    EmptyQuestion,
    EmptyDocument,
}

impl fmt::Display for InvalidExample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidExample::EmptyQuestion => f.write_str("question must be non-empty"),
            InvalidExample::EmptyDocument => f.write_str("document must be non-empty"),
        }
    }
}

impl core::error::Error for InvalidExample {}

impl QaExample {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        document: impl Into<String>,
        gold_answers: Vec<String>,
    ) -> Result<Self, InvalidExample> {
        let question = question.into();
        let document = document.into();
        if question.trim().is_empty() {
            return Err(InvalidExample::EmptyQuestion);
        }
        if document.trim().is_empty() {
            return Err(InvalidExample::EmptyDocument);
        }
        Ok(QaExample { id: id.into(), question, document, gold_answers })
    }
}

/// One stochastic generation for one example, with decode metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerSample {
    pub raw_text: String,
    /// Always `normalize_answer(raw_text)`; set at construction.
    pub normalized_text: String,
    /// Sum of per-token log-probabilities; absent for backends that do not
    /// report token log-probs.
    pub seq_logprob: Option<f64>,
    pub decode_mode: DecodeMode,
    /// Index in `[0, n)` within one sampling round.
    pub sample_index: u32,
    /// Present iff `decode_mode` is `mc_dropout`.
    pub mask_seed: Option<u64>,
}

impl AnswerSample {
    pub fn new(
        raw_text: impl Into<String>,
        seq_logprob: Option<f64>,
        decode_mode: DecodeMode,
        sample_index: u32,
        mask_seed: Option<u64>,
    ) -> Self {
        let raw_text = raw_text.into();
        let normalized_text = normalize_answer(&raw_text);
        AnswerSample { raw_text, normalized_text, seq_logprob, decode_mode, sample_index, mask_seed }
    }
}

/// One group of equal answers under the vote's grouping key.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGroup {
    /// Grouping key: normalized text, or the raw text in raw-grouping mode.
    pub key: String,
    /// Members ordered by `sample_index`.
    pub members: Vec<AnswerSample>,
    pub count: u32,
}

/// Outcome of majority voting over one example's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    /// All groups, winner first, ordered by the vote's tie-break chain.
    pub groups: Vec<VoteGroup>,
    pub winner_key: String,
    pub winner_count: u32,
    /// `winner_count / n`, kept exact.
    pub agreement: Ratio,
    /// Most frequent raw surface inside the winning group (earliest sample
    /// on further ties); this is what training sees.
    pub representative_surface: String,
}

/// One element of the self-labeled training set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoLabeledExample {
    pub example_id: String,
    pub question: String,
    pub document: String,
    pub pseudo_label: String,
    pub agreement: Ratio,
    #[serde(rename = "variant")]
    pub source_variant: VariantTag,
}

/// Pipeline recipe identifiers. Each maps to a fixed sample/vote/filter/train
/// recipe in the pipeline; see the `tsas` crate for the recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    Naive,
    NaiveNoExt,
    GreedySelfAdapt,
    SoftVote,
    Lmsi,
    Tsas,
    TsasNoFilter,
    TsasNoStochastic,
    FinetuneSupervised,
}

impl VariantTag {
    pub const ALL: [VariantTag; 9] = [
        VariantTag::Naive,
        VariantTag::NaiveNoExt,
        VariantTag::GreedySelfAdapt,
        VariantTag::SoftVote,
        VariantTag::Lmsi,
        VariantTag::Tsas,
        VariantTag::TsasNoFilter,
        VariantTag::TsasNoStochastic,
        VariantTag::FinetuneSupervised,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantTag::Naive => "naive",
            VariantTag::NaiveNoExt => "naive_no_ext",
            VariantTag::GreedySelfAdapt => "greedy_self_adapt",
            VariantTag::SoftVote => "soft_vote",
            VariantTag::Lmsi => "lmsi",
            VariantTag::Tsas => "tsas",
            VariantTag::TsasNoFilter => "tsas_no_filter",
            VariantTag::TsasNoStochastic => "tsas_no_stochastic",
            VariantTag::FinetuneSupervised => "finetune_supervised",
        }
    }

    /// Whether the recipe includes a training stage.
    pub fn trains(&self) -> bool {
        !matches!(self, VariantTag::Naive | VariantTag::NaiveNoExt)
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for VariantTag {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantTag::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| UnknownVariant(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownVariant(pub String);

impl fmt::Display for UnknownVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown variant `{}`", self.0)
    }
}

impl core::error::Error for UnknownVariant {}

/// Seeds that determined a run, echoed into the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Base seed for per-sample decode seeds.
    pub sampling: u64,
    /// Seed for the training shuffle and per-batch dropout masks.
    pub training: u64,
}

/// Per-variant run summary. Metrics are on the 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: VariantTag,
    pub em_before: f64,
    pub f1_before: f64,
    pub em_after: f64,
    pub f1_after: f64,
    /// Examples that survived filtering and were trained on.
    pub retained: u32,
    /// Size of the adaptation pool the filter saw.
    pub total: u32,
    /// Mean vote agreement over examples; absent when no vote happened.
    pub mean_agreement: Option<f64>,
    /// Mean per-example lexical diversity of the sampled answers; absent
    /// when the variant did not sample.
    pub lexical_diversity: Option<f64>,
    pub config: crate::config::RunConfig,
    pub seeds: Seeds,
}
