//! Whitespace-token vocabulary with reserved ids.
//!
//! The vocabulary only feeds the embedding table; copy decoding emits the
//! surface token at the copied position, so out-of-vocabulary prompt tokens
//! are still emittable (they embed as `<unk>`).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::types::QaExample;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

const RESERVED: [&str; 3] = ["<pad>", "<eos>", "<unk>"];

/// Whitespace tokenization shared by the vocabulary, decoding, and targets.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Token <-> id bijection, reserved ids first, observed tokens in first-
/// occurrence order. Building the same corpus twice yields the same vocab.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VocabError {
    MissingReserved,
    DuplicateToken(String),
}

impl fmt::Display for VocabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VocabError::MissingReserved => {
                f.write_str("token list does not start with <pad>, <eos>, <unk>")
            }
            VocabError::DuplicateToken(t) => write!(f, "duplicate token `{t}` in vocabulary"),
        }
    }
}

impl core::error::Error for VocabError {}

impl Vocab {
    /// Build from raw texts in first-occurrence order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut ids: BTreeMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for text in texts {
            for token in tokenize(text) {
                if !ids.contains_key(token) {
                    ids.insert(token.to_string(), tokens.len() as u32);
                    tokens.push(token.to_string());
                }
            }
        }
        Vocab { tokens, ids }
    }

    /// Build from a dataset: each example contributes its question then its
    /// document. Gold answers are document spans, so they need no separate
    /// pass.
    pub fn encode_corpus(dataset: &[QaExample]) -> Self {
        Self::from_texts(
            dataset
                .iter()
                .flat_map(|ex| [ex.question.as_str(), ex.document.as_str()]),
        )
    }

    /// Rebuild from a stored token list (checkpoint loading).
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()].iter().map(String::as_str).ne(RESERVED)
        {
            return Err(VocabError::MissingReserved);
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(VocabError::DuplicateToken(t.clone()));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn id_of(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// FNV-1a over the token list with length separators; checkpoints store
    /// this and validate it on load.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for token in &self.tokens {
            eat(&(token.len() as u64).to_le_bytes());
            eat(token.as_bytes());
        }
        hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ten_distinct_tokens_give_thirteen_entries() {
        let vocab = Vocab::from_texts(["one two three four five", "six seven eight nine ten two"]);
        assert_eq!(vocab.len(), 13);
    }

    #[test]
    fn identical_corpora_give_identical_vocabs() {
        let dataset = vec![
            QaExample::new("1", "where is it", "it is here", vec![]).unwrap(),
            QaExample::new("2", "who did that", "bob did that", vec![]).unwrap(),
        ];
        assert_eq!(Vocab::encode_corpus(&dataset), Vocab::encode_corpus(&dataset));
    }

    #[test]
    fn first_occurrence_order_is_stable() {
        let vocab = Vocab::from_texts(["b a", "a c"]);
        assert_eq!(vocab.token(3), "b");
        assert_eq!(vocab.token(4), "a");
        assert_eq!(vocab.token(5), "c");
        assert_eq!(vocab.id_of("a"), 4);
        assert_eq!(vocab.id_of("unseen"), UNK_ID);
    }

    #[test]
    fn token_list_round_trip_preserves_fingerprint() {
        let vocab = Vocab::from_texts(["alpha beta gamma"]);
        let rebuilt = Vocab::from_token_list(vocab.tokens().to_vec()).unwrap();
        assert_eq!(rebuilt, vocab);
        assert_eq!(rebuilt.fingerprint(), vocab.fingerprint());

        assert_eq!(
            Vocab::from_token_list(vec!["x".into()]),
            Err(VocabError::MissingReserved)
        );
        let mut dup = vocab.tokens().to_vec();
        dup.push("alpha".into());
        assert!(matches!(
            Vocab::from_token_list(dup),
            Err(VocabError::DuplicateToken(_))
        ));
    }
}
