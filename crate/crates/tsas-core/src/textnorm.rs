//! SQuAD-protocol answer normalization and the EM / token-F1 metrics built
//! on it. Voting groups answers by this normalization, so the equivalence
//! relation here is shared by evaluation and pseudo-labeling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::types::{AnswerSample, QaExample};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// Normalize an answer: lowercase, strip punctuation, drop the articles
/// a/an/the, and collapse whitespace. Punctuation is removed in place (no
/// space inserted), matching the standard SQuAD scorer; the punctuation
/// class is ASCII punctuation plus Unicode punctuation categories.
///
/// Idempotent: the output contains only lowercase non-punctuation tokens
/// separated by single spaces, and never a bare article.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|&c| !is_punct(c))
        .collect();
    let mut out = String::with_capacity(lowered.len());
    for token in lowered.split_whitespace() {
        if ARTICLES.contains(&token) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Whitespace tokens of a normalized answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedAnswer {
    pub tokens: Vec<String>,
}

impl TokenizedAnswer {
    pub fn from_raw(text: &str) -> Self {
        let tokens = normalize_answer(text)
            .split_whitespace()
            .map(String::from)
            .collect();
        TokenizedAnswer { tokens }
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }

    fn counts(&self) -> BTreeMap<&str, u32> {
        let mut counts = BTreeMap::new();
        for t in &self.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// Errors from the evaluation operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    /// A metric was asked to score against an empty gold list.
    EmptyGolds,
    /// `lexical_diversity` was given no samples.
    EmptySamples,
    /// `evaluate_set` found no prediction for this example id.
    MissingPrediction(String),
    /// `evaluate_set` found an example without gold answers.
    MissingGolds(String),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyGolds => f.write_str("gold answer list is empty"),
            MetricsError::EmptySamples => f.write_str("sample list is empty"),
            MetricsError::MissingPrediction(id) => {
                write!(f, "no prediction for example `{id}`")
            }
            MetricsError::MissingGolds(id) => {
                write!(f, "example `{id}` has no gold answers")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Exact match: 1 iff the normalized prediction equals some normalized gold.
pub fn exact_match(prediction: &str, golds: &[String]) -> Result<bool, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGolds);
    }
    let pred = normalize_answer(prediction);
    Ok(golds.iter().any(|g| normalize_answer(g) == pred))
}

/// Token-level F1 against the best-matching gold, using multiset overlap of
/// normalized whitespace tokens. Both sides empty scores 1; exactly one side
/// empty scores 0.
pub fn token_f1(prediction: &str, golds: &[String]) -> Result<f64, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::EmptyGolds);
    }
    let pred = TokenizedAnswer::from_raw(prediction);
    let best = golds
        .iter()
        .map(|g| pair_f1(&pred, &TokenizedAnswer::from_raw(g)))
        .fold(0.0f64, f64::max);
    Ok(best)
}

fn pair_f1(pred: &TokenizedAnswer, gold: &TokenizedAnswer) -> f64 {
    if pred.tokens.is_empty() && gold.tokens.is_empty() {
        return 1.0;
    }
    if pred.tokens.is_empty() || gold.tokens.is_empty() {
        return 0.0;
    }
    let gold_counts = gold.counts();
    let mut common = 0u32;
    for (token, count) in pred.counts() {
        if let Some(&g) = gold_counts.get(token) {
            common += count.min(g);
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = f64::from(common) / pred.tokens.len() as f64;
    let recall = f64::from(common) / gold.tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Distinct normalized answers divided by total samples, for one example's
/// sample list. 1 when all samples are distinct, 1/n when unanimous.
pub fn lexical_diversity(samples: &[AnswerSample]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let mut distinct: Vec<&str> = samples.iter().map(|s| s.normalized_text.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(distinct.len() as f64 / samples.len() as f64)
}

/// Corpus EM and F1 on the 0-100 scale: the per-example means times 100.
/// Every example must have a prediction and at least one gold answer.
pub fn evaluate_set(
    predictions: &BTreeMap<String, String>,
    dataset: &[QaExample],
) -> Result<(f64, f64), MetricsError> {
    assert!(!dataset.is_empty(), "evaluate_set needs a non-empty dataset");
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    for example in dataset {
        if example.gold_answers.is_empty() {
            return Err(MetricsError::MissingGolds(example.id.clone()));
        }
        let pred = predictions
            .get(&example.id)
            .ok_or_else(|| MetricsError::MissingPrediction(example.id.clone()))?;
        em_sum += f64::from(u8::from(exact_match(pred, &example.gold_answers)?));
        f1_sum += token_f1(pred, &example.gold_answers)?;
    }
    let count = dataset.len() as f64;
    Ok((100.0 * em_sum / count, 100.0 * f1_sum / count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DecodeMode;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn golds(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_applies_all_four_rules() {
        assert_eq!(normalize_answer("The Emma Stone!"), "emma stone");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("Sony"), "sony");
        assert_eq!(normalize_answer("a  an the"), "");
        assert_eq!(normalize_answer("(iv)."), "iv");
        assert_eq!(normalize_answer("don't"), "dont");
    }

    #[test]
    fn normalize_strips_unicode_punctuation() {
        assert_eq!(normalize_answer("“Emma Stone”"), "emma stone");
        assert_eq!(normalize_answer("Emma—Stone"), "emmastone");
    }

    #[test]
    fn exact_match_goldens() {
        assert!(exact_match("emma stone", &golds(&["Emma Stone"])).unwrap());
        assert!(!exact_match("peter parker", &golds(&["Emma Stone"])).unwrap());
        assert!(exact_match("the sony", &golds(&["Sony"])).unwrap());
        assert_eq!(exact_match("x", &[]), Err(MetricsError::EmptyGolds));
    }

    #[test]
    fn token_f1_goldens() {
        // P = 1/2, R = 1, F1 = 2 * (1/2) / (3/2) = 2/3
        let f1 = token_f1("sony music", &golds(&["sony"])).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("emma stone", &golds(&["emma stone"])).unwrap(), 1.0);
        assert_eq!(token_f1("howard", &golds(&["emma stone"])).unwrap(), 0.0);
        assert_eq!(token_f1("x", &[]), Err(MetricsError::EmptyGolds));
    }

    #[test]
    fn token_f1_empty_side_rules() {
        assert_eq!(token_f1("", &golds(&["sony"])).unwrap(), 0.0);
        assert_eq!(token_f1("sony", &golds(&["..."])).unwrap(), 0.0);
        assert_eq!(token_f1("", &golds(&["."])).unwrap(), 1.0);
    }

    #[test]
    fn token_f1_uses_multisets_not_sets() {
        // pred {sony:2}, gold {sony:1}: common = 1, P = 1/2, R = 1
        let f1 = token_f1("sony sony", &golds(&["sony"])).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lexical_diversity_goldens() {
        let mk = |text: &str, idx| AnswerSample::new(text, None, DecodeMode::TopK, idx, None);
        let identical: Vec<_> = (0..15).map(|i| mk("sony", i)).collect();
        assert!((lexical_diversity(&identical).unwrap() - 1.0 / 15.0).abs() < 1e-12);

        // 9 distinct forms among 15 samples
        let mut mixed = Vec::new();
        for i in 0..9 {
            mixed.push(mk(&format!("answer {i}"), i));
        }
        for i in 9..15 {
            mixed.push(mk("answer 0", i));
        }
        assert!((lexical_diversity(&mixed).unwrap() - 0.6).abs() < 1e-12);

        let distinct: Vec<_> = (0..3).map(|i| mk(&format!("x{i}"), i)).collect();
        assert_eq!(lexical_diversity(&distinct).unwrap(), 1.0);
        assert_eq!(lexical_diversity(&[]), Err(MetricsError::EmptySamples));
    }

    #[test]
    fn evaluate_set_averages_on_the_percent_scale() {
        let ex = |id: &str, gold: &str| {
            QaExample::new(id, "q", "d", golds(&[gold])).unwrap()
        };
        let dataset = vec![ex("a", "emma stone"), ex("b", "sony")];
        let mut preds = BTreeMap::new();
        preds.insert("a".to_string(), "emma stone".to_string());
        preds.insert("b".to_string(), "sony music".to_string());
        let (em, f1) = evaluate_set(&preds, &dataset).unwrap();
        assert!((em - 50.0).abs() < 1e-12);
        assert!((f1 - 250.0 / 3.0).abs() < 1e-9, "mean of 1.0 and 2/3, times 100");

        preds.insert("b".to_string(), "sony".to_string());
        assert_eq!(evaluate_set(&preds, &dataset).unwrap(), (100.0, 100.0));

        preds.insert("a".to_string(), "zzz".to_string());
        preds.insert("b".to_string(), "yyy".to_string());
        assert_eq!(evaluate_set(&preds, &dataset).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn evaluate_set_names_the_offending_id() {
        let dataset = vec![QaExample::new("only", "q", "d", golds(&["g"])).unwrap()];
        let err = evaluate_set(&BTreeMap::new(), &dataset).unwrap_err();
        assert_eq!(err, MetricsError::MissingPrediction("only".to_string()));

        let unlabeled = vec![QaExample::new("bare", "q", "d", vec![]).unwrap()];
        let mut preds = BTreeMap::new();
        preds.insert("bare".to_string(), "p".to_string());
        assert_eq!(
            evaluate_set(&preds, &unlabeled).unwrap_err(),
            MetricsError::MissingGolds("bare".to_string())
        );
    }

    /// Brute-force multiset-overlap oracle, independent of the counting in
    /// `pair_f1`: intersect sorted token vectors by linear merge.
    fn oracle_f1(pred: &[&str], gold: &[&str]) -> f64 {
        if pred.is_empty() && gold.is_empty() {
            return 1.0;
        }
        if pred.is_empty() || gold.is_empty() {
            return 0.0;
        }
        let mut p: Vec<&str> = pred.to_vec();
        let mut g: Vec<&str> = gold.to_vec();
        p.sort_unstable();
        g.sort_unstable();
        let (mut i, mut j, mut common) = (0usize, 0usize, 0usize);
        while i < p.len() && j < g.len() {
            match p[i].cmp(g[j]) {
                core::cmp::Ordering::Equal => {
                    common += 1;
                    i += 1;
                    j += 1;
                }
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
            }
        }
        if common == 0 {
            return 0.0;
        }
        let precision = common as f64 / p.len() as f64;
        let recall = common as f64 / g.len() as f64;
        2.0 * precision * recall / (precision + recall)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn exact_match_implies_perfect_f1(s in "[a-zA-Z ,.]{1,30}") {
            let gold = golds(&[s.as_str()]);
            if exact_match(&s, &gold).unwrap() {
                prop_assert_eq!(token_f1(&s, &gold).unwrap(), 1.0);
            }
        }

        #[test]
        fn f1_is_symmetric_for_singleton_golds(
            a in proptest::collection::vec("[bcdfgz]{1,3}", 0..6),
            b in proptest::collection::vec("[bcdfgz]{1,3}", 0..6),
        ) {
            let sa = a.join(" ");
            let sb = b.join(" ");
            let ab = token_f1(&sa, &golds(&[sb.as_str()])).unwrap();
            let ba = token_f1(&sb, &golds(&[sa.as_str()])).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn f1_matches_brute_force_oracle(
            a in proptest::collection::vec("[xyz]{1,2}", 0..6),
            b in proptest::collection::vec("[xyz]{1,2}", 0..6),
        ) {
            let pred_tokens: Vec<&str> = a.iter().map(|s| s.as_str()).collect();
            let gold_tokens: Vec<&str> = b.iter().map(|s| s.as_str()).collect();
            let expected = oracle_f1(&pred_tokens, &gold_tokens);
            let sa = a.join(" ");
            let sb = b.join(" ");
            // token lists avoid articles/punctuation so normalization is a no-op
            if sb.is_empty() {
                let direct = pair_f1(&TokenizedAnswer::from_raw(&sa), &TokenizedAnswer::from_raw(&sb));
                prop_assert!((direct - expected).abs() < 1e-12);
            } else {
                let actual = token_f1(&sa, &golds(&[sb.as_str()])).unwrap();
                prop_assert!((actual - expected).abs() < 1e-12);
            }
        }
    }
}
