//! Sample collection, majority voting, and agreement filtering: the path
//! from n stochastic answers per example to a filtered pseudo-label set.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::{DecodeSpec, GenerateError, Generator};
use crate::config::{FilterConfig, FilterKind, SamplingConfig};
use crate::seed::derive_sample_seed;
use crate::types::{
    AnswerSample, DecodeMode, PseudoLabeledExample, Ratio, VariantTag, VoteGroup, VoteResult,
};

/// Key on which answers are grouped for voting.
///
/// Normalized grouping makes "Sony" and "sony." agree and is the default;
/// raw grouping counts surface variants separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    #[default]
    Normalized,
    Raw,
}

impl GroupingMode {
    fn key_of(self, sample: &AnswerSample) -> &str {
        match self {
            GroupingMode::Normalized => &sample.normalized_text,
            GroupingMode::Raw => &sample.raw_text,
        }
    }
}

/// Failure while collecting one example's samples, carrying the position
/// that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectError {
    pub example_id: String,
    pub sample_index: u32,
    pub source: GenerateError,
}

impl fmt::Display for CollectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sampling example `{}` failed at sample {}: {}",
            self.example_id, self.sample_index, self.source
        )
    }
}

impl core::error::Error for CollectError {}

/// Collect exactly `cfg.n` samples for one example's rendered prompt.
///
/// Seeded modes give sample `j` the seed
/// `derive_sample_seed(cfg.base_seed, example_id, j)`, so reruns replay
/// byte-identically; greedy mode yields n identical samples (the degenerate
/// ensemble). The backend's capability is checked before any generation.
pub fn collect_samples<G: Generator + ?Sized>(
    answerer: &G,
    example_id: &str,
    prompt: &str,
    cfg: &SamplingConfig,
) -> Result<Vec<AnswerSample>, CollectError> {
    let capability = |source: GenerateError| CollectError {
        example_id: example_id.to_string(),
        sample_index: 0,
        source,
    };
    if let Err(e) = cfg.validate() {
        return Err(capability(GenerateError::InvalidSpec(e.to_string())));
    }
    if !answerer.supports(cfg.decode_mode) {
        return Err(capability(GenerateError::UnsupportedMode(cfg.decode_mode)));
    }

    let mut samples = Vec::with_capacity(cfg.n as usize);
    for index in 0..cfg.n {
        let seed = derive_sample_seed(cfg.base_seed, example_id, index);
        let spec = match cfg.decode_mode {
            DecodeMode::Greedy => DecodeSpec::greedy(cfg.max_new_tokens),
            DecodeMode::TopK => {
                DecodeSpec::top_k(cfg.top_k, cfg.temperature, seed, cfg.max_new_tokens)
            }
            DecodeMode::McDropout => {
                DecodeSpec::mc_dropout(cfg.dropout_rate, seed, cfg.max_new_tokens)
            }
        };
        let generation = answerer.generate(prompt, &spec).map_err(|source| CollectError {
            example_id: example_id.to_string(),
            sample_index: index,
            source,
        })?;
        let seq_logprob = generation.seq_logprob();
        samples.push(AnswerSample::new(
            generation.text,
            seq_logprob,
            cfg.decode_mode,
            index,
            spec.mask_seed,
        ));
    }
    Ok(samples)
}

/// Mean sequence log-prob of a group, defined only when every member
/// reports one.
fn group_mean_logprob(members: &[AnswerSample]) -> Option<f64> {
    let mut sum = 0.0;
    for m in members {
        sum += m.seq_logprob?;
    }
    Some(sum / members.len() as f64)
}

/// True when `a` should be ranked ahead of `b` in the vote. The chain:
/// higher count, then higher mean seq log-prob (when both groups report
/// one and they differ), then lexicographically smaller key.
fn group_outranks(a: &VoteGroup, b: &VoteGroup) -> bool {
    if a.count != b.count {
        return a.count > b.count;
    }
    if let (Some(la), Some(lb)) = (group_mean_logprob(&a.members), group_mean_logprob(&b.members)) {
        if la != lb {
            return la > lb;
        }
    }
    a.key < b.key
}

/// Majority-vote a winner among one example's samples.
///
/// Groups are keyed per `grouping`; the winner is the largest group, with
/// deterministic tie-breaking (mean seq log-prob, then lexicographically
/// smallest key). The representative surface is the most frequent raw string
/// inside the winning group, earliest-generated on further ties. The result
/// does not depend on sample order except through those documented breaks.
///
/// Panics if `samples` is empty.
pub fn majority_vote(samples: &[AnswerSample], grouping: GroupingMode) -> VoteResult {
    assert!(!samples.is_empty(), "majority_vote needs at least one sample");

    let mut by_key: BTreeMap<&str, Vec<AnswerSample>> = BTreeMap::new();
    for sample in samples {
        by_key.entry(grouping.key_of(sample)).or_default().push(sample.clone());
    }

    let mut groups: Vec<VoteGroup> = by_key
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_by_key(|m| m.sample_index);
            let count = members.len() as u32;
            VoteGroup { key: key.to_string(), members, count }
        })
        .collect();
    groups.sort_by(|a, b| {
        if group_outranks(a, b) {
            core::cmp::Ordering::Less
        } else if group_outranks(b, a) {
            core::cmp::Ordering::Greater
        } else {
            core::cmp::Ordering::Equal
        }
    });

    let winner = &groups[0];
    let representative_surface = representative_surface(&winner.members);
    VoteResult {
        winner_key: winner.key.clone(),
        winner_count: winner.count,
        agreement: Ratio::new(winner.count, samples.len() as u32),
        representative_surface,
        groups,
    }
}

/// Most frequent raw string among the members; first-generated on ties.
fn representative_surface(members: &[AnswerSample]) -> String {
    let mut tally: BTreeMap<&str, (u32, u32)> = BTreeMap::new(); // raw -> (count, first index)
    for m in members {
        let entry = tally.entry(m.raw_text.as_str()).or_insert((0, m.sample_index));
        entry.0 += 1;
        entry.1 = entry.1.min(m.sample_index);
    }
    tally
        .into_iter()
        .max_by(|(_, (ca, fa)), (_, (cb, fb))| ca.cmp(cb).then(fb.cmp(fa)))
        .map(|(raw, _)| raw.to_string())
        .unwrap_or_default()
}

/// Errors from the filtering operations.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    /// The confidence filter needs a sequence log-prob that the backend did
    /// not report.
    LogprobUnavailable { context: String },
    /// The confidence filter was run without a floor.
    MissingConfidenceFloor,
    /// The operation was called under the wrong `FilterKind`.
    WrongKind { expected: FilterKind, actual: FilterKind },
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::LogprobUnavailable { context } => write!(
                f,
                "backend reported no sequence log-prob ({context}); the confidence filter cannot run"
            ),
            FilterError::MissingConfidenceFloor => {
                f.write_str("confidence filter requires a confidence_floor")
            }
            FilterError::WrongKind { expected, actual } => {
                write!(f, "filter called with kind {actual:?}, expected {expected:?}")
            }
        }
    }
}

impl core::error::Error for FilterError {}

/// Keep iff the vote's agreement meets `cfg.tau`, compared exactly.
pub fn agreement_filter(vote: &VoteResult, cfg: &FilterConfig) -> Result<bool, FilterError> {
    if cfg.kind != FilterKind::AgreementThreshold {
        return Err(FilterError::WrongKind {
            expected: FilterKind::AgreementThreshold,
            actual: cfg.kind,
        });
    }
    Ok(cfg.tau.accepts(vote.agreement))
}

/// Keep iff the sample's sequence log-prob is at or above the floor.
pub fn confidence_filter(sample: &AnswerSample, cfg: &FilterConfig) -> Result<bool, FilterError> {
    if cfg.kind != FilterKind::ConfidenceThreshold {
        return Err(FilterError::WrongKind {
            expected: FilterKind::ConfidenceThreshold,
            actual: cfg.kind,
        });
    }
    let floor = cfg.confidence_floor.ok_or(FilterError::MissingConfidenceFloor)?;
    let logprob = sample.seq_logprob.ok_or_else(|| FilterError::LogprobUnavailable {
        context: alloc::format!("sample {}", sample.sample_index),
    })?;
    Ok(logprob >= floor)
}

/// One voted example, as the pseudo-dataset builder sees it: identity and
/// prompt fields only, never gold answers.
#[derive(Debug, Clone, Copy)]
pub struct VotedExample<'a> {
    pub id: &'a str,
    pub question: &'a str,
    pub document: &'a str,
    pub vote: &'a VoteResult,
}

/// Build the self-training set from per-example votes, applying the
/// configured filter. The pseudo-label is the winner's representative
/// surface; input order is preserved. An example whose winning answer is
/// empty is dropped regardless of the filter: an empty pseudo-label is
/// untrainable.
pub fn build_pseudo_dataset(
    items: &[VotedExample<'_>],
    cfg: &FilterConfig,
    variant: VariantTag,
) -> Result<Vec<PseudoLabeledExample>, FilterError> {
    let mut kept = Vec::new();
    for item in items {
        let vote = item.vote;
        if vote.winner_key.is_empty() || vote.representative_surface.is_empty() {
            continue;
        }
        let keep = match cfg.kind {
            FilterKind::None => true,
            FilterKind::AgreementThreshold => agreement_filter(vote, cfg)?,
            FilterKind::ConfidenceThreshold => {
                let floor = cfg.confidence_floor.ok_or(FilterError::MissingConfidenceFloor)?;
                let winner = &vote.groups[0];
                match group_mean_logprob(&winner.members) {
                    Some(lp) => lp >= floor,
                    None => {
                        return Err(FilterError::LogprobUnavailable {
                            context: alloc::format!("example `{}`", item.id),
                        })
                    }
                }
            }
        };
        if keep {
            kept.push(PseudoLabeledExample {
                example_id: item.id.to_string(),
                question: item.question.to_string(),
                document: item.document.to_string(),
                pseudo_label: vote.representative_surface.clone(),
                agreement: vote.agreement,
                source_variant: variant,
            });
        }
    }
    Ok(kept)
}

/// One weighted training target from soft voting.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget {
    pub text: String,
    /// Group count over n; the weights of one example sum to exactly 1.
    pub weight: Ratio,
}

/// Soft-voting targets: one per distinct normalized answer, weighted by its
/// vote share, ordered winner-first like the vote itself.
///
/// Panics if `samples` is empty.
pub fn soft_vote_targets(samples: &[AnswerSample]) -> Vec<SoftTarget> {
    let vote = majority_vote(samples, GroupingMode::Normalized);
    vote.groups
        .iter()
        .map(|group| SoftTarget {
            text: representative_surface(&group.members),
            weight: Ratio::new(group.count, samples.len() as u32),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Generation;
    use crate::config::Tau;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn sample(text: &str, idx: u32) -> AnswerSample {
        AnswerSample::new(text, None, DecodeMode::McDropout, idx, Some(u64::from(idx)))
    }

    fn samples_from(texts: &[&str]) -> Vec<AnswerSample> {
        texts.iter().enumerate().map(|(i, t)| sample(t, i as u32)).collect()
    }

    // The two published case studies, voted in raw-grouping mode so surface
    // variants like "(iv)." and "iv." count separately.
    const CASE1_LMSI: [&str; 15] = [
        "iv.", "(C).", "a).", "(4).", "(a).", "iv.", "[ii]", "[d].", "[iv]", "sony", "(iv).",
        "(iii).", "B).", "iv.", "sony",
    ];
    const CASE1_TSAS: [&str; 15] = [
        "[iv]", "b).", "(4).", "(iv).", "[i]", "d).", "[i]", "[ii]", "sony", "sony", "[i]",
        "[iv]", "[ii]", "[ii]", "(iv)",
    ];
    const CASE2_LMSI: [&str; 15] = [
        "peter parker's intellect",
        "peter parker's scientific rigor and",
        "peter parker's interest in science",
        "peter parker",
        "peter",
        "peter parker's scientific approach to solving mysteries",
        "peter parker's intelligence",
        "peter parker",
        "peter parker",
        "peter parker",
        "peter's intellect and",
        "peter parker",
        "peter parker's scientific prowess",
        "peter parker's intellect and sass",
        "peter parker's understanding of science",
    ];
    const CASE2_TSAS: [&str; 15] = [
        "howard",
        "gwen stacy",
        "howard",
        "howard",
        "emma stone",
        "howard",
        "gwen stacy",
        "emma stone",
        "peter parker's wit and intelligence",
        "howard",
        "howard",
        "gwen stacy",
        "emma stone",
        "emma stone",
        "emma stone",
    ];

    #[test]
    fn case1_lmsi_winner_is_iv_with_count_3() {
        let vote = majority_vote(&samples_from(&CASE1_LMSI), GroupingMode::Raw);
        assert_eq!(vote.winner_key, "iv.");
        assert_eq!(vote.winner_count, 3);
        assert_eq!(vote.agreement, Ratio::new(3, 15));
        assert_eq!(vote.representative_surface, "iv.");
    }

    #[test]
    fn case1_tsas_tie_breaks_to_lexicographically_smallest() {
        // "[i]" and "[ii]" both occur 3 times; no log-probs, so the smaller
        // key wins, matching the published outcome.
        let vote = majority_vote(&samples_from(&CASE1_TSAS), GroupingMode::Raw);
        assert_eq!(vote.winner_key, "[i]");
        assert_eq!(vote.winner_count, 3);
        assert_eq!(vote.agreement, Ratio::new(3, 15));
    }

    #[test]
    fn case2_lmsi_winner_is_peter_parker() {
        let vote = majority_vote(&samples_from(&CASE2_LMSI), GroupingMode::Raw);
        assert_eq!(vote.winner_key, "peter parker");
        assert_eq!(vote.winner_count, 5);
    }

    #[test]
    fn case2_tsas_winner_howard_is_dropped_at_default_tau() {
        let vote = majority_vote(&samples_from(&CASE2_TSAS), GroupingMode::Raw);
        assert_eq!(vote.winner_key, "howard");
        assert_eq!(vote.winner_count, 6);
        assert_eq!(vote.agreement, Ratio::new(6, 15));

        let cfg = FilterConfig::default();
        assert!(!agreement_filter(&vote, &cfg).unwrap(), "6/15 < 0.7 is dropped");
    }

    #[test]
    fn unanimous_vote_has_agreement_one() {
        let vote = majority_vote(&samples_from(&["sony", "sony", "sony"]), GroupingMode::Normalized);
        assert_eq!(vote.winner_key, "sony");
        assert_eq!(vote.agreement, Ratio::new(3, 3));
        assert!(vote.agreement.is_one());
    }

    #[test]
    fn group_counts_sum_to_n() {
        for texts in [&CASE1_LMSI, &CASE1_TSAS, &CASE2_LMSI, &CASE2_TSAS] {
            let vote = majority_vote(&samples_from(texts), GroupingMode::Raw);
            let total: u32 = vote.groups.iter().map(|g| g.count).sum();
            assert_eq!(total, 15);
        }
    }

    #[test]
    fn normalized_grouping_merges_surface_variants() {
        let vote = majority_vote(&samples_from(&["Sony", "sony.", "howard"]), GroupingMode::Normalized);
        assert_eq!(vote.winner_key, "sony");
        assert_eq!(vote.winner_count, 2);
        // representative surface is the earliest most-frequent raw form
        assert_eq!(vote.representative_surface, "Sony");
    }

    #[test]
    fn logprob_tiebreak_precedes_lexicographic() {
        let mk = |text: &str, idx, lp| {
            AnswerSample::new(text, Some(lp), DecodeMode::TopK, idx, None)
        };
        // both groups have count 1; "zebra" has the higher mean log-prob
        let samples = vec![mk("apple", 0, -2.0), mk("zebra", 1, -0.5)];
        let vote = majority_vote(&samples, GroupingMode::Normalized);
        assert_eq!(vote.winner_key, "zebra");

        // equal log-probs fall through to the lexicographic break
        let samples = vec![mk("zebra", 0, -1.0), mk("apple", 1, -1.0)];
        let vote = majority_vote(&samples, GroupingMode::Normalized);
        assert_eq!(vote.winner_key, "apple");
    }

    #[test]
    fn agreement_filter_goldens() {
        let cfg = FilterConfig::default();
        let vote_with = |count: u32| {
            majority_vote(
                &samples_from(
                    &(0..15)
                        .map(|i| if i < count { "win" } else { "other" })
                        .collect::<Vec<_>>(),
                ),
                GroupingMode::Normalized,
            )
        };
        assert!(!agreement_filter(&vote_with(6), &cfg).unwrap());
        assert!(agreement_filter(&vote_with(15), &cfg).unwrap());
        assert!(agreement_filter(&vote_with(11), &cfg).unwrap(), "11/15 >= 0.7 exactly");
    }

    #[test]
    fn confidence_filter_goldens() {
        let cfg = FilterConfig {
            kind: FilterKind::ConfidenceThreshold,
            confidence_floor: Some(-1.0),
            ..FilterConfig::default()
        };
        let confident = AnswerSample::new("a", Some(-0.5), DecodeMode::Greedy, 0, None);
        let doubtful = AnswerSample::new("a", Some(-3.0), DecodeMode::Greedy, 0, None);
        let silent = AnswerSample::new("a", None, DecodeMode::Greedy, 0, None);
        assert!(confidence_filter(&confident, &cfg).unwrap());
        assert!(!confidence_filter(&doubtful, &cfg).unwrap());
        assert!(matches!(
            confidence_filter(&silent, &cfg),
            Err(FilterError::LogprobUnavailable { .. })
        ));
    }

    fn voted<'a>(id: &'a str, vote: &'a VoteResult) -> VotedExample<'a> {
        VotedExample { id, question: "q", document: "d", vote }
    }

    #[test]
    fn pseudo_dataset_applies_threshold_per_item() {
        let texts_for = |count: u32| {
            (0..15).map(|i| if i < count { "win" } else { "other" }).collect::<Vec<_>>()
        };
        let votes: Vec<VoteResult> = [6u32, 11, 15]
            .iter()
            .map(|&c| majority_vote(&samples_from(&texts_for(c)), GroupingMode::Normalized))
            .collect();
        let items: Vec<VotedExample> = votes
            .iter()
            .enumerate()
            .map(|(i, v)| VotedExample {
                id: ["a", "b", "c"][i],
                question: "q",
                document: "d",
                vote: v,
            })
            .collect();

        let cfg = FilterConfig::default();
        let kept = build_pseudo_dataset(&items, &cfg, VariantTag::Tsas).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].example_id, "b");
        assert_eq!(kept[1].example_id, "c");
        assert_eq!(kept[0].agreement, Ratio::new(11, 15));

        let none = FilterConfig { kind: FilterKind::None, ..FilterConfig::default() };
        let all = build_pseudo_dataset(&items, &none, VariantTag::TsasNoFilter).unwrap();
        assert_eq!(all.len(), 3, "kind none retains everything");
    }

    #[test]
    fn unanimous_votes_give_full_retention() {
        let vote = majority_vote(&samples_from(&["x"; 15]), GroupingMode::Normalized);
        let items = vec![voted("a", &vote), voted("b", &vote)];
        let kept = build_pseudo_dataset(&items, &FilterConfig::default(), VariantTag::Tsas).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn empty_winner_is_force_dropped() {
        // "..." normalizes to the empty string and wins 2/3
        let vote = majority_vote(&samples_from(&["...", "..", "sony"]), GroupingMode::Normalized);
        assert_eq!(vote.winner_key, "");
        let items = vec![voted("a", &vote)];
        let none = FilterConfig { kind: FilterKind::None, ..FilterConfig::default() };
        assert!(build_pseudo_dataset(&items, &none, VariantTag::Tsas).unwrap().is_empty());
    }

    #[test]
    fn soft_targets_weights_are_vote_shares() {
        let mut texts = vec!["sony"; 9];
        texts.extend(vec!["howard"; 6]);
        let targets = soft_vote_targets(&samples_from(&texts));
        assert_eq!(targets.len(), 2);
        assert_eq!(targets[0].text, "sony");
        assert_eq!(targets[0].weight, Ratio::new(9, 15));
        assert_eq!(targets[1].text, "howard");
        assert_eq!(targets[1].weight, Ratio::new(6, 15));

        let unanimous = soft_vote_targets(&samples_from(&["sony"; 15]));
        assert_eq!(unanimous.len(), 1);
        assert!(unanimous[0].weight.is_one());

        let spread = soft_vote_targets(&samples_from(&["a1", "b2", "c3"]));
        assert!(spread.iter().all(|t| t.weight == Ratio::new(1, 3)));
    }

    struct ScriptedByMode;

    impl Generator for ScriptedByMode {
        fn supports(&self, mode: DecodeMode) -> bool {
            mode != DecodeMode::TopK
        }

        fn generate(&self, _prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError> {
            spec.validate()?;
            let text = match spec.mode {
                DecodeMode::Greedy => "constant".to_string(),
                // vary deterministically with the mask seed
                DecodeMode::McDropout => format!("m{}", spec.mask_seed.unwrap() % 4),
                DecodeMode::TopK => unreachable!("not advertised"),
            };
            Ok(Generation { text, token_logprobs: Some(vec![-0.1]) })
        }
    }

    #[test]
    fn greedy_collection_yields_identical_samples() {
        let cfg = SamplingConfig { n: 3, decode_mode: DecodeMode::Greedy, ..SamplingConfig::default() };
        let samples = collect_samples(&ScriptedByMode, "ex1", "p", &cfg).unwrap();
        assert_eq!(samples.len(), 3);
        assert!(samples.iter().all(|s| s.raw_text == "constant"));
        assert!(samples.iter().all(|s| s.mask_seed.is_none()));
        assert_eq!(samples[2].sample_index, 2);
    }

    #[test]
    fn seeded_collection_replays_identically() {
        let cfg = SamplingConfig { n: 15, ..SamplingConfig::default() };
        let first = collect_samples(&ScriptedByMode, "ex1", "p", &cfg).unwrap();
        let second = collect_samples(&ScriptedByMode, "ex1", "p", &cfg).unwrap();
        assert_eq!(first, second);
        assert!(first.iter().all(|s| s.mask_seed.is_some()));
        // the scripted backend varies with the seed, so a spread appears
        let distinct = crate::textnorm::lexical_diversity(&first).unwrap();
        assert!(distinct > 1.0 / 15.0);
    }

    #[test]
    fn unsupported_mode_fails_before_any_generation() {
        let cfg = SamplingConfig { decode_mode: DecodeMode::TopK, ..SamplingConfig::default() };
        let err = collect_samples(&ScriptedByMode, "ex1", "p", &cfg).unwrap_err();
        assert_eq!(err.example_id, "ex1");
        assert!(matches!(err.source, GenerateError::UnsupportedMode(DecodeMode::TopK)));
    }

    /// Independent winner oracle: count by sorting, take every key with the
    /// maximal count.
    fn oracle_max_groups(samples: &[AnswerSample], grouping: GroupingMode) -> (u32, Vec<String>) {
        let mut keys: Vec<&str> = samples.iter().map(|s| grouping.key_of(s)).collect();
        keys.sort_unstable();
        let mut best = 0u32;
        let mut winners: Vec<String> = Vec::new();
        let mut i = 0;
        while i < keys.len() {
            let mut j = i;
            while j < keys.len() && keys[j] == keys[i] {
                j += 1;
            }
            let count = (j - i) as u32;
            if count > best {
                best = count;
                winners.clear();
            }
            if count == best {
                winners.push(keys[i].to_string());
            }
            i = j;
        }
        (best, winners)
    }

    proptest! {
        #[test]
        fn vote_matches_brute_force_oracle(
            texts in proptest::collection::vec("[a-d]{1,2}", 1..20),
        ) {
            let samples = samples_from(&texts.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            for grouping in [GroupingMode::Normalized, GroupingMode::Raw] {
                let vote = majority_vote(&samples, grouping);
                let (best, winners) = oracle_max_groups(&samples, grouping);
                prop_assert_eq!(vote.winner_count, best);
                prop_assert!(winners.contains(&vote.winner_key));
                let total: u32 = vote.groups.iter().map(|g| g.count).sum();
                prop_assert_eq!(total, samples.len() as u32);
            }
        }

        #[test]
        fn raising_tau_never_grows_the_kept_set(
            texts in proptest::collection::vec("[a-c]", 1..16),
            lo in 0u64..=100,
            hi in 0u64..=100,
        ) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let samples = samples_from(&texts.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let vote = majority_vote(&samples, GroupingMode::Normalized);
            let keep_at = |t: u64| {
                let cfg = FilterConfig { tau: Tau::new(t, 100).unwrap(), ..FilterConfig::default() };
                agreement_filter(&vote, &cfg).unwrap()
            };
            // monotone: kept at the higher threshold implies kept at the lower
            if keep_at(hi) {
                prop_assert!(keep_at(lo));
            }
        }

        #[test]
        fn vote_is_permutation_invariant_for_unique_winners(
            texts in proptest::collection::vec("[a-c]", 1..16),
            rotation in 0usize..16,
        ) {
            let samples = samples_from(&texts.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let vote = majority_vote(&samples, GroupingMode::Normalized);
            let mut rotated = samples.clone();
            let by = rotation % rotated.len().max(1);
            rotated.rotate_left(by);
            let vote_rot = majority_vote(&rotated, GroupingMode::Normalized);
            prop_assert_eq!(&vote.winner_key, &vote_rot.winner_key);
            prop_assert_eq!(vote.winner_count, vote_rot.winner_count);
        }

        #[test]
        fn soft_weights_sum_to_exactly_one(
            texts in proptest::collection::vec("[a-e]{1,2}", 1..20),
        ) {
            let samples = samples_from(&texts.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let targets = soft_vote_targets(&samples);
            let num_sum: u32 = targets.iter().map(|t| t.weight.num()).sum();
            prop_assert_eq!(num_sum, samples.len() as u32);
            prop_assert!(targets.iter().all(|t| t.weight.den() == samples.len() as u32));
        }
    }

    #[test]
    fn tau_zero_keeps_all_and_near_one_requires_unanimity() {
        let spread = majority_vote(&samples_from(&["a"; 15]), GroupingMode::Normalized);
        let almost: Vec<&str> =
            (0..15).map(|i| if i < 14 { "a" } else { "b" }).collect();
        let fourteen = majority_vote(&samples_from(&almost), GroupingMode::Normalized);

        let zero = FilterConfig { tau: Tau::ZERO, ..FilterConfig::default() };
        assert!(agreement_filter(&spread, &zero).unwrap());
        assert!(agreement_filter(&fourteen, &zero).unwrap());

        let strict = FilterConfig { tau: "0.99".parse().unwrap(), ..FilterConfig::default() };
        assert!(agreement_filter(&spread, &strict).unwrap(), "15/15 passes 0.99");
        assert!(!agreement_filter(&fourteen, &strict).unwrap(), "14/15 fails 0.99");
    }
}
