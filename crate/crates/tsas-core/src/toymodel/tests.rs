use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{DecodeSpec, Generator};
use crate::config::TrainConfig;
use crate::types::DecodeMode;

use super::model::{masked_weight_len, softmax, AppliedMask, ModelDims};
use super::*;

const PROMPT: &str = "read this and answer alice was born in paris . bob plays the cello . where was alice born";

fn tiny_model() -> ToyModel {
    let vocab = Vocab::from_texts([PROMPT, "extra tokens for width"]);
    let cfg = ToyConfig { embed_dim: 6, hidden_dim: 8, ..ToyConfig::default() };
    ToyModel::new(vocab, cfg, 42).unwrap()
}

fn default_model() -> ToyModel {
    let vocab = Vocab::from_texts([PROMPT]);
    ToyModel::new(vocab, ToyConfig::default(), 0).unwrap()
}

#[test]
fn zeroed_params_give_uniform_copy_distribution() {
    let mut model = tiny_model();
    model.params = model.params.zeros_like();
    let positions = PROMPT.split_whitespace().count() as f64;
    // "paris" occurs once; one content step plus the EOS step
    let loss = model.loss(PROMPT, "paris", 1.0).unwrap();
    let expected = 2.0 * libm::log(positions + 1.0);
    assert!(
        (loss - expected).abs() < 1e-12,
        "uniform softmax over D+1: loss {loss} vs {expected}"
    );
}

#[test]
fn loss_scales_linearly_in_the_weight() {
    let model = tiny_model();
    let (l1, g1) = model.loss_and_gradients(PROMPT, "paris", 1.0).unwrap();
    let (l2, g2) = model.loss_and_gradients(PROMPT, "paris", 2.0).unwrap();
    assert_eq!(l2, 2.0 * l1, "doubling the weight doubles the loss exactly");
    for (a, b) in g1.slabs().into_iter().zip(g2.slabs()) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*y, 2.0 * x, "gradients double exactly");
        }
    }
}

#[test]
fn unrepresentable_target_is_rejected() {
    let model = tiny_model();
    let err = model.loss_and_gradients(PROMPT, "london", 1.0).unwrap_err();
    assert_eq!(err, ToyError::UnrepresentableTarget { token: "london".to_string() });
    assert!(model.is_representable(PROMPT, "paris"));
    assert!(!model.is_representable(PROMPT, "paris london"));
}

fn check_gradients(model: &ToyModel, mask: Option<&DropoutMask>, samples: usize) {
    let (_, grads) = model
        .loss_and_gradients_masked(PROMPT, "paris", 1.0, mask)
        .unwrap();
    let flat_len = model.params.flat_len();
    let step = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < samples {
        let index = rng.gen_range(0..flat_len);
        let mut plus = model.clone();
        plus.params.flat_add(index, step);
        let mut minus = model.clone();
        minus.params.flat_add(index, -step);
        let loss_plus = plus.loss_and_gradients_masked(PROMPT, "paris", 1.0, mask).unwrap().0;
        let loss_minus = minus.loss_and_gradients_masked(PROMPT, "paris", 1.0, mask).unwrap().0;
        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let analytic = grads.flat_get(index);
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / scale;
        assert!(
            rel <= 1e-3,
            "gradient mismatch at flat index {index}: analytic {analytic}, numeric {numeric}, rel {rel}"
        );
        checked += 1;
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let model = tiny_model();
    check_gradients(&model, None, 25);
}

#[test]
fn gradients_hold_under_a_weight_mask() {
    let model = tiny_model();
    let mask = DropoutMask::sample(masked_weight_len(&model.params), 0.2, 11);
    check_gradients(&model, Some(&mask), 20);
}

#[test]
fn gradients_hold_under_an_activation_mask() {
    let vocab = Vocab::from_texts([PROMPT]);
    let cfg = ToyConfig {
        embed_dim: 6,
        hidden_dim: 8,
        dropout_site: DropoutSite::Activations,
        ..ToyConfig::default()
    };
    let model = ToyModel::new(vocab, cfg, 42).unwrap();
    let mask = DropoutMask::sample(8, 0.2, 11);
    check_gradients(&model, Some(&mask), 20);
}

#[test]
fn step_distribution_sums_to_one() {
    let model = default_model();
    let (ids, _) = model.tokenize_prompt(PROMPT).unwrap();
    let dims = ModelDims { embed: model.cfg.embed_dim, hidden: model.cfg.hidden_dim };
    let encoded = super::model::encode_prompt(&model.params, &ids, &AppliedMask::NoMask, &dims);
    let scorer = super::model::Scorer::new(&model.params, &encoded, &dims);
    let state = super::model::initial_state(&model.params, &encoded, &dims);
    let trace = super::model::score_step(&model.params, &scorer, &state, &dims);
    assert_eq!(trace.probs.len(), ids.len() + 1);
    let total: f64 = trace.probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!((softmax(&[0.0, 0.0]).iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn greedy_decode_is_deterministic() {
    let model = default_model();
    let spec = DecodeSpec::greedy(8);
    let a = model.decode(PROMPT, &spec).unwrap();
    let b = model.decode(PROMPT, &spec).unwrap();
    assert_eq!(a, b);
    let lps = a.token_logprobs.as_ref().unwrap();
    assert!(!lps.is_empty());
    assert!(lps.iter().all(|&lp| lp <= 0.0));
}

#[test]
fn mask_is_deterministic_in_its_seed() {
    let a = DropoutMask::sample(64, 0.1, 5);
    let b = DropoutMask::sample(64, 0.1, 5);
    assert_eq!(a, b);
    let c = DropoutMask::sample(64, 0.1, 6);
    assert_ne!(a, c);
    assert!(a.values.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
}

#[test]
fn mask_expectation_matches_unmasked_weight() {
    // mean over 10_000 masks of 16 slots each; per-slot variance is
    // p/(1-p), so the mean of all 160_000 draws has sigma ~ 8.3e-4
    let slots = 16;
    let draws = 10_000;
    let mut sum = 0.0;
    for seed in 0..draws {
        let mask = DropoutMask::sample(slots, 0.1, seed);
        sum += mask.values.iter().sum::<f64>();
    }
    let mean = sum / (slots * draws as usize) as f64;
    let sigma = (0.1f64 / 0.9 / (slots * draws as usize) as f64).sqrt();
    assert!(
        (mean - 1.0).abs() <= 3.0 * sigma,
        "inverted dropout keeps the expectation: mean {mean}, 3 sigma {}",
        3.0 * sigma
    );
}

#[test]
fn vanishing_dropout_degenerates_to_greedy() {
    let model = default_model();
    let greedy = model.decode(PROMPT, &DecodeSpec::greedy(8)).unwrap();
    for seed in 0..20 {
        let mc = model.decode(PROMPT, &DecodeSpec::mc_dropout(1e-9, seed, 8)).unwrap();
        assert_eq!(mc.text, greedy.text, "mask seed {seed}");
    }
}

#[test]
fn vanishing_dropout_matches_greedy_on_random_prompts() {
    let words = ["alice", "bob", "paris", "cello", "born", "plays", "where", "was", "the", "in"];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let model = default_model();
    for trial in 0..100u64 {
        let len = rng.gen_range(3..20);
        let prompt: Vec<&str> =
            (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let prompt = prompt.join(" ");
        let greedy = model.decode(&prompt, &DecodeSpec::greedy(8)).unwrap();
        let mc = model.decode(&prompt, &DecodeSpec::mc_dropout(1e-9, trial, 8)).unwrap();
        assert_eq!(mc.text, greedy.text, "prompt `{prompt}`");
    }
}

#[test]
fn distinct_mask_seeds_reach_distinct_answers() {
    // an untrained model sits near its decision boundaries, so a handful of
    // mask draws is enough to observe at least two distinct outputs
    let model = default_model();
    let mut texts: Vec<String> = (0..20)
        .map(|seed| model.decode(PROMPT, &DecodeSpec::mc_dropout(0.1, seed, 8)).unwrap().text)
        .collect();
    texts.sort();
    texts.dedup();
    assert!(texts.len() >= 2, "20 masks at p=0.1 all decoded identically");
}

#[test]
fn mc_decode_is_deterministic_per_mask_seed() {
    let model = default_model();
    let spec = DecodeSpec::mc_dropout(0.1, 3, 8);
    assert_eq!(model.decode(PROMPT, &spec).unwrap(), model.decode(PROMPT, &spec).unwrap());
}

#[test]
fn top_k_decode_is_deterministic_per_seed() {
    let model = default_model();
    let a = model.decode(PROMPT, &DecodeSpec::top_k(5, 0.7, 21, 8)).unwrap();
    let b = model.decode(PROMPT, &DecodeSpec::top_k(5, 0.7, 21, 8)).unwrap();
    assert_eq!(a, b);
    // across many seeds the sampler must not be constant
    let mut texts: Vec<String> = (0..20)
        .map(|seed| model.decode(PROMPT, &DecodeSpec::top_k(5, 0.7, seed, 8)).unwrap().text)
        .collect();
    texts.sort();
    texts.dedup();
    assert!(texts.len() >= 2);
}

#[test]
fn prompt_cap_is_enforced() {
    let vocab = Vocab::from_texts(["a b c"]);
    let cfg = ToyConfig { max_prompt_tokens: 4, embed_dim: 4, hidden_dim: 4, ..ToyConfig::default() };
    let model = ToyModel::new(vocab, cfg, 0).unwrap();
    let err = model.decode("a b c a b", &DecodeSpec::greedy(4)).unwrap_err();
    assert!(matches!(err, crate::backend::GenerateError::PromptTooLong { tokens: 5, cap: 4 }));
}

#[test]
fn empty_prompt_decodes_to_empty_text() {
    let model = default_model();
    let out = model.decode("", &DecodeSpec::greedy(4)).unwrap();
    assert_eq!(out.text, "");
    assert_eq!(out.token_logprobs.unwrap(), vec![0.0], "EOS is the only candidate");
}

#[test]
fn repeated_single_example_steps_strictly_reduce_loss() {
    let mut model = tiny_model();
    let items = vec![TrainItem::new(PROMPT, "paris", 1.0)];
    let cfg = TrainConfig { epochs: 1, learning_rate: 0.1, batch_size: 1, seed: 5 };
    let mut last = model.loss(PROMPT, "paris", 1.0).unwrap();
    for step in 0..10 {
        model.train(&items, &TrainConfig { seed: cfg.seed + step, ..cfg.clone() }).unwrap();
        let now = model.loss(PROMPT, "paris", 1.0).unwrap();
        assert!(now < last, "step {step}: loss {now} did not drop below {last}");
        last = now;
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let items = vec![
        TrainItem::new(PROMPT, "paris", 1.0),
        TrainItem::new(PROMPT, "cello", 0.5),
        TrainItem::new(PROMPT, "alice", 1.0),
    ];
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let mut a = tiny_model();
    let trace_a = a.train(&items, &cfg).unwrap();
    let mut b = tiny_model();
    let trace_b = b.train(&items, &cfg).unwrap();
    assert_eq!(a.params, b.params, "same seeds, byte-identical parameters");
    assert_eq!(trace_a, trace_b);
}

#[test]
fn zero_epochs_is_rejected_by_config_validation() {
    let mut model = tiny_model();
    let items = vec![TrainItem::new(PROMPT, "paris", 1.0)];
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(matches!(model.train(&items, &cfg), Err(ToyError::BadConfig(_))));
    assert!(matches!(
        model.train(&[], &TrainConfig::default()),
        Err(ToyError::EmptyDataset)
    ));
}

#[test]
fn training_reduces_loss_over_epochs() {
    let mut model = tiny_model();
    let items = vec![
        TrainItem::new(PROMPT, "paris", 1.0),
        TrainItem::new(PROMPT, "cello", 1.0),
    ];
    let before: f64 = items.iter().map(|i| model.loss(&i.prompt, &i.target, 1.0).unwrap()).sum();
    model.train(&items, &TrainConfig::default()).unwrap();
    let after: f64 = items.iter().map(|i| model.loss(&i.prompt, &i.target, 1.0).unwrap()).sum();
    assert!(after < before, "5 default epochs cut the loss: {before} -> {after}");
}

#[test]
fn generator_trait_reports_full_support() {
    let model = default_model();
    for mode in [DecodeMode::Greedy, DecodeMode::TopK, DecodeMode::McDropout] {
        assert!(model.supports(mode));
    }
    let out = model.generate(PROMPT, &DecodeSpec::greedy(4)).unwrap();
    let tokens = out.text.split_whitespace().count();
    assert!(tokens <= 4, "length cap respected, got {tokens} tokens: `{}`", out.text);
}

#[test]
fn from_parts_validates_dimensions() {
    let model = tiny_model();
    let vocab = model.vocab.clone();
    let wrong = ToyConfig { embed_dim: 12, hidden_dim: 8, ..ToyConfig::default() };
    assert!(matches!(
        ToyModel::from_parts(vocab, wrong, model.params.clone()),
        Err(ToyError::BadConfig(_))
    ));
    let rebuilt =
        ToyModel::from_parts(model.vocab.clone(), model.cfg.clone(), model.params.clone()).unwrap();
    assert_eq!(rebuilt, model);
}

#[test]
fn mask_shape_mismatch_is_reported() {
    let model = tiny_model();
    let tiny_mask = DropoutMask::sample(3, 0.1, 0);
    let err = model
        .loss_and_gradients_masked(PROMPT, "paris", 1.0, Some(&tiny_mask))
        .unwrap_err();
    assert!(matches!(err, ToyError::MaskShape { .. }));
}

// Regression anchor: the untrained default model's greedy output on the
// fixed prompt, recorded once. The exact string is arbitrary; the point is
// that decoding never drifts silently.
#[test]
fn untrained_greedy_regression_anchor() {
    let model = default_model();
    let out = model.decode(PROMPT, &DecodeSpec::greedy(8)).unwrap();
    assert_eq!(out.text, ".", "untrained greedy output drifted");
}
