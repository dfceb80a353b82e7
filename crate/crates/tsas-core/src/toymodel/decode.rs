//! Autoregressive copy decoding: greedy, top-k sampling, and MC dropout
//! (greedy under a sampled weight mask).

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{DecodeSpec, GenerateError, Generation};
use crate::types::DecodeMode;

use super::model::{
    apply_weight_mask, encode_prompt, initial_state, ln, next_state, score_step, DropoutMask,
    DropoutSite, ModelDims, ToyParams,
};
use super::ToyModel;

/// What one decode step chose.
enum Choice {
    Position(usize),
    Eos,
}

impl ToyModel {
    /// Decode an answer for the prompt. Greedy is deterministic; top_k is
    /// deterministic per sampling seed; mc_dropout samples a weight mask
    /// from the mask seed and then decodes greedily under it.
    ///
    /// Reported token log-probs are the marginal probability of the emitted
    /// surface string under the step's plain softmax (positions holding the
    /// same token pool their mass), with the EOS step appended, matching the
    /// training loss.
    pub fn decode(&self, prompt: &str, spec: &DecodeSpec) -> Result<Generation, GenerateError> {
        spec.validate()?;
        let (ids, surfaces) = self.tokenize_prompt(prompt)?;

        let mask = match spec.mode {
            DecodeMode::McDropout => Some(DropoutMask::sample(
                self.mask_len(),
                spec.dropout_rate,
                spec.mask_seed.expect("validated: mc_dropout carries a mask seed"),
            )),
            _ => None,
        };
        let masked_params: Option<ToyParams>;
        let (params, activation_mask): (&ToyParams, Option<&DropoutMask>) =
            match (&mask, self.cfg.dropout_site) {
                (None, _) => (&self.params, None),
                (Some(m), DropoutSite::Weights) => {
                    masked_params = Some(apply_weight_mask(&self.params, m));
                    (masked_params.as_ref().expect("just set"), None)
                }
                (Some(m), DropoutSite::Activations) => (&self.params, Some(m)),
            };

        let mut sampler = spec.sampling_seed.map(ChaCha8Rng::seed_from_u64);
        let dims = ModelDims { embed: self.cfg.embed_dim, hidden: self.cfg.hidden_dim };
        let encoded = encode_prompt(params, &ids, activation_mask, &dims);
        let scorer = super::model::Scorer::new(params, &encoded, &dims);

        let mut state = initial_state(params, &encoded, &dims);
        let mut emitted: Vec<&str> = Vec::new();
        let mut logprobs: Vec<f64> = Vec::new();
        let eos_index = ids.len();

        for _ in 0..spec.max_new_tokens {
            let trace = score_step(params, &scorer, &state, &dims);
            let choice = match spec.mode {
                DecodeMode::Greedy | DecodeMode::McDropout => argmax_choice(&trace.probs, eos_index),
                DecodeMode::TopK => sample_choice(
                    &trace.probs,
                    eos_index,
                    spec.top_k as usize,
                    spec.temperature,
                    sampler.as_mut().expect("validated: top_k carries a sampling seed"),
                ),
            };
            match choice {
                Choice::Eos => {
                    logprobs.push(ln(trace.probs[eos_index]));
                    break;
                }
                Choice::Position(i) => {
                    let token = surfaces[i];
                    let marginal: f64 = surfaces
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| **s == token)
                        .map(|(j, _)| trace.probs[j])
                        .sum();
                    logprobs.push(ln(marginal));
                    emitted.push(token);
                    state = next_state(params, self.vocab.id_of(token), &state, &dims);
                }
            }
        }

        Ok(Generation { text: emitted.join(" "), token_logprobs: Some(logprobs) })
    }

    pub(crate) fn tokenize_prompt<'p>(
        &self,
        prompt: &'p str,
    ) -> Result<(Vec<u32>, Vec<&'p str>), GenerateError> {
        let surfaces: Vec<&str> = super::vocab::tokenize(prompt).collect();
        if surfaces.len() > self.cfg.max_prompt_tokens {
            return Err(GenerateError::PromptTooLong {
                tokens: surfaces.len(),
                cap: self.cfg.max_prompt_tokens,
            });
        }
        let ids = surfaces.iter().map(|s| self.vocab.id_of(s)).collect();
        Ok((ids, surfaces))
    }

    pub(crate) fn mask_len(&self) -> usize {
        match self.cfg.dropout_site {
            super::model::DropoutSite::Weights => super::model::masked_weight_len(&self.params),
            super::model::DropoutSite::Activations => self.cfg.hidden_dim,
        }
    }
}

/// First index of the maximal probability; positions and EOS compete.
fn argmax_choice(probs: &[f64], eos_index: usize) -> Choice {
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    if best == eos_index {
        Choice::Eos
    } else {
        Choice::Position(best)
    }
}

/// Temperature softmax over the step logits, renormalized over the top-k
/// candidates (EOS included), then sampled. Candidate order for equal
/// probabilities is by index, so runs replay exactly.
fn sample_choice(
    probs: &[f64],
    eos_index: usize,
    k: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Choice {
    // rebuild tempered probabilities from the plain softmax: p^(1/T),
    // renormalized, equals softmax(z/T)
    let inv_t = 1.0 / temperature;
    let tempered: Vec<f64> = probs.iter().map(|&p| libm::pow(p, inv_t)).collect();
    let mut order: Vec<usize> = (0..tempered.len()).collect();
    order.sort_by(|&a, &b| {
        tempered[b].partial_cmp(&tempered[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order.truncate(k.max(1));

    let total: f64 = order.iter().map(|&i| tempered[i]).sum();
    let draw: f64 = rng.gen::<f64>() * total;
    let mut cumulative = 0.0;
    let mut chosen = order[order.len() - 1];
    for &i in &order {
        cumulative += tempered[i];
        if draw < cumulative {
            chosen = i;
            break;
        }
    }
    if chosen == eos_index {
        Choice::Eos
    } else {
        Choice::Position(chosen)
    }
}
