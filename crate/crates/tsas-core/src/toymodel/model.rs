//! Parameters and the differentiable core of the copy-pointer model.
//!
//! Architecture: token embeddings feed a single bidirectional gated-EMA
//! mixing layer (per direction: candidate `u = tanh(Wu x + bu)`, gate
//! `a = sigmoid(Wa x + ba)`, state `h_i = a * h_prev + (1 - a) * u`). At each
//! decode step an additive scorer rates every prompt position plus EOS
//! against the decoder state, and the next decoder state is a tanh recurrence
//! over the emitted token's embedding. The emitted token is the surface
//! string at the copied position, so the model can emit tokens it has no
//! embedding for.
//!
//! All math is f64 with `libm` transcendentals, so runs are reproducible
//! bit-for-bit across platforms.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ToyError;

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Dense row-major matrix; just enough linear algebra for this model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect();
        Matrix { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = A x`
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, slot) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *slot = acc;
        }
    }

    /// `out += A^T y`
    fn matvec_t_accum(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (slot, &w) in out.iter_mut().zip(row) {
                *slot += w * yr;
            }
        }
    }

    /// `A += y x^T`
    fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (slot, &xc) in row.iter_mut().zip(x) {
                *slot += yr * xc;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Candidate/gate weights of one mixing direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w_u: Matrix,
    pub b_u: Vec<f64>,
    pub w_a: Matrix,
    pub b_a: Vec<f64>,
}

impl GateParams {
    fn zeros(hidden: usize, embed: usize) -> Self {
        GateParams {
            w_u: Matrix::zeros(hidden, embed),
            b_u: vec![0.0; hidden],
            w_a: Matrix::zeros(hidden, embed),
            b_a: vec![0.0; hidden],
        }
    }

    fn uniform(hidden: usize, embed: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        GateParams {
            w_u: Matrix::uniform(hidden, embed, scale, rng),
            b_u: vec![0.0; hidden],
            w_a: Matrix::uniform(hidden, embed, scale, rng),
            b_a: vec![0.0; hidden],
        }
    }
}

/// All trainable parameters. The same struct doubles as the gradient
/// container (`zeros_like`), which keeps SGD and the finite-difference
/// checks simple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub embed: Matrix, // V x E
    pub enc_fwd: GateParams,
    pub enc_bwd: GateParams,
    pub w_init: Matrix, // S x S
    pub b_init: Vec<f64>,
    pub w_dec: Matrix, // S x E
    pub u_dec: Matrix, // S x S
    pub b_dec: Vec<f64>,
    /// Bilinear pointer scorer: `z_i = s_t . (w_ptr e_i)`.
    pub w_ptr: Matrix, // S x S
    /// EOS sentinel scored through the same bilinear form.
    pub q_eos: Vec<f64>, // S
}

impl ToyParams {
    pub fn init(vocab_size: usize, embed: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = hidden / 2;
        let scale = 0.1;
        ToyParams {
            embed: Matrix::uniform(vocab_size, embed, scale, &mut rng),
            enc_fwd: GateParams::uniform(half, embed, scale, &mut rng),
            enc_bwd: GateParams::uniform(half, embed, scale, &mut rng),
            w_init: Matrix::uniform(hidden, hidden, scale, &mut rng),
            b_init: vec![0.0; hidden],
            w_dec: Matrix::uniform(hidden, embed, scale, &mut rng),
            u_dec: Matrix::uniform(hidden, hidden, scale, &mut rng),
            b_dec: vec![0.0; hidden],
            w_ptr: Matrix::uniform(hidden, hidden, scale, &mut rng),
            q_eos: (0..hidden).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let half = self.enc_fwd.w_u.rows;
        let embed = self.embed.cols;
        let hidden = self.w_init.rows;
        ToyParams {
            embed: Matrix::zeros(self.embed.rows, embed),
            enc_fwd: GateParams::zeros(half, embed),
            enc_bwd: GateParams::zeros(half, embed),
            w_init: Matrix::zeros(hidden, hidden),
            b_init: vec![0.0; hidden],
            w_dec: Matrix::zeros(hidden, embed),
            u_dec: Matrix::zeros(hidden, hidden),
            b_dec: vec![0.0; hidden],
            w_ptr: Matrix::zeros(hidden, hidden),
            q_eos: vec![0.0; hidden],
        }
    }

    /// Every parameter slab, in a fixed order shared by all flat accessors.
    pub fn slabs(&self) -> Vec<&[f64]> {
        vec![
            &self.embed.data,
            &self.enc_fwd.w_u.data,
            &self.enc_fwd.b_u,
            &self.enc_fwd.w_a.data,
            &self.enc_fwd.b_a,
            &self.enc_bwd.w_u.data,
            &self.enc_bwd.b_u,
            &self.enc_bwd.w_a.data,
            &self.enc_bwd.b_a,
            &self.w_init.data,
            &self.b_init,
            &self.w_dec.data,
            &self.u_dec.data,
            &self.b_dec,
            &self.w_ptr.data,
            &self.q_eos,
        ]
    }

    pub fn slabs_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.embed.data,
            &mut self.enc_fwd.w_u.data,
            &mut self.enc_fwd.b_u,
            &mut self.enc_fwd.w_a.data,
            &mut self.enc_fwd.b_a,
            &mut self.enc_bwd.w_u.data,
            &mut self.enc_bwd.b_u,
            &mut self.enc_bwd.w_a.data,
            &mut self.enc_bwd.b_a,
            &mut self.w_init.data,
            &mut self.b_init,
            &mut self.w_dec.data,
            &mut self.u_dec.data,
            &mut self.b_dec,
            &mut self.w_ptr.data,
            &mut self.q_eos,
        ]
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        self.slabs().iter().map(|s| s.len()).sum()
    }

    pub fn flat_get(&self, index: usize) -> f64 {
        let mut index = index;
        for slab in self.slabs() {
            if index < slab.len() {
                return slab[index];
            }
            index -= slab.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_add(&mut self, index: usize, delta: f64) {
        let mut index = index;
        for slab in self.slabs_mut() {
            if index < slab.len() {
                slab[index] += delta;
                return;
            }
            index -= slab.len();
        }
        panic!("flat index out of range");
    }

    /// `self += scale * other`, slab by slab.
    pub fn add_scaled(&mut self, other: &ToyParams, scale: f64) {
        for (mine, theirs) in self.slabs_mut().into_iter().zip(other.slabs()) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += scale * t;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slabs().into_iter().all(|slab| slab.iter().all(|x| x.is_finite()))
    }
}

/// Where dropout masks apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSite {
    /// Mask the encoder's input weights: the embedding table and the
    /// candidate/gate matrices (literal weight masking).
    #[default]
    Weights,
    /// Mask the encoder output units instead, one mask shared across
    /// positions.
    Activations,
}

/// An inverted-dropout mask: each slot is `1/(1-p)` with probability `1-p`
/// and `0` otherwise, deterministic in `(len, p, seed)`. The expectation of
/// a masked weight equals the unmasked weight, so inference under `p -> 0`
/// degenerates to the plain model.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub values: Vec<f64>,
    pub p: f64,
}

impl DropoutMask {
    pub fn sample(len: usize, p: f64, seed: u64) -> Self {
        debug_assert!(p > 0.0 && p < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let values = (0..len)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        DropoutMask { values, p }
    }
}

/// Number of weight slots masked at the `Weights` site, in mask order:
/// embedding table, then fwd.w_u, fwd.w_a, bwd.w_u, bwd.w_a.
pub(crate) fn masked_weight_len(params: &ToyParams) -> usize {
    params.embed.data.len()
        + params.enc_fwd.w_u.data.len()
        + params.enc_fwd.w_a.data.len()
        + params.enc_bwd.w_u.data.len()
        + params.enc_bwd.w_a.data.len()
}

fn masked_slabs(params: &mut ToyParams) -> [&mut Vec<f64>; 5] {
    [
        &mut params.embed.data,
        &mut params.enc_fwd.w_u.data,
        &mut params.enc_fwd.w_a.data,
        &mut params.enc_bwd.w_u.data,
        &mut params.enc_bwd.w_a.data,
    ]
}

/// `theta (.) M`: the parameters with the weight-site mask multiplied in.
pub(crate) fn apply_weight_mask(params: &ToyParams, mask: &DropoutMask) -> ToyParams {
    let mut masked = params.clone();
    let mut offset = 0;
    for slab in masked_slabs(&mut masked) {
        for (w, m) in slab.iter_mut().zip(&mask.values[offset..]) {
            *w *= m;
        }
        offset += slab.len();
    }
    masked
}

/// Chain rule through the weight mask: gradients taken w.r.t. the effective
/// (masked) weights convert to original-weight gradients by the same
/// elementwise multiply.
pub(crate) fn mask_weight_grads(grads: &mut ToyParams, mask: &DropoutMask) {
    let mut offset = 0;
    for slab in masked_slabs(grads) {
        for (g, m) in slab.iter_mut().zip(&mask.values[offset..]) {
            *g *= m;
        }
        offset += slab.len();
    }
}

/// Stored activations of one encoder direction, indexed by position.
struct DirTrace {
    u: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn run_direction<'a>(
    gp: &GateParams,
    xs: &[&'a [f64]],
    reversed: bool,
) -> DirTrace {
    let len = xs.len();
    let half = gp.w_u.rows;
    let mut trace = DirTrace {
        u: vec![vec![0.0; half]; len],
        a: vec![vec![0.0; half]; len],
        h: vec![vec![0.0; half]; len],
    };
    let mut h_prev = vec![0.0; half];
    let order: Vec<usize> =
        if reversed { (0..len).rev().collect() } else { (0..len).collect() };
    for i in order {
        let x = xs[i];
        let (u, a) = {
            let mut u = vec![0.0; half];
            let mut a = vec![0.0; half];
            gp.w_u.matvec(x, &mut u);
            gp.w_a.matvec(x, &mut a);
            for (slot, b) in u.iter_mut().zip(&gp.b_u) {
                *slot = tanh(*slot + b);
            }
            for (slot, b) in a.iter_mut().zip(&gp.b_a) {
                *slot = sigmoid(*slot + b);
            }
            (u, a)
        };
        let mut h = vec![0.0; half];
        for k in 0..half {
            h[k] = a[k] * h_prev[k] + (1.0 - a[k]) * u[k];
        }
        h_prev.clone_from(&h);
        trace.u[i] = u;
        trace.a[i] = a;
        trace.h[i] = h;
    }
    trace
}

/// Everything the scorer and the backward pass need about the encoded
/// prompt.
pub(crate) struct Encoded {
    /// Per-position states, hidden-dim each (fwd half then bwd half), after
    /// any activation-site mask.
    pub states: Vec<Vec<f64>>,
    fwd: DirTrace,
    bwd: DirTrace,
}

pub(crate) struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
}

/// Forward encoder over prompt token ids. `activation_mask` is the
/// activation-site dropout mask; weight-site masking happens before this
/// call via [`apply_weight_mask`].
pub(crate) fn encode_prompt(
    params: &ToyParams,
    ids: &[u32],
    activation_mask: Option<&DropoutMask>,
    dims: &ModelDims,
) -> Encoded {
    let xs: Vec<&[f64]> = ids.iter().map(|&id| params.embed.row(id as usize)).collect();
    let fwd = run_direction(&params.enc_fwd, &xs, false);
    let bwd = run_direction(&params.enc_bwd, &xs, true);

    let half = dims.hidden / 2;
    let len = ids.len();
    let mut states = Vec::with_capacity(len);
    for i in 0..len {
        let mut state = Vec::with_capacity(dims.hidden);
        state.extend_from_slice(&fwd.h[i]);
        state.extend_from_slice(&bwd.h[i]);
        if let Some(m) = activation_mask {
            for (s, v) in state.iter_mut().zip(&m.values) {
                *s *= v;
            }
        }
        debug_assert_eq!(state.len(), half * 2);
        states.push(state);
    }
    Encoded { states, fwd, bwd }
}

/// Per-step scorer state reused across decode steps: the bilinear
/// projections `w_ptr e_i` (and `w_ptr q_eos`) do not depend on the decoder
/// state.
pub(crate) struct Scorer {
    enc_proj: Vec<Vec<f64>>,
    eos_proj: Vec<f64>,
}

impl Scorer {
    pub(crate) fn new(params: &ToyParams, encoded: &Encoded, dims: &ModelDims) -> Self {
        let enc_proj = encoded
            .states
            .iter()
            .map(|e| {
                let mut out = vec![0.0; dims.hidden];
                params.w_ptr.matvec(e, &mut out);
                out
            })
            .collect();
        let mut eos_proj = vec![0.0; dims.hidden];
        params.w_ptr.matvec(&params.q_eos, &mut eos_proj);
        Scorer { enc_proj, eos_proj }
    }
}

/// One scored decode step: the softmax over positions+EOS.
pub(crate) struct StepTrace {
    /// softmax over `len + 1` entries; the last is EOS.
    pub probs: Vec<f64>,
}

pub(crate) fn score_step(
    params: &ToyParams,
    scorer: &Scorer,
    state: &[f64],
    _dims: &ModelDims,
) -> StepTrace {
    let _ = params;
    let mut logits: Vec<f64> = scorer.enc_proj.iter().map(|proj| dot(state, proj)).collect();
    logits.push(dot(state, &scorer.eos_proj));
    StepTrace { probs: softmax(&logits) }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Decoder state transition: `s' = tanh(w_dec x + u_dec s + b_dec)`.
pub(crate) fn next_state(params: &ToyParams, token_id: u32, state: &[f64], dims: &ModelDims) -> Vec<f64> {
    let x = params.embed.row(token_id as usize);
    let mut pre = vec![0.0; dims.hidden];
    params.w_dec.matvec(x, &mut pre);
    let mut rec = vec![0.0; dims.hidden];
    params.u_dec.matvec(state, &mut rec);
    for k in 0..dims.hidden {
        pre[k] = tanh(pre[k] + rec[k] + params.b_dec[k]);
    }
    pre
}

/// Initial decoder state from the last encoder position. The question sits
/// at the end of the prompt, so the recency-weighted forward mix makes this
/// a question-focused summary.
pub(crate) fn initial_state(params: &ToyParams, encoded: &Encoded, dims: &ModelDims) -> Vec<f64> {
    let zeros;
    let last: &[f64] = match encoded.states.last() {
        Some(state) => state,
        None => {
            zeros = vec![0.0; dims.hidden];
            &zeros
        }
    };
    let mut pre = vec![0.0; dims.hidden];
    params.w_init.matvec(last, &mut pre);
    for (p, b) in pre.iter_mut().zip(&params.b_init) {
        *p = tanh(*p + b);
    }
    pre
}

/// Weighted token-level cross-entropy along the target sequence (EOS step
/// included), with gradients. The probability of a target token is the sum
/// over prompt positions holding that exact surface string.
#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_and_gradients_inner(
    params: &ToyParams,
    ids: &[u32],
    surfaces: &[&str],
    target_tokens: &[&str],
    target_ids: &[u32],
    weight: f64,
    activation_mask: Option<&DropoutMask>,
    dims: &ModelDims,
) -> Result<(f64, ToyParams), ToyError> {
    debug_assert_eq!(ids.len(), surfaces.len());
    debug_assert_eq!(target_tokens.len(), target_ids.len());
    let len = ids.len();
    let hidden = dims.hidden;

    // positions matching each target token; all must be representable
    let mut matches: Vec<Vec<usize>> = Vec::with_capacity(target_tokens.len());
    for &tok in target_tokens {
        let at: Vec<usize> =
            (0..len).filter(|&i| surfaces[i] == tok).collect();
        if at.is_empty() {
            return Err(ToyError::UnrepresentableTarget { token: String::from(tok) });
        }
        matches.push(at);
    }

    // ---- forward ----
    let encoded = encode_prompt(params, ids, activation_mask, dims);
    let scorer = Scorer::new(params, &encoded, dims);
    let steps = target_tokens.len() + 1; // final step targets EOS
    let mut states = Vec::with_capacity(steps);
    states.push(initial_state(params, &encoded, dims));
    for t in 0..target_tokens.len() {
        let next = next_state(params, target_ids[t], &states[t], dims);
        states.push(next);
    }

    let mut traces = Vec::with_capacity(steps);
    let mut loss = 0.0;
    for (t, state) in states.iter().enumerate() {
        let trace = score_step(params, &scorer, state, dims);
        let p_target = if t < target_tokens.len() {
            matches[t].iter().map(|&i| trace.probs[i]).sum::<f64>()
        } else {
            trace.probs[len]
        };
        loss -= ln(p_target.max(f64::MIN_POSITIVE));
        traces.push((trace, p_target));
    }
    loss *= weight;

    // ---- backward ----
    let mut grads = params.zeros_like();
    let mut d_states: Vec<Vec<f64>> = vec![vec![0.0; hidden]; steps];
    let mut d_enc: Vec<Vec<f64>> = vec![vec![0.0; hidden]; len];
    let mut d_q_eos = vec![0.0; hidden];

    for (t, (trace, p_target)) in traces.iter().enumerate() {
        // dL/dz_j = w * (p_j - q_j), q the renormalized target slice
        let mut dz = vec![0.0; len + 1];
        for (j, &p) in trace.probs.iter().enumerate() {
            dz[j] = weight * p;
        }
        if t < target_tokens.len() {
            for &i in &matches[t] {
                dz[i] -= weight * trace.probs[i] / p_target;
            }
        } else {
            dz[len] -= weight * trace.probs[len] / p_target;
        }

        // z_j = s_t . (w_ptr v_j) with v_j the encoder state (or q_eos):
        //   ds      += sum_j dz_j * (w_ptr v_j)
        //   dw_ptr  += s_t (x) sum_j dz_j v_j
        //   dv_j    += dz_j * w_ptr^T s_t
        let state = &states[t];
        let mut back = vec![0.0; hidden]; // w_ptr^T s_t
        params.w_ptr.matvec_t_accum(state, &mut back);
        let mut weighted_inputs = vec![0.0; hidden]; // sum_j dz_j v_j
        for (i, dzi) in dz[..len].iter().enumerate() {
            let e = &encoded.states[i];
            for k in 0..hidden {
                d_states[t][k] += dzi * scorer.enc_proj[i][k];
                weighted_inputs[k] += dzi * e[k];
                d_enc[i][k] += dzi * back[k];
            }
        }
        let dzeos = dz[len];
        for k in 0..hidden {
            d_states[t][k] += dzeos * scorer.eos_proj[k];
            weighted_inputs[k] += dzeos * params.q_eos[k];
            d_q_eos[k] += dzeos * back[k];
        }
        grads.w_ptr.add_outer(state, &weighted_inputs);
    }
    for (slot, d) in grads.q_eos.iter_mut().zip(&d_q_eos) {
        *slot += d;
    }

    // decoder recurrence, last state first
    let mut d_last_enc = vec![0.0; hidden];
    for t in (0..steps).rev() {
        let state = &states[t];
        let mut dpre = vec![0.0; hidden];
        for k in 0..hidden {
            dpre[k] = d_states[t][k] * (1.0 - state[k] * state[k]);
        }
        if t == 0 {
            let zeros;
            let last: &[f64] = match encoded.states.last() {
                Some(s) => s,
                None => {
                    zeros = vec![0.0; hidden];
                    &zeros
                }
            };
            grads.w_init.add_outer(&dpre, last);
            params.w_init.matvec_t_accum(&dpre, &mut d_last_enc);
            for k in 0..hidden {
                grads.b_init[k] += dpre[k];
            }
        } else {
            let token_id = target_ids[t - 1] as usize;
            let x = params.embed.row(token_id);
            grads.w_dec.add_outer(&dpre, x);
            let mut dx = vec![0.0; dims.embed];
            params.w_dec.matvec_t_accum(&dpre, &mut dx);
            for (slot, d) in grads.embed.row_mut(token_id).iter_mut().zip(&dx) {
                *slot += d;
            }
            grads.u_dec.add_outer(&dpre, &states[t - 1]);
            params.u_dec.matvec_t_accum(&dpre, &mut d_states[t - 1]);
            for k in 0..hidden {
                grads.b_dec[k] += dpre[k];
            }
        }
    }
    if len > 0 {
        for (slot, d) in d_enc[len - 1].iter_mut().zip(&d_last_enc) {
            *slot += d;
        }
    }

    backward_encoder(params, &encoded, ids, &mut grads, d_enc, activation_mask, dims);

    Ok((loss, grads))
}

/// Backprop through the bidirectional encoder and the embedding lookups.
fn backward_encoder(
    params: &ToyParams,
    encoded: &Encoded,
    ids: &[u32],
    grads: &mut ToyParams,
    mut d_enc: Vec<Vec<f64>>,
    activation_mask: Option<&DropoutMask>,
    dims: &ModelDims,
) {
    let len = ids.len();
    let half = dims.hidden / 2;

    // activation-site mask multiplies the outputs, so its gradient does too
    if let Some(m) = activation_mask {
        for d in d_enc.iter_mut() {
            for (slot, v) in d.iter_mut().zip(&m.values) {
                *slot *= v;
            }
        }
    }

    let mut d_embed_rows: Vec<Vec<f64>> = vec![vec![0.0; dims.embed]; len];

    backward_direction(
        &params.enc_fwd,
        &encoded.fwd,
        ids,
        params,
        &mut grads.enc_fwd,
        &mut d_embed_rows,
        |d| &d[..half],
        &d_enc,
        false,
    );
    backward_direction(
        &params.enc_bwd,
        &encoded.bwd,
        ids,
        params,
        &mut grads.enc_bwd,
        &mut d_embed_rows,
        |d| &d[half..],
        &d_enc,
        true,
    );

    for (i, &id) in ids.iter().enumerate() {
        for (slot, d) in grads.embed.row_mut(id as usize).iter_mut().zip(&d_embed_rows[i]) {
            *slot += d;
        }
    }
}

/// Backprop one direction. `slice` picks this direction's half of a
/// hidden-dim gradient vector.
#[allow(clippy::too_many_arguments)]
fn backward_direction<'d>(
    gp: &GateParams,
    trace: &DirTrace,
    ids: &[u32],
    params: &ToyParams,
    grads: &mut GateParams,
    d_embed_rows: &mut [Vec<f64>],
    slice: impl Fn(&'d [f64]) -> &'d [f64],
    d_enc: &'d [Vec<f64>],
    reversed: bool,
) {
    let len = ids.len();
    let half = gp.w_u.rows;
    let mut carry = vec![0.0; half];
    // walk in reverse processing order
    let order: Vec<usize> =
        if reversed { (0..len).collect() } else { (0..len).rev().collect() };
    for (step, &i) in order.iter().enumerate() {
        let mut dh = carry.clone();
        for (slot, d) in dh.iter_mut().zip(slice(&d_enc[i])) {
            *slot += d;
        }
        let u = &trace.u[i];
        let a = &trace.a[i];
        // h_prev in processing order: the previous position's h, zero at the start
        let prev_index = order.get(step + 1).copied();
        let zeros = vec![0.0; half];
        let h_prev: &[f64] = match prev_index {
            Some(pi) => &trace.h[pi],
            None => &zeros,
        };

        let mut dpre_u = vec![0.0; half];
        let mut dpre_a = vec![0.0; half];
        let mut new_carry = vec![0.0; half];
        for k in 0..half {
            let da = dh[k] * (h_prev[k] - u[k]);
            let du = dh[k] * (1.0 - a[k]);
            new_carry[k] = dh[k] * a[k];
            dpre_u[k] = du * (1.0 - u[k] * u[k]);
            dpre_a[k] = da * a[k] * (1.0 - a[k]);
        }
        let x = params.embed.row(ids[i] as usize);
        grads.w_u.add_outer(&dpre_u, x);
        grads.w_a.add_outer(&dpre_a, x);
        for k in 0..half {
            grads.b_u[k] += dpre_u[k];
            grads.b_a[k] += dpre_a[k];
        }
        gp.w_u.matvec_t_accum(&dpre_u, &mut d_embed_rows[i]);
        gp.w_a.matvec_t_accum(&dpre_a, &mut d_embed_rows[i]);
        carry = new_carry;
    }
}
