//! Skill quantization: encoder, VQ codebook, usage-tracked probabilistic
//! reinitialization, and the instruction-recovery decoder.
//!
//! The encoder maps `[state || lang]` to a latent; the nearest code is
//! selected (ties to the lowest index) and passed downstream through a
//! straight-through estimator. Per trajectory, the first code of every
//! consecutive run is decoded back to the frozen language embedding; the
//! recovery MSE plus commitment and codebook terms form the skill loss.
//!
//! Reinitialization resets code `k` whenever a draw `y` in (0, 1] exceeds
//! `usage_k * M / total_usage` (never-used codes always reset, codes at or
//! above average usage never do) and replaces it by an encoder output drawn
//! with probability proportional to inverse squared distance.

use crate::embed::{LangEmbedding, EMBED_DIM};
use crate::env::STATE_DIM;
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, Mlp, MlpVars};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Learnable codebook of `m` skill vectors of dimension `d`, with per-window
/// usage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    codes: Tensor,
    usage: Vec<u64>,
    windows: u64,
}

impl Codebook {
    /// Fresh codebook with entries uniform in [-0.5, 0.5].
    pub fn init(m: usize, d: usize, rng: &mut Rng) -> Self {
        let data = (0..m * d).map(|_| rng.range(-0.5, 0.5)).collect();
        Codebook {
            codes: Tensor::new(vec![m, d], data).expect("codebook shape"),
            usage: vec![0; m],
            windows: 0,
        }
    }

    pub fn from_parts(codes: Tensor, usage: Vec<u64>, windows: u64) -> Result<Self> {
        if codes.shape().len() != 2 || codes.shape()[0] != usage.len() {
            return Err(Error::contract(format!(
                "codebook shape {:?} vs {} usage counts",
                codes.shape(),
                usage.len()
            )));
        }
        Ok(Codebook { codes, usage, windows })
    }

    pub fn size(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn codes_mut(&mut self) -> &mut Tensor {
        &mut self.codes
    }

    pub fn code(&self, k: usize) -> &[f64] {
        self.codes.row(k)
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn windows(&self) -> u64 {
        self.windows
    }

    /// Nearest code by Euclidean distance, ties to the lowest index. Pure:
    /// does not record usage (evaluation path).
    pub fn nearest(&self, latent: &[f64]) -> (usize, f64) {
        nearest_code(&self.codes, latent)
    }

    /// Nearest code, recording a usage count for the reinit window.
    pub fn quantize(&mut self, latent: &[f64]) -> (usize, Vec<f64>) {
        let (idx, _) = self.nearest(latent);
        self.usage[idx] += 1;
        (idx, self.code(idx).to_vec())
    }

    /// Record usage counts for indices chosen via a batched nearest scan.
    pub fn record_usage(&mut self, indices: &[usize]) {
        for &i in indices {
            self.usage[i] += 1;
        }
    }
}

/// Argmin over rows of `codes` by squared distance to `latent`; ties break
/// to the lowest index (strict improvement required to switch).
pub fn nearest_code(codes: &Tensor, latent: &[f64]) -> (usize, f64) {
    debug_assert_eq!(codes.cols(), latent.len());
    let mut best = (0usize, f64::INFINITY);
    for k in 0..codes.rows() {
        let d2: f64 = codes
            .row(k)
            .iter()
            .zip(latent)
            .map(|(c, x)| (c - x) * (c - x))
            .sum();
        if d2 < best.1 {
            best = (k, d2);
        }
    }
    best
}

/// Keep the first element of each maximal run of equal values.
pub fn unique_consecutive(indices: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for &i in indices {
        if out.last() != Some(&i) {
            out.push(i);
        }
    }
    out
}

/// Straight-through estimator: forward value is `code`, gradients pass to
/// `latent` unchanged, and `code` receives nothing through this path.
pub fn straight_through(tape: &mut Tape, latent: Var, code: Var) -> Result<Var> {
    let delta = tape.sub(code, latent)?;
    let frozen = tape.detach(delta);
    tape.add(latent, frozen)
}

/// Skill encoder: `[state || lang]` -> latent of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillEncoder {
    pub mlp: Mlp,
}

impl SkillEncoder {
    pub fn init(code_dim: usize, rng: &mut Rng) -> Self {
        SkillEncoder {
            mlp: Mlp::init(&[STATE_DIM + EMBED_DIM, 64, 64, code_dim], rng),
        }
    }

    /// Pure single-state encoding.
    pub fn encode(&self, state: &[f64], lang: &LangEmbedding) -> Result<Vec<f64>> {
        if state.len() != STATE_DIM {
            return Err(Error::ShapeMismatch {
                op: "encode_skill",
                detail: format!("state dim {} vs {STATE_DIM}", state.len()),
            });
        }
        let mut input = Vec::with_capacity(STATE_DIM + EMBED_DIM);
        input.extend_from_slice(state);
        input.extend_from_slice(lang.as_slice());
        Ok(self.mlp.forward(&Tensor::vector(input))?.data().to_vec())
    }
}

/// Recorded batch encoding: `states` is `[n, STATE_DIM]`, the language row
/// is broadcast to every step. Returns the `[n, d]` latent var.
pub fn encode_batch_tape(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_vars: &MlpVars,
    states: &Tensor,
    lang: &LangEmbedding,
) -> Result<Var> {
    let n = states.rows();
    let mut lang_rows = Vec::with_capacity(n * EMBED_DIM);
    for _ in 0..n {
        lang_rows.extend_from_slice(lang.as_slice());
    }
    let sv = tape.leaf(states.clone());
    let lv = tape.leaf(Tensor::new(vec![n, EMBED_DIM], lang_rows)?);
    let input = tape.concat_cols(sv, lv)?;
    mlp_forward(tape, encoder, enc_vars, input)
}

/// Instruction-recovery decoder over the first `k` deduplicated codes.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryDecoder {
    pub mlp: Mlp,
    /// Number of code slots the decoder consumes (`K`).
    pub options: usize,
}

impl RecoveryDecoder {
    pub fn init(code_dim: usize, options: usize, rng: &mut Rng) -> Self {
        RecoveryDecoder {
            mlp: Mlp::init(&[options * code_dim, 64, EMBED_DIM], rng),
            options,
        }
    }

    /// Pure decode: concatenate the first `min(K, len)` code vectors,
    /// zero-pad to `K*d`, forward.
    pub fn recover(&self, deduped_codes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if deduped_codes.is_empty() {
            return Err(Error::contract("recover_instruction on empty code list"));
        }
        let d = deduped_codes[0].len();
        let mut input = vec![0.0; self.options * d];
        for (slot, code) in deduped_codes.iter().take(self.options).enumerate() {
            input[slot * d..(slot + 1) * d].copy_from_slice(code);
        }
        Ok(self.mlp.forward(&Tensor::vector(input))?.data().to_vec())
    }
}

/// Stop-gradient branches captured as constants at a fixed parameter point.
///
/// Gradient checking needs this: finite differences measure the true
/// derivative of whatever function they evaluate, so the function handed to
/// the checker must hold quantization indices and every `sg(...)` value
/// fixed. The analytic gradient of that surrogate at the capture point is
/// exactly the straight-through gradient the training step uses.
#[derive(Clone, Debug)]
pub struct FrozenSkill {
    pub indices: Vec<usize>,
    /// Encoder outputs at the capture point, `[n, d]`.
    pub latents: Tensor,
    /// Selected code rows at the capture point, `[n, d]`.
    pub codes: Tensor,
}

/// Evaluate the stop-gradient branches at the current parameters.
pub fn capture_frozen(
    encoder: &SkillEncoder,
    codebook: &Codebook,
    states: &Tensor,
    lang: &LangEmbedding,
) -> Result<FrozenSkill> {
    let n = states.rows();
    let mut input = Vec::with_capacity(n * (STATE_DIM + EMBED_DIM));
    for r in 0..n {
        input.extend_from_slice(states.row(r));
        input.extend_from_slice(lang.as_slice());
    }
    let latents = encoder
        .mlp
        .forward(&Tensor::new(vec![n, STATE_DIM + EMBED_DIM], input)?)?;
    let indices: Vec<usize> = (0..n)
        .map(|r| nearest_code(codebook.codes(), latents.row(r)).0)
        .collect();
    let d = codebook.dim();
    let mut codes = Vec::with_capacity(n * d);
    for &k in &indices {
        codes.extend_from_slice(codebook.code(k));
    }
    Ok(FrozenSkill {
        indices,
        latents,
        codes: Tensor::new(vec![n, d], codes)?,
    })
}

/// Loss weights for the quantizer terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkillWeights {
    /// Weight of the instruction-recovery MSE.
    pub recon: f64,
    /// Commitment weight (latent pulled toward its chosen code).
    pub commitment: f64,
    /// Codebook weight (code pulled toward the latent).
    pub codebook: f64,
}

impl Default for SkillWeights {
    fn default() -> Self {
        SkillWeights {
            recon: 0.01,
            commitment: 1.0,
            codebook: 1.0,
        }
    }
}

/// Tape nodes of one trajectory's skill loss, plus the chosen indices.
pub struct SkillLossParts {
    /// recon*w_recon + commitment*beta + codebook*w_cb
    pub loss: Var,
    /// Recovery MSE (absent when no decoder is configured).
    pub recon: Option<Var>,
    /// Encoder outputs, `[n, d]` on the tape.
    pub latents: Var,
    pub indices: Vec<usize>,
}

/// Build one trajectory's skill loss on the tape.
///
/// Per step `t`: encode, select the nearest code, then
///   commitment = mean_t ||latent_t - sg(code_t)||^2
///   codebook   = mean_t ||sg(latent_t) - code_t||^2
///   recon      = MSE(decode(first K deduped codes), lang)   (mean over dims)
///
/// The squared norms sum over code dimensions; the means run over steps.
/// Gradients reach the encoder (commitment), the codebook rows (codebook
/// term and the decoder input), and the decoder (recon).
///
/// With `frozen`, indices come from the capture and the `sg(...)` branches
/// are constants, making the loss a smooth function fit for finite
/// differences.
#[allow(clippy::too_many_arguments)]
pub fn skill_loss_tape(
    tape: &mut Tape,
    encoder: &Mlp,
    enc_vars: &MlpVars,
    decoder: Option<(&RecoveryDecoder, &MlpVars)>,
    cb_codes: &Tensor,
    cb_var: Var,
    states: &Tensor,
    lang: &LangEmbedding,
    weights: &SkillWeights,
    frozen: Option<&FrozenSkill>,
) -> Result<SkillLossParts> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::contract("skill loss over an empty trajectory"));
    }
    let latents = encode_batch_tape(tape, encoder, enc_vars, states, lang)?;

    let indices: Vec<usize> = match frozen {
        Some(f) => {
            if f.indices.len() != n {
                return Err(Error::contract(format!(
                    "{} frozen indices for {n} steps",
                    f.indices.len()
                )));
            }
            f.indices.clone()
        }
        None => {
            let lat_val = tape.value(latents);
            (0..n).map(|r| nearest_code(cb_codes, lat_val.row(r)).0).collect()
        }
    };

    let codes = tape.gather_rows(cb_var, indices.clone())?;

    // commitment: gradient to the encoder only
    let codes_sg = match frozen {
        None => tape.detach(codes),
        Some(f) => tape.leaf(f.codes.clone()),
    };
    let dc = tape.sub(latents, codes_sg)?;
    let dc2 = tape.mul(dc, dc)?;
    let dc_sum = tape.sum(dc2);
    let commitment = tape.scale(dc_sum, 1.0 / n as f64);

    // codebook term: gradient to the codes only
    let lat_sg = match frozen {
        None => tape.detach(latents),
        Some(f) => tape.leaf(f.latents.clone()),
    };
    let db = tape.sub(lat_sg, codes)?;
    let db2 = tape.mul(db, db)?;
    let db_sum = tape.sum(db2);
    let cb_term = tape.scale(db_sum, 1.0 / n as f64);

    let mut loss = {
        let a = tape.scale(commitment, weights.commitment);
        let b = tape.scale(cb_term, weights.codebook);
        tape.add(a, b)?
    };

    let mut recon_var = None;
    if let Some((decoder, dec_vars)) = decoder {
        let deduped = unique_consecutive(&indices);
        let k = decoder.options;
        let take = deduped.len().min(k);
        let d = cb_codes.cols();
        let picked = tape.gather_rows(cb_var, deduped[..take].to_vec())?;
        let mut flat = tape.reshape(picked, vec![1, take * d])?;
        if take < k {
            let pad = tape.leaf(Tensor::zeros(vec![1, (k - take) * d]));
            flat = tape.concat_cols(flat, pad)?;
        }
        let decoded = mlp_forward(tape, &decoder.mlp, dec_vars, flat)?;
        let target = tape.leaf(Tensor::new(vec![1, EMBED_DIM], lang.as_slice().to_vec())?);
        let dr = tape.sub(decoded, target)?;
        let dr2 = tape.mul(dr, dr)?;
        let recon = tape.mean(dr2);
        let weighted = tape.scale(recon, weights.recon);
        loss = tape.add(loss, weighted)?;
        recon_var = Some(recon);
    }

    Ok(SkillLossParts {
        loss,
        recon: recon_var,
        latents,
        indices,
    })
}

/// Convenience evaluation of the skill loss for one trajectory. Records
/// usage on the codebook like the training path does.
pub fn skill_loss(
    encoder: &SkillEncoder,
    decoder: Option<&RecoveryDecoder>,
    codebook: &mut Codebook,
    states: &Tensor,
    lang: &LangEmbedding,
    weights: &SkillWeights,
) -> Result<(f64, Vec<usize>)> {
    let mut tape = Tape::new();
    let enc_vars = encoder.mlp.vars(&mut tape);
    let dec_vars = decoder.map(|d| d.mlp.vars(&mut tape));
    let cb_var = tape.leaf(codebook.codes().clone());
    let parts = skill_loss_tape(
        &mut tape,
        &encoder.mlp,
        &enc_vars,
        decoder.zip(dec_vars.as_ref()),
        codebook.codes(),
        cb_var,
        states,
        lang,
        weights,
        None,
    )?;
    codebook.record_usage(&parts.indices);
    let loss = tape.value(parts.loss).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite("skill_loss".into()));
    }
    Ok((loss, parts.indices))
}

/// Per-step code indices for a trajectory without recording usage
/// (evaluation/probing path).
pub fn trajectory_indices(
    encoder: &SkillEncoder,
    codebook: &Codebook,
    states: &Tensor,
    lang: &LangEmbedding,
) -> Result<Vec<usize>> {
    let n = states.rows();
    let mut input = Vec::with_capacity(n * (STATE_DIM + EMBED_DIM));
    for r in 0..n {
        input.extend_from_slice(states.row(r));
        input.extend_from_slice(lang.as_slice());
    }
    let latents = encoder
        .mlp
        .forward(&Tensor::new(vec![n, STATE_DIM + EMBED_DIM], input)?)?;
    Ok((0..n)
        .map(|r| codebook.nearest(latents.row(r)).0)
        .collect())
}

/// Reinitialization schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReinitConfig {
    pub every: u64,
    pub until: u64,
    /// Squared-distance floor below which a candidate is chosen
    /// deterministically (the inverse-square weight is singular there).
    pub eps_d: f64,
}

impl Default for ReinitConfig {
    fn default() -> Self {
        ReinitConfig {
            every: 50,
            until: 500,
            eps_d: 1e-12,
        }
    }
}

impl ReinitConfig {
    pub fn scheduled(&self, iteration: u64) -> bool {
        iteration < self.until && iteration % self.every == 0 && iteration > 0
    }
}

/// Candidate-selection distribution for replacing one code: weights
/// proportional to `1 / ||out_i - code||^2`, normalized. When any candidate
/// sits within `eps_d` of the code, that candidate (lowest index) is chosen
/// deterministically instead.
pub fn reinit_weights(code: &[f64], outputs: &Tensor, eps_d: f64) -> (Vec<f64>, Option<usize>) {
    let n = outputs.rows();
    let mut raw = vec![0.0; n];
    for i in 0..n {
        let d2: f64 = outputs
            .row(i)
            .iter()
            .zip(code)
            .map(|(o, c)| (o - c) * (o - c))
            .sum();
        if d2 < eps_d {
            return (raw, Some(i));
        }
        raw[i] = 1.0 / d2;
    }
    let total: f64 = raw.iter().sum();
    for w in raw.iter_mut() {
        *w /= total;
    }
    (raw, None)
}

fn sample_categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// One reinitialization pass over the whole codebook.
///
/// For each code independently, draw `y` in (0, 1] and reset the code iff
/// `y > usage_k * M / total_usage` (every code resets when the window saw no
/// usage at all). A reset code is replaced bit-exactly by one encoder output
/// drawn from [`reinit_weights`]. Usage counts clear afterwards.
pub fn reinit_codebook(
    codebook: &mut Codebook,
    outputs: &Tensor,
    rng: &mut Rng,
    iteration: u64,
    cfg: &ReinitConfig,
) -> Result<usize> {
    if outputs.rows() == 0 {
        return Err(Error::contract("reinit_codebook needs encoder outputs"));
    }
    if outputs.cols() != codebook.dim() {
        return Err(Error::ShapeMismatch {
            op: "reinit_codebook",
            detail: format!("outputs dim {} vs code dim {}", outputs.cols(), codebook.dim()),
        });
    }
    if !cfg.scheduled(iteration) {
        return Err(Error::contract(format!(
            "reinit called off-schedule at iteration {iteration} (every {}, until {})",
            cfg.every, cfg.until
        )));
    }

    let m = codebook.size();
    let total: u64 = codebook.usage.iter().sum();
    let mut resets = 0;
    for k in 0..m {
        let threshold = if total == 0 {
            0.0
        } else {
            codebook.usage[k] as f64 * m as f64 / total as f64
        };
        let y = rng.uniform_open();
        if y > threshold {
            let (weights, forced) = reinit_weights(codebook.code(k), outputs, cfg.eps_d);
            let pick = match forced {
                Some(i) => i,
                None => sample_categorical(&weights, rng),
            };
            let d = codebook.dim();
            let row = outputs.row(pick).to_vec();
            codebook.codes.data_mut()[k * d..(k + 1) * d].copy_from_slice(&row);
            resets += 1;
        }
    }
    codebook.usage.fill(0);
    codebook.windows += 1;
    Ok(resets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::embed;
    use crate::rng::StreamKey;

    fn rng(seed: u64) -> Rng {
        StreamKey::root(seed).child("quant-test").rng()
    }

    #[test]
    fn quantize_exact_match_and_tie_rule() {
        let codes = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut cb = Codebook::from_parts(codes, vec![0; 3], 0).unwrap();
        let (idx, code) = cb.quantize(&[1.0, 0.0]);
        assert_eq!(idx, 1); // codes 1 and 2 are equidistant (both exact); lowest wins
        assert_eq!(code, vec![1.0, 0.0]);
        assert_eq!(cb.usage(), &[0, 1, 0]);

        let (idx2, _) = cb.nearest(&[0.5, 0.0]); // equidistant between 0 and 1
        assert_eq!(idx2, 0);
    }

    #[test]
    fn quantize_matches_exhaustive_scan() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let m = 2 + r.below(12);
            let d = 1 + r.below(6);
            let codes =
                Tensor::new(vec![m, d], (0..m * d).map(|_| r.range(-1.0, 1.0)).collect()).unwrap();
            let latent: Vec<f64> = (0..d).map(|_| r.range(-1.0, 1.0)).collect();
            let (idx, _) = nearest_code(&codes, &latent);
            // brute-force oracle
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..m {
                let d2: f64 = codes
                    .row(k)
                    .iter()
                    .zip(&latent)
                    .map(|(c, x)| (c - x) * (c - x))
                    .sum();
                if d2 < best_d {
                    best_d = d2;
                    best = k;
                }
            }
            assert_eq!(idx, best);
        }
    }

    #[test]
    fn unique_consecutive_rules() {
        assert_eq!(unique_consecutive(&[2, 2, 5, 5, 2]), vec![2, 5, 2]);
        assert_eq!(unique_consecutive(&[]), Vec::<usize>::new());
        assert_eq!(unique_consecutive(&[4, 4, 4]), vec![4]);
    }

    #[test]
    fn unique_consecutive_is_idempotent_and_never_longer() {
        let mut r = rng(9);
        for _ in 0..200 {
            let n = r.below(30);
            let xs: Vec<usize> = (0..n).map(|_| r.below(4)).collect();
            let once = unique_consecutive(&xs);
            assert!(once.len() <= xs.len());
            assert_eq!(unique_consecutive(&once), once);
        }
    }

    #[test]
    fn straight_through_gradient_contract() {
        let mut tape = Tape::new();
        let latent = tape.leaf(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let code = tape.leaf(Tensor::vector(vec![1.0, -1.0, 0.5]));
        let st = straight_through(&mut tape, latent, code).unwrap();
        // forward value is the code
        assert_eq!(tape.value(st).data(), &[1.0, -1.0, 0.5]);
        let loss = tape.sum(st);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(&tape, latent).data(), &[1.0, 1.0, 1.0]);
        assert!(grads.opt(code).is_none());
    }

    #[test]
    fn encoder_zero_weights_give_zero_latent() {
        let mut enc = SkillEncoder::init(16, &mut rng(2));
        for p in enc.mlp.param_tensors_mut() {
            p.data_mut().fill(0.0);
        }
        let lang = embed("open drawer").unwrap();
        let latent = enc.encode(&[0.1; STATE_DIM], &lang).unwrap();
        assert!(latent.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn encoder_is_deterministic_and_matches_manual_forward() {
        let enc = SkillEncoder::init(16, &mut rng(3));
        let lang = embed("turn faucet left").unwrap();
        let state = [0.1, -0.2, 0.4, 0.0, 0.25, -0.3];
        let a = enc.encode(&state, &lang).unwrap();
        let b = enc.encode(&state, &lang).unwrap();
        assert_eq!(a, b);
        // manual oracle through the generic matrix path
        let mut input = state.to_vec();
        input.extend_from_slice(lang.as_slice());
        let manual = enc.mlp.forward(&Tensor::vector(input)).unwrap();
        assert_eq!(a, manual.data());
    }

    #[test]
    fn recover_pads_and_truncates() {
        let mut r = rng(4);
        let dec = RecoveryDecoder::init(4, 4, &mut r);
        let c1 = vec![1.0; 4];
        let c2 = vec![2.0; 4];
        // two codes: input [c1 || c2 || 0 || 0]
        let out2 = dec.recover(&[c1.clone(), c2.clone()]).unwrap();
        let mut manual = vec![0.0; 16];
        manual[..4].copy_from_slice(&c1);
        manual[4..8].copy_from_slice(&c2);
        let expect = dec.mlp.forward(&Tensor::vector(manual)).unwrap();
        assert_eq!(out2, expect.data());
        // six codes: first four used
        let six: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64; 4]).collect();
        let out6 = dec.recover(&six).unwrap();
        let flat: Vec<f64> = six[..4].concat();
        let expect6 = dec.mlp.forward(&Tensor::vector(flat)).unwrap();
        assert_eq!(out6, expect6.data());
        assert!(dec.recover(&[]).is_err());
    }

    #[test]
    fn zero_decoder_mse_against_unit_norm_target_is_one_over_dim() {
        let mut dec = RecoveryDecoder::init(16, 4, &mut rng(5));
        for p in dec.mlp.param_tensors_mut() {
            p.data_mut().fill(0.0);
        }
        let lang = embed("move block1 left").unwrap();
        let out = dec.recover(&[vec![0.3; 16]]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
        let mse: f64 =
            lang.as_slice().iter().map(|t| t * t).sum::<f64>() / EMBED_DIM as f64;
        assert!((mse - 1.0 / 32.0).abs() <= 1e-12);
    }

    #[test]
    fn skill_loss_zero_when_latents_equal_codes() {
        // encoder with zero weights emits the zero latent; plant a zero code
        let mut r = rng(6);
        let mut enc = SkillEncoder::init(8, &mut r);
        for p in enc.mlp.param_tensors_mut() {
            p.data_mut().fill(0.0);
        }
        let mut cb = Codebook::init(4, 8, &mut r);
        let d = cb.dim();
        cb.codes_mut().data_mut()[2 * d..3 * d].fill(0.0);
        let lang = embed("close drawer").unwrap();
        let states = Tensor::matrix(3, STATE_DIM, vec![0.1; 3 * STATE_DIM]).unwrap();
        let weights = SkillWeights {
            recon: 0.0,
            commitment: 1.0,
            codebook: 1.0,
        };
        let (loss, indices) = skill_loss(&enc, None, &mut cb, &states, &lang, &weights).unwrap();
        assert_eq!(indices, vec![2, 2, 2]);
        assert_eq!(loss, 0.0);
        assert_eq!(cb.usage(), &[0, 0, 3, 0]);
    }

    #[test]
    fn skill_loss_matches_hand_computed_toy_value() {
        // 3-step toy: zero-weight encoder (latents all zero), two codes
        let mut r = rng(7);
        let mut enc = SkillEncoder::init(2, &mut r);
        for p in enc.mlp.param_tensors_mut() {
            p.data_mut().fill(0.0);
        }
        let codes = Tensor::matrix(2, 2, vec![0.3, -0.4, 2.0, 2.0]).unwrap();
        let mut cb = Codebook::from_parts(codes, vec![0; 2], 0).unwrap();
        let mut dec = RecoveryDecoder::init(2, 4, &mut r);
        for p in dec.mlp.param_tensors_mut() {
            p.data_mut().fill(0.0);
        }
        let lang = embed("open drawer").unwrap();
        let states = Tensor::matrix(3, STATE_DIM, vec![0.0; 3 * STATE_DIM]).unwrap();
        let weights = SkillWeights::default();
        let (loss, indices) =
            skill_loss(&enc, Some(&dec), &mut cb, &states, &lang, &weights).unwrap();
        // all latents are 0 -> nearest is code 0 at squared distance
        // 0.09 + 0.16 = 0.25; commitment = codebook = 0.25 each;
        // zero decoder output vs unit-norm lang -> MSE 1/32.
        assert_eq!(indices, vec![0, 0, 0]);
        let expected = 0.01 * (1.0 / 32.0) + 1.0 * 0.25 + 1.0 * 0.25;
        assert!((loss - expected).abs() <= 1e-15, "{loss} vs {expected}");
    }

    #[test]
    fn skill_loss_is_finite_and_nonnegative() {
        let mut r = rng(8);
        let enc = SkillEncoder::init(16, &mut r);
        let dec = RecoveryDecoder::init(16, 4, &mut r);
        let mut cb = Codebook::init(20, 16, &mut r);
        for trial in 0..20 {
            let lang = embed(&format!("move block{} left", trial % 2 + 1)).unwrap();
            let n = 1 + r.below(10);
            let states = Tensor::new(
                vec![n, STATE_DIM],
                (0..n * STATE_DIM).map(|_| r.range(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let (loss, _) =
                skill_loss(&enc, Some(&dec), &mut cb, &states, &lang, &SkillWeights::default())
                    .unwrap();
            assert!(loss.is_finite() && loss >= 0.0);
        }
    }

    #[test]
    fn reinit_schedule_and_thresholds() {
        let cfg = ReinitConfig::default();
        assert!(cfg.scheduled(50));
        assert!(cfg.scheduled(450));
        assert!(!cfg.scheduled(0));
        assert!(!cfg.scheduled(49));
        assert!(!cfg.scheduled(500)); // never at or after `until`
        assert!(!cfg.scheduled(550));

        // unused code always resets, average-usage code never does
        let mut r = rng(10);
        for _ in 0..200 {
            let codes = Tensor::matrix(4, 2, (0..8).map(|i| i as f64).collect()).unwrap();
            // usage: total 40 over 4 codes -> average is 10
            let mut cb = Codebook::from_parts(codes, vec![0, 10, 14, 16], 0).unwrap();
            let before = cb.code(1).to_vec();
            let outputs = Tensor::matrix(3, 2, vec![9.0, 9.0, -3.0, 4.0, 0.5, 0.5]).unwrap();
            reinit_codebook(&mut cb, &outputs, &mut r, 50, &ReinitConfig::default()).unwrap();
            // code 0 had zero usage: must have been replaced by some output row
            let c0 = cb.code(0);
            assert!((0..3).any(|i| outputs.row(i) == c0));
            // code 1 at exactly average usage: threshold 1, never reset
            assert_eq!(cb.code(1), &before[..]);
            assert_eq!(cb.usage(), &[0; 4]);
            assert_eq!(cb.windows(), 1);
        }
    }

    #[test]
    fn reinit_weights_normalize_and_degenerate_case() {
        let code = vec![0.0, 0.0];
        let outputs = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 2.0, 3.0, 3.0]).unwrap();
        let (w, forced) = reinit_weights(&code, &outputs, 1e-12);
        assert!(forced.is_none());
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // closest candidate carries the largest weight
        assert!(w[0] > w[1] && w[1] > w[2]);

        let outputs2 = Tensor::matrix(2, 2, vec![5.0, 5.0, 0.0, 0.0]).unwrap();
        let (_, forced2) = reinit_weights(&code, &outputs2, 1e-12);
        assert_eq!(forced2, Some(1));
    }

    #[test]
    fn reinit_selection_frequencies_match_inverse_square_weights() {
        // Monte-Carlo oracle: 1e5 categorical draws vs the d_p^2 weights
        let code = vec![0.0; 3];
        let outputs = Tensor::matrix(
            4,
            3,
            vec![
                0.5, 0.0, 0.0, //
                1.0, 1.0, 0.0, //
                -2.0, 0.0, 1.0, //
                0.1, -0.2, 0.3,
            ],
        )
        .unwrap();
        let (w, _) = reinit_weights(&code, &outputs, 1e-12);
        let mut r = rng(11);
        let n = 100_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_categorical(&w, &mut r)] += 1;
        }
        for i in 0..4 {
            let freq = counts[i] as f64 / n as f64;
            let sigma = (w[i] * (1.0 - w[i]) / n as f64).sqrt();
            assert!(
                (freq - w[i]).abs() <= 3.0 * sigma,
                "candidate {i}: freq {freq} vs weight {} (3sigma {})",
                w[i],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn reinit_preserves_size_and_copies_are_bit_exact() {
        let mut r = rng(12);
        let mut cb = Codebook::init(6, 3, &mut r);
        let before = cb.codes().clone();
        let outputs = Tensor::new(vec![5, 3], (0..15).map(|_| r.range(-1.0, 1.0)).collect()).unwrap();
        cb.record_usage(&[0, 0, 0, 1, 1, 2]);
        reinit_codebook(&mut cb, &outputs, &mut r, 100, &ReinitConfig::default()).unwrap();
        assert_eq!(cb.size(), 6);
        for k in 0..6 {
            let row = cb.code(k);
            let unchanged = row == before.row(k);
            let from_outputs = (0..5).any(|i| outputs.row(i) == row);
            assert!(unchanged || from_outputs, "code {k} is neither prior nor an output");
        }
    }

    #[test]
    fn reinit_rejects_bad_calls() {
        let mut r = rng(13);
        let mut cb = Codebook::init(3, 2, &mut r);
        let outputs = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(reinit_codebook(&mut cb, &outputs, &mut r, 49, &ReinitConfig::default()).is_err());
        let empty_dim = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(reinit_codebook(&mut cb, &empty_dim, &mut r, 50, &ReinitConfig::default()).is_err());
    }

    #[test]
    fn full_pipeline_grad_check_with_frozen_quantization() {
        use crate::nn::grad_check;
        let mut r = rng(14);
        let enc = SkillEncoder::init(4, &mut r);
        let dec = RecoveryDecoder::init(4, 4, &mut r);
        let cb = Codebook::init(5, 4, &mut r);
        let lang = embed("turn faucet right").unwrap();
        let states = Tensor::matrix(
            3,
            STATE_DIM,
            (0..3 * STATE_DIM).map(|_| r.range(-0.8, 0.8)).collect(),
        )
        .unwrap();

        // freeze indices and stop-gradient values at the unperturbed params
        let frozen = capture_frozen(&enc, &cb, &states, &lang).unwrap();

        let mut params: Vec<Tensor> = enc.mlp.param_tensors().into_iter().cloned().collect();
        params.extend(dec.mlp.param_tensors().into_iter().cloned());
        params.push(cb.codes().clone());
        let n_enc = enc.mlp.layers.len() * 2;
        let n_dec = dec.mlp.layers.len() * 2;

        let f = |tape: &mut Tape, vars: &[Var]| -> crate::error::Result<Var> {
            let ev = enc.mlp.vars_from_leaves(&vars[..n_enc]);
            let dv = dec.mlp.vars_from_leaves(&vars[n_enc..n_enc + n_dec]);
            let cv = vars[n_enc + n_dec];
            let parts = skill_loss_tape(
                tape,
                &enc.mlp,
                &ev,
                Some((&dec, &dv)),
                cb.codes(),
                cv,
                &states,
                &lang,
                &SkillWeights::default(),
                Some(&frozen),
            )?;
            Ok(parts.loss)
        };
        let report = grad_check(&f, &params, 1e-5).unwrap();
        assert!(
            report.max_rel_err <= 1e-5,
            "max rel err {} at param {} entry {}",
            report.max_rel_err,
            report.worst_param,
            report.worst_entry
        );
    }
}
