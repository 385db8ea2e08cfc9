//! Conditional denoising-diffusion imitation policy.
//!
//! The denoiser is a stack of fusion blocks: each block projects the noisy
//! action, the state, a sinusoidal timestep embedding and the condition
//! vector (skill code or language embedding) into a shared hidden width,
//! adds them together with the previous block's output, and applies tanh.
//! Sampling supports stochastic DDPM ancestral steps and deterministic
//! (eta = 0) DDIM over an evenly spaced timestep subsequence.

use crate::env::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

pub const TIME_EMBED_DIM: usize = 16;
pub const HIDDEN_DIM: usize = 128;
pub const NUM_BLOCKS: usize = 3;

/// Forward-process tables for timesteps `1..=len`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule inclusive of both endpoints; alpha-bar by
    /// running product.
    pub fn linear(t_diff: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_diff < 1 {
            return Err(Error::contract("schedule needs at least one timestep"));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::contract(format!(
                "invalid beta range [{beta_min}, {beta_max}]"
            )));
        }
        let betas: Vec<f64> = if t_diff == 1 {
            vec![beta_min]
        } else {
            (0..t_diff)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t_diff - 1) as f64)
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_diff);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_step(&self, i: usize) -> Result<()> {
        if i < 1 || i > self.len() {
            return Err(Error::contract(format!(
                "timestep {i} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    /// `beta_i`, 1-based.
    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bars[i - 1]
    }
}

/// Forward diffusion: `a_i = sqrt(abar_i) a + sqrt(1 - abar_i) eps`.
pub fn forward_diffuse(
    action: &[f64; ACTION_DIM],
    i: usize,
    eps: &[f64; ACTION_DIM],
    sched: &NoiseSchedule,
) -> Result<[f64; ACTION_DIM]> {
    sched.check_step(i)?;
    let ab = sched.alpha_bar(i);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        out[d] = sa * action[d] + sn * eps[d];
    }
    Ok(out)
}

/// Sinusoidal embedding of a 1-based timestep: 8 sin/cos pairs at
/// geometrically spaced frequencies `t_diff^(-j/7)` for j = 0..8, so the
/// periods run from ~tau up to ~tau * t_diff.
pub fn timestep_embedding(i: usize, t_diff: usize) -> [f64; TIME_EMBED_DIM] {
    let mut emb = [0.0; TIME_EMBED_DIM];
    let pairs = TIME_EMBED_DIM / 2;
    for j in 0..pairs {
        let freq = (t_diff as f64).powf(-(j as f64) / (pairs as f64 - 1.0));
        let phase = i as f64 * freq;
        emb[2 * j] = phase.sin();
        emb[2 * j + 1] = phase.cos();
    }
    emb
}

/// One fusion block: four input projections into the hidden width.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    pub action: Linear,
    pub state: Linear,
    pub time: Linear,
    pub cond: Linear,
}

impl FusionBlock {
    fn init(cond_dim: usize, rng: &mut Rng) -> Self {
        FusionBlock {
            action: Linear::init(ACTION_DIM, HIDDEN_DIM, rng),
            state: Linear::init(STATE_DIM, HIDDEN_DIM, rng),
            time: Linear::init(TIME_EMBED_DIM, HIDDEN_DIM, rng),
            cond: Linear::init(cond_dim, HIDDEN_DIM, rng),
        }
    }
}

/// Noise-prediction network. `cond_dim` is the skill-code dimension in
/// skill mode or the language-embedding dimension in language mode.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseNet {
    pub blocks: Vec<FusionBlock>,
    pub out: Linear,
    pub cond_dim: usize,
}

/// Tape handles for the denoiser parameters, `param_tensors` order.
pub struct DenoiseVars {
    pub leaves: Vec<Var>,
}

impl DenoiseNet {
    pub fn init(cond_dim: usize, rng: &mut Rng) -> Self {
        let blocks = (0..NUM_BLOCKS).map(|_| FusionBlock::init(cond_dim, rng)).collect();
        let out = Linear::init(HIDDEN_DIM, ACTION_DIM, rng);
        DenoiseNet {
            blocks,
            out,
            cond_dim,
        }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut ps = Vec::new();
        for b in &self.blocks {
            for l in [&b.action, &b.state, &b.time, &b.cond] {
                ps.push(&l.weight);
                ps.push(&l.bias);
            }
        }
        ps.push(&self.out.weight);
        ps.push(&self.out.bias);
        ps
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut ps = Vec::new();
        for b in &mut self.blocks {
            for l in [&mut b.action, &mut b.state, &mut b.time, &mut b.cond] {
                ps.push(&mut l.weight);
                ps.push(&mut l.bias);
            }
        }
        ps.push(&mut self.out.weight);
        ps.push(&mut self.out.bias);
        ps
    }

    pub fn vars(&self, tape: &mut Tape) -> DenoiseVars {
        DenoiseVars {
            leaves: self
                .param_tensors()
                .into_iter()
                .map(|t| tape.leaf(t.clone()))
                .collect(),
        }
    }

    pub fn vars_from_leaves(&self, leaves: &[Var]) -> DenoiseVars {
        assert_eq!(leaves.len(), NUM_BLOCKS * 8 + 2);
        DenoiseVars {
            leaves: leaves.to_vec(),
        }
    }

    /// Recorded batch forward. All inputs are `[n, *]` matrices; `cond` may
    /// carry gradients (straight-through skill codes).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &DenoiseVars,
        noisy: Var,
        states: Var,
        temb: Var,
        cond: Var,
    ) -> Result<Var> {
        if tape.value(cond).cols() != self.cond_dim {
            return Err(Error::ShapeMismatch {
                op: "denoise_predict",
                detail: format!(
                    "condition dim {} vs configured {}",
                    tape.value(cond).cols(),
                    self.cond_dim
                ),
            });
        }
        let mut h: Option<Var> = None;
        for (bi, _) in self.blocks.iter().enumerate() {
            let base = bi * 8;
            let proj = |tape: &mut Tape, input: Var, w: Var, b: Var| -> Result<Var> {
                let mm = tape.matmul(input, w)?;
                tape.add_bias(mm, b)
            };
            let pa = proj(tape, noisy, vars.leaves[base], vars.leaves[base + 1])?;
            let ps = proj(tape, states, vars.leaves[base + 2], vars.leaves[base + 3])?;
            let pt = proj(tape, temb, vars.leaves[base + 4], vars.leaves[base + 5])?;
            let pc = proj(tape, cond, vars.leaves[base + 6], vars.leaves[base + 7])?;
            let mut sum = tape.add(pa, ps)?;
            sum = tape.add(sum, pt)?;
            sum = tape.add(sum, pc)?;
            if let Some(prev) = h {
                sum = tape.add(sum, prev)?;
            }
            h = Some(tape.tanh(sum));
        }
        let base = NUM_BLOCKS * 8;
        let mm = tape.matmul(h.expect("at least one block"), vars.leaves[base])?;
        tape.add_bias(mm, vars.leaves[base + 1])
    }

    /// Pure single-sample forward; mirrors the recorded pass operation for
    /// operation (matmul, then bias, then the same addition order) so both
    /// produce bit-identical values.
    pub fn predict(
        &self,
        noisy: &[f64; ACTION_DIM],
        state: &[f64; STATE_DIM],
        cond: &[f64],
        i: usize,
        t_diff: usize,
    ) -> Result<[f64; ACTION_DIM]> {
        if cond.len() != self.cond_dim {
            return Err(Error::ShapeMismatch {
                op: "denoise_predict",
                detail: format!("condition dim {} vs configured {}", cond.len(), self.cond_dim),
            });
        }
        let temb = timestep_embedding(i, t_diff);
        let mut h: Vec<f64> = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let pa = dense(noisy, &b.action);
            let ps = dense(state, &b.state);
            let pt = dense(&temb, &b.time);
            let pc = dense(cond, &b.cond);
            let mut sum: Vec<f64> = (0..HIDDEN_DIM)
                .map(|j| ((pa[j] + ps[j]) + pt[j]) + pc[j])
                .collect();
            if bi > 0 {
                for j in 0..HIDDEN_DIM {
                    sum[j] += h[j];
                }
            }
            h = sum.into_iter().map(f64::tanh).collect();
        }
        let y = dense(&h, &self.out);
        Ok([y[0], y[1], y[2]])
    }
}

/// `x W + b` with the same accumulation order as the tape's matmul-then-bias
/// pair.
fn dense(input: &[f64], layer: &Linear) -> Vec<f64> {
    let fan_out = layer.fan_out();
    let w = layer.weight.data();
    let mut y = vec![0.0; fan_out];
    for (i, &x) in input.iter().enumerate() {
        let row = &w[i * fan_out..(i + 1) * fan_out];
        for j in 0..fan_out {
            y[j] += x * row[j];
        }
    }
    let b = layer.bias.data();
    for j in 0..fan_out {
        y[j] += b[j];
    }
    y
}

/// Anything that predicts the injected noise; lets tests substitute exact
/// oracles for the trained network.
pub trait EpsModel {
    fn predict_eps(
        &self,
        noisy: &[f64; ACTION_DIM],
        state: &[f64; STATE_DIM],
        cond: &[f64],
        i: usize,
        t_diff: usize,
    ) -> [f64; ACTION_DIM];
}

impl EpsModel for DenoiseNet {
    fn predict_eps(
        &self,
        noisy: &[f64; ACTION_DIM],
        state: &[f64; STATE_DIM],
        cond: &[f64],
        i: usize,
        t_diff: usize,
    ) -> [f64; ACTION_DIM] {
        self.predict(noisy, state, cond, i, t_diff)
            .expect("condition dim checked at policy construction")
    }
}

/// Pre-drawn per-sample timesteps and noise for one loss evaluation, so the
/// same draws can be replayed under gradient checks.
#[derive(Clone, Debug)]
pub struct DiffusionDraws {
    pub timesteps: Vec<usize>,
    pub noise: Vec<[f64; ACTION_DIM]>,
}

impl DiffusionDraws {
    /// `i ~ U[1, T]`, `eps ~ N(0, I)` per sample.
    pub fn sample(n: usize, t_diff: usize, rng: &mut Rng) -> Self {
        let timesteps = (0..n).map(|_| rng.below(t_diff) + 1).collect();
        let noise = (0..n).map(|_| rng.normal3()).collect();
        DiffusionDraws { timesteps, noise }
    }
}

/// Recorded noise-prediction loss over a sample batch: mean over samples and
/// dimensions of `(eps - eps_hat)^2`. Returns the sum-of-squares var so the
/// caller can combine trajectories before normalizing, plus the element
/// count.
pub fn ddpm_sumsq_tape(
    tape: &mut Tape,
    net: &DenoiseNet,
    vars: &DenoiseVars,
    states: &Tensor,
    actions: &[[f64; ACTION_DIM]],
    cond: Var,
    draws: &DiffusionDraws,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let n = actions.len();
    if n == 0 {
        return Err(Error::contract("ddpm loss over an empty batch"));
    }
    if draws.timesteps.len() != n || states.rows() != n || tape.value(cond).rows() != n {
        return Err(Error::contract(format!(
            "ddpm batch disagreement: {n} actions, {} states, {} cond rows, {} draws",
            states.rows(),
            tape.value(cond).rows(),
            draws.timesteps.len()
        )));
    }
    let mut noisy = Vec::with_capacity(n * ACTION_DIM);
    let mut temb = Vec::with_capacity(n * TIME_EMBED_DIM);
    let mut eps_flat = Vec::with_capacity(n * ACTION_DIM);
    for s in 0..n {
        let i = draws.timesteps[s];
        let a_i = forward_diffuse(&actions[s], i, &draws.noise[s], sched)?;
        noisy.extend_from_slice(&a_i);
        temb.extend_from_slice(&timestep_embedding(i, sched.len()));
        eps_flat.extend_from_slice(&draws.noise[s]);
    }
    let noisy_v = tape.leaf(Tensor::new(vec![n, ACTION_DIM], noisy)?);
    let temb_v = tape.leaf(Tensor::new(vec![n, TIME_EMBED_DIM], temb)?);
    let states_v = tape.leaf(states.clone());
    let pred = net.forward_tape(tape, vars, noisy_v, states_v, temb_v, cond)?;
    let eps_v = tape.leaf(Tensor::new(vec![n, ACTION_DIM], eps_flat)?);
    let diff = tape.sub(eps_v, pred)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum(sq))
}

/// The standalone loss: mean over the batch and dimensions.
pub fn ddpm_loss_tape(
    tape: &mut Tape,
    net: &DenoiseNet,
    vars: &DenoiseVars,
    states: &Tensor,
    actions: &[[f64; ACTION_DIM]],
    cond: Var,
    draws: &DiffusionDraws,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let ssq = ddpm_sumsq_tape(tape, net, vars, states, actions, cond, draws, sched)?;
    Ok(tape.scale(ssq, 1.0 / (actions.len() * ACTION_DIM) as f64))
}

/// Pure loss evaluation against any [`EpsModel`]. Used by oracle tests; the
/// training path uses the recorded version.
pub fn ddpm_loss_value<M: EpsModel>(
    model: &M,
    states: &[[f64; STATE_DIM]],
    actions: &[[f64; ACTION_DIM]],
    conds: &[Vec<f64>],
    draws: &DiffusionDraws,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let n = actions.len();
    if n == 0 {
        return Err(Error::contract("ddpm loss over an empty batch"));
    }
    let mut total = 0.0;
    for s in 0..n {
        let i = draws.timesteps[s];
        let a_i = forward_diffuse(&actions[s], i, &draws.noise[s], sched)?;
        let pred = model.predict_eps(&a_i, &states[s], &conds[s], i, sched.len());
        for d in 0..ACTION_DIM {
            let e = draws.noise[s][d] - pred[d];
            total += e * e;
        }
    }
    Ok(total / (n * ACTION_DIM) as f64)
}

fn clip_action(mut a: [f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    for v in a.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    a
}

/// Stochastic ancestral sampler: start from `a_T ~ N(0, I)`, denoise down to
/// timestep 1 with posterior sigma_i = sqrt(beta_i), clip to the action box.
pub fn sample_ddpm<M: EpsModel>(
    model: &M,
    state: &[f64; STATE_DIM],
    cond: &[f64],
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> [f64; ACTION_DIM] {
    let t_diff = sched.len();
    let mut x = rng.normal3();
    for i in (1..=t_diff).rev() {
        let eps_hat = model.predict_eps(&x, state, cond, i, t_diff);
        let (alpha, beta, abar) = (sched.alpha(i), sched.beta(i), sched.alpha_bar(i));
        let coef = beta / (1.0 - abar).sqrt();
        let mut mu = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            mu[d] = (x[d] - coef * eps_hat[d]) / alpha.sqrt();
        }
        if i > 1 {
            let z = rng.normal3();
            let sigma = beta.sqrt();
            for d in 0..ACTION_DIM {
                x[d] = mu[d] + sigma * z[d];
            }
        } else {
            x = mu;
        }
    }
    clip_action(x)
}

/// Evenly spaced decreasing timestep subsequence from `t_diff` down to 1.
pub fn ddim_timesteps(t_diff: usize, steps: usize) -> Vec<usize> {
    if steps == 1 {
        return vec![t_diff];
    }
    (0..steps)
        .map(|j| {
            let f = t_diff as f64 - j as f64 * (t_diff as f64 - 1.0) / (steps as f64 - 1.0);
            f.round() as usize
        })
        .collect()
}

/// Deterministic DDIM (eta = 0) over `steps` timesteps. The only randomness
/// is the initial `x_T` draw; identical `x_T` gives identical output.
pub fn sample_ddim<M: EpsModel>(
    model: &M,
    state: &[f64; STATE_DIM],
    cond: &[f64],
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut Rng,
) -> Result<[f64; ACTION_DIM]> {
    let x0 = rng.normal3();
    sample_ddim_from(model, state, cond, sched, steps, x0)
}

/// DDIM from a caller-supplied starting point.
pub fn sample_ddim_from<M: EpsModel>(
    model: &M,
    state: &[f64; STATE_DIM],
    cond: &[f64],
    sched: &NoiseSchedule,
    steps: usize,
    x_start: [f64; ACTION_DIM],
) -> Result<[f64; ACTION_DIM]> {
    let t_diff = sched.len();
    if steps < 1 || steps > t_diff {
        return Err(Error::contract(format!(
            "ddim steps {steps} outside 1..={t_diff}"
        )));
    }
    let ts = ddim_timesteps(t_diff, steps);
    let mut x = x_start;
    for (j, &t) in ts.iter().enumerate() {
        let eps_hat = model.predict_eps(&x, state, cond, t, t_diff);
        let abar = sched.alpha_bar(t);
        let (sa, sn) = (abar.sqrt(), (1.0 - abar).sqrt());
        let mut x0 = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            x0[d] = (x[d] - sn * eps_hat[d]) / sa;
        }
        if let Some(&t_next) = ts.get(j + 1) {
            let abar_n = sched.alpha_bar(t_next);
            let (san, snn) = (abar_n.sqrt(), (1.0 - abar_n).sqrt());
            for d in 0..ACTION_DIM {
                x[d] = san * x0[d] + snn * eps_hat[d];
            }
        } else {
            x = x0;
        }
    }
    Ok(clip_action(x))
}
