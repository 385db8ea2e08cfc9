//! Joint training loop: a skill-learning period (encode, quantize, recover,
//! reinitialize) and a behavior-cloning period (noise-prediction loss with
//! straight-through skill conditioning), combined as
//! `total = skill_weight * L_skill + behavior_weight * L_bc` and applied with
//! one Adam step per parameter group (skill group at `skill_lr`, policy at
//! `policy_lr`).
//!
//! Modes:
//! - `lcsd`: full method;
//! - `no_reinit`: codebook reinitialization disabled;
//! - `encoder_only`: no recovery decoder (recon term dropped);
//! - `lang`: language-conditioned baseline, no skill components at all.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::diffusion::{ddpm_sumsq_tape, DenoiseNet, DenoiseVars, DiffusionDraws, NoiseSchedule};
use crate::embed::{embed, LangEmbedding, EMBED_DIM};
use crate::env::{template_count, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::metrics::JointCounts;
use crate::nn::{AdamState, MlpVars};
use crate::quantizer::{
    self, Codebook, FrozenSkill, RecoveryDecoder, ReinitConfig, SkillEncoder, SkillWeights,
};
use crate::rng::{Rng, StreamKey};
use crate::tensor::{Tape, Tensor, Var};

/// Training variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lcsd,
    Lang,
    EncoderOnly,
    NoReinit,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Lcsd, Mode::Lang, Mode::EncoderOnly, Mode::NoReinit];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Lcsd => "lcsd",
            Mode::Lang => "lang",
            Mode::EncoderOnly => "encoder_only",
            Mode::NoReinit => "no_reinit",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Mode::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown mode '{s}' (valid: lcsd, lang, encoder_only, no_reinit)"
                ))
            })
    }

    pub fn has_skill(self) -> bool {
        self != Mode::Lang
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, Mode::Lcsd | Mode::NoReinit)
    }

    pub fn reinit_enabled(self) -> bool {
        matches!(self, Mode::Lcsd | Mode::EncoderOnly)
    }
}

/// Full training configuration. Field names double as the flat config-file
/// keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_trajectories: usize,
    pub iterations: u64,
    /// Weight of the behavior-cloning loss in the combined objective.
    pub behavior_weight: f64,
    /// Weight of the skill loss in the combined objective.
    pub skill_weight: f64,
    /// Instruction-recovery weight inside the skill loss.
    pub recon_weight: f64,
    /// Commitment weight inside the skill loss.
    pub commitment_weight: f64,
    /// Codebook-update weight inside the skill loss.
    pub codebook_weight: f64,
    pub policy_lr: f64,
    pub skill_lr: f64,
    /// Number of codebook entries (M).
    pub codebook_size: usize,
    /// Skill-code dimension (d).
    pub code_dim: usize,
    /// Code slots consumed by the recovery decoder (K).
    pub reconstruct_options: usize,
    pub diffusion_timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub reinit_every: u64,
    pub reinit_until: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Lcsd,
            batch_trajectories: 32,
            iterations: 2000,
            behavior_weight: 5.0,
            skill_weight: 2.0,
            recon_weight: 0.01,
            commitment_weight: 1.0,
            codebook_weight: 1.0,
            policy_lr: 2e-4,
            skill_lr: 1e-4,
            codebook_size: 20,
            code_dim: 16,
            reconstruct_options: 4,
            diffusion_timesteps: 50,
            beta_min: 1e-4,
            beta_max: 0.02,
            reinit_every: 50,
            reinit_until: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("behavior_weight", self.behavior_weight),
            ("skill_weight", self.skill_weight),
            ("commitment_weight", self.commitment_weight),
            ("codebook_weight", self.codebook_weight),
            ("policy_lr", self.policy_lr),
            ("skill_lr", self.skill_lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.recon_weight < 0.0 {
            return Err(Error::InvalidConfig("recon_weight must be >= 0".into()));
        }
        if self.batch_trajectories == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "batch_trajectories and iterations must be positive".into(),
            ));
        }
        if self.codebook_size == 0 || self.code_dim == 0 || self.reconstruct_options == 0 {
            return Err(Error::InvalidConfig(
                "codebook_size, code_dim and reconstruct_options must be positive".into(),
            ));
        }
        if self.reinit_every == 0 {
            return Err(Error::InvalidConfig("reinit_every must be >= 1".into()));
        }
        NoiseSchedule::linear(self.diffusion_timesteps, self.beta_min, self.beta_max)?;
        Ok(())
    }

    pub fn skill_weights(&self) -> SkillWeights {
        SkillWeights {
            recon: self.recon_weight,
            commitment: self.commitment_weight,
            codebook: self.codebook_weight,
        }
    }

    pub fn reinit_config(&self) -> ReinitConfig {
        ReinitConfig {
            every: self.reinit_every,
            until: self.reinit_until,
            ..ReinitConfig::default()
        }
    }

    /// Condition width fed to the denoiser.
    pub fn cond_dim(&self) -> usize {
        if self.mode.has_skill() {
            self.code_dim
        } else {
            EMBED_DIM
        }
    }
}

/// Skill-side components; absent entirely in `lang` mode.
#[derive(Clone, Debug)]
pub struct SkillComponents {
    pub encoder: SkillEncoder,
    pub decoder: Option<RecoveryDecoder>,
    pub codebook: Codebook,
}

/// All learnable state plus the training streams and metric log.
pub struct RunState {
    pub config: TrainConfig,
    pub skill: Option<SkillComponents>,
    pub policy: DenoiseNet,
    pub sched: NoiseSchedule,
    pub skill_opt: Option<AdamState>,
    pub policy_opt: AdamState,
    /// Completed training iterations.
    pub iteration: u64,
    pub rng_batch: Rng,
    pub rng_noise: Rng,
    pub rng_reinit: Rng,
    pub metrics: Vec<MetricRow>,
    embed_cache: HashMap<String, LangEmbedding>,
}

/// One metric-log row; `mi`/`codes_used` are present on diagnostic
/// iterations only.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: u64,
    pub loss_total: f64,
    pub loss_skill: f64,
    pub loss_bc: f64,
    pub loss_recon: f64,
    pub mi: Option<f64>,
    pub codes_used: Option<usize>,
}

/// Loss breakdown of one iteration.
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub total: f64,
    pub skill: f64,
    pub bc: f64,
    pub recon: f64,
    pub reinit_resets: Option<usize>,
}

/// Cadence of the evaluation-free diagnostics in the metric log.
pub const DIAGNOSTIC_EVERY: u64 = 100;
/// Held-in probe size for the MI diagnostic.
pub const PROBE_TRAJECTORIES: usize = 128;

impl RunState {
    /// Fresh run: parameters from the `init` stream (sub-streams `encoder`,
    /// `decoder`, `codebook`, `policy`), training randomness from `train`.
    pub fn init(config: TrainConfig) -> Result<RunState> {
        config.validate()?;
        let root = StreamKey::root(config.seed);
        let init = root.child("init");
        let skill = if config.mode.has_skill() {
            let encoder = SkillEncoder::init(config.code_dim, &mut init.child("encoder").rng());
            let decoder = config.mode.has_decoder().then(|| {
                RecoveryDecoder::init(
                    config.code_dim,
                    config.reconstruct_options,
                    &mut init.child("decoder").rng(),
                )
            });
            let codebook = Codebook::init(
                config.codebook_size,
                config.code_dim,
                &mut init.child("codebook").rng(),
            );
            Some(SkillComponents {
                encoder,
                decoder,
                codebook,
            })
        } else {
            None
        };
        let policy = DenoiseNet::init(config.cond_dim(), &mut init.child("policy").rng());
        let sched =
            NoiseSchedule::linear(config.diffusion_timesteps, config.beta_min, config.beta_max)?;
        let skill_opt = skill
            .as_ref()
            .map(|s| AdamState::new(&skill_param_tensors(s), config.skill_lr));
        let policy_opt = AdamState::new(&policy.param_tensors(), config.policy_lr);
        let train = root.child("train");
        Ok(RunState {
            config,
            skill,
            policy,
            sched,
            skill_opt,
            policy_opt,
            iteration: 0,
            rng_batch: train.child("batch").rng(),
            rng_noise: train.child("noise").rng(),
            rng_reinit: train.child("reinit").rng(),
            metrics: Vec::new(),
            embed_cache: HashMap::new(),
        })
    }

    pub fn lang_embedding(&mut self, text: &str) -> Result<LangEmbedding> {
        if let Some(e) = self.embed_cache.get(text) {
            return Ok(e.clone());
        }
        let e = embed(text)?;
        self.embed_cache.insert(text.to_string(), e.clone());
        Ok(e)
    }

    /// One joint training step over a trajectory batch.
    pub fn train_iteration(&mut self, batch: &[&Trajectory]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::contract("train_iteration on an empty batch"));
        }
        let iteration = self.iteration + 1;
        let langs: Vec<LangEmbedding> = batch
            .iter()
            .map(|t| self.lang_embedding(&t.instruction.text))
            .collect::<Result<_>>()?;
        let total_steps: usize = batch.iter().map(|t| t.len()).sum();
        let draws = DiffusionDraws::sample(total_steps, self.sched.len(), &mut self.rng_noise);

        let mut tape = Tape::new();
        let vars = CombinedVars::leaf(&mut tape, self.skill.as_ref(), &self.policy);
        let built = build_combined_loss(
            &mut tape,
            &self.config,
            self.skill.as_ref(),
            &self.policy,
            &vars,
            batch,
            &langs,
            &draws,
            &self.sched,
            None,
        )?;

        let report_total = tape.value(built.total).item();
        if !report_total.is_finite() {
            return Err(Error::NonFinite(format!(
                "combined loss at iteration {iteration}"
            )));
        }
        let grads = tape.backward(built.total)?;

        // record usage, then reinitialize on schedule, then step Adam
        let mut reset_count = None;
        if let Some(skill) = self.skill.as_mut() {
            for idx in &built.indices {
                skill.codebook.record_usage(idx);
            }
            let reinit_cfg = self.config.reinit_config();
            if self.config.mode.reinit_enabled() && reinit_cfg.scheduled(iteration) {
                let outputs = built.latents.as_ref().expect("skill mode captured latents");
                let resets = quantizer::reinit_codebook(
                    &mut skill.codebook,
                    outputs,
                    &mut self.rng_reinit,
                    iteration,
                    &reinit_cfg,
                )?;
                reset_count = Some(resets);
            }
        }

        let policy_grads: Vec<Tensor> = vars
            .policy
            .leaves
            .iter()
            .map(|&v| grads.get(&tape, v))
            .collect();
        self.policy_opt
            .apply(&mut self.policy.param_tensors_mut(), &policy_grads)?;

        if let (Some(skill), Some(opt)) = (self.skill.as_mut(), self.skill_opt.as_mut()) {
            let skill_grads: Vec<Tensor> = vars
                .skill_leaves()
                .iter()
                .map(|&v| grads.get(&tape, v))
                .collect();
            opt.apply(&mut skill_param_tensors_mut(skill), &skill_grads)?;
        }

        self.iteration = iteration;
        Ok(LossReport {
            total: report_total,
            skill: built.skill_value,
            bc: built.bc_value,
            recon: built.recon_value,
            reinit_resets: reset_count,
        })
    }

    /// Evaluation-free diagnostics on a held-in probe: plug-in MI between
    /// code index and template id, and the number of distinct codes used.
    pub fn probe_diagnostics(
        &mut self,
        dataset: &[Trajectory],
    ) -> Result<(Option<f64>, Option<usize>)> {
        if self.skill.is_none() {
            return Ok((None, None));
        }
        let probe = &dataset[..dataset.len().min(PROBE_TRAJECTORIES)];
        let langs: Vec<LangEmbedding> = probe
            .iter()
            .map(|t| self.lang_embedding(&t.instruction.text))
            .collect::<Result<_>>()?;
        let skill = self.skill.as_ref().unwrap();
        let mut counts = JointCounts::new(skill.codebook.size(), template_count());
        let mut used = vec![false; skill.codebook.size()];
        for (traj, lang) in probe.iter().zip(&langs) {
            let states = states_matrix(traj)?;
            let idx =
                quantizer::trajectory_indices(&skill.encoder, &skill.codebook, &states, lang)?;
            for i in idx {
                counts.inc(i, traj.instruction.template_id);
                used[i] = true;
            }
        }
        let mi = crate::metrics::mi_estimate(&counts)?;
        Ok((Some(mi), Some(used.iter().filter(|&&u| u).count())))
    }
}

/// Full training: samples trajectory batches, logs per-iteration losses,
/// computes diagnostics every [`DIAGNOSTIC_EVERY`] iterations.
pub fn train(config: TrainConfig, dataset: &[Trajectory]) -> Result<RunState> {
    if dataset.is_empty() {
        return Err(Error::contract("training needs a nonempty dataset"));
    }
    let mut run = RunState::init(config)?;
    let iterations = run.config.iterations;
    let batch_size = run.config.batch_trajectories.min(dataset.len());
    for _ in 0..iterations {
        let batch: Vec<&Trajectory> = (0..batch_size)
            .map(|_| &dataset[run.rng_batch.below(dataset.len())])
            .collect();
        let report = run.train_iteration(&batch)?;
        let iteration = run.iteration;
        let (mi, codes_used) = if iteration % DIAGNOSTIC_EVERY == 0 {
            run.probe_diagnostics(dataset)?
        } else {
            (None, None)
        };
        run.metrics.push(MetricRow {
            iteration,
            loss_total: report.total,
            loss_skill: report.skill,
            loss_bc: report.bc,
            loss_recon: report.recon,
            mi,
            codes_used,
        });
    }
    Ok(run)
}

pub fn states_matrix(traj: &Trajectory) -> Result<Tensor> {
    let mut data = Vec::with_capacity(traj.states.len() * STATE_DIM);
    for s in &traj.states {
        data.extend_from_slice(&s.to_vec());
    }
    Tensor::new(vec![traj.states.len(), STATE_DIM], data)
}

pub fn skill_param_tensors(s: &SkillComponents) -> Vec<&Tensor> {
    let mut ps = s.encoder.mlp.param_tensors();
    if let Some(dec) = &s.decoder {
        ps.extend(dec.mlp.param_tensors());
    }
    ps.push(s.codebook.codes());
    ps
}

pub fn skill_param_tensors_mut(s: &mut SkillComponents) -> Vec<&mut Tensor> {
    let mut ps = s.encoder.mlp.param_tensors_mut();
    if let Some(dec) = &mut s.decoder {
        ps.extend(dec.mlp.param_tensors_mut());
    }
    ps.push(s.codebook.codes_mut());
    ps
}

/// Tape handles for every learnable tensor of one run.
pub struct CombinedVars {
    pub enc: Option<MlpVars>,
    pub dec: Option<MlpVars>,
    pub cb: Option<Var>,
    pub policy: DenoiseVars,
}

impl CombinedVars {
    /// Put fresh leaves for all parameters on the tape.
    pub fn leaf(tape: &mut Tape, skill: Option<&SkillComponents>, policy: &DenoiseNet) -> Self {
        let (enc, dec, cb) = match skill {
            Some(s) => (
                Some(s.encoder.mlp.vars(tape)),
                s.decoder.as_ref().map(|d| d.mlp.vars(tape)),
                Some(tape.leaf(s.codebook.codes().clone())),
            ),
            None => (None, None, None),
        };
        CombinedVars {
            enc,
            dec,
            cb,
            policy: policy.vars(tape),
        }
    }

    /// Wire existing leaves (in `skill_param_tensors` ++ policy
    /// `param_tensors` order) into the var structure.
    pub fn from_leaves(
        skill: Option<&SkillComponents>,
        policy: &DenoiseNet,
        leaves: &[Var],
    ) -> Self {
        let mut cursor = 0;
        let (enc, dec, cb) = match skill {
            Some(s) => {
                let n_enc = s.encoder.mlp.layers.len() * 2;
                let enc = s.encoder.mlp.vars_from_leaves(&leaves[cursor..cursor + n_enc]);
                cursor += n_enc;
                let dec = s.decoder.as_ref().map(|d| {
                    let n_dec = d.mlp.layers.len() * 2;
                    let dv = d.mlp.vars_from_leaves(&leaves[cursor..cursor + n_dec]);
                    cursor += n_dec;
                    dv
                });
                let cb = leaves[cursor];
                cursor += 1;
                (Some(enc), dec, Some(cb))
            }
            None => (None, None, None),
        };
        let policy_vars = policy.vars_from_leaves(&leaves[cursor..]);
        CombinedVars {
            enc,
            dec,
            cb,
            policy: policy_vars,
        }
    }

    /// Skill-group leaves in `skill_param_tensors` order.
    pub fn skill_leaves(&self) -> Vec<Var> {
        let mut vs = Vec::new();
        if let Some(e) = &self.enc {
            vs.extend(e.layers.iter().flat_map(|&(w, b)| [w, b]));
        }
        if let Some(d) = &self.dec {
            vs.extend(d.layers.iter().flat_map(|&(w, b)| [w, b]));
        }
        if let Some(cb) = self.cb {
            vs.push(cb);
        }
        vs
    }
}

/// Everything the caller needs back from one recorded combined-loss build.
pub struct BuiltLoss {
    pub total: Var,
    pub skill_value: f64,
    pub bc_value: f64,
    pub recon_value: f64,
    /// Per-trajectory per-step code indices (skill modes).
    pub indices: Vec<Vec<usize>>,
    /// Encoder outputs over the whole batch, `[sum(T_i+1), d]` (skill modes).
    pub latents: Option<Tensor>,
}

/// Record the combined loss for one batch on `tape`.
///
/// Skill period (skill modes): per trajectory, encode all states, quantize,
/// take recovery/commitment/codebook terms; `L_skill` is the mean over the
/// batch. BC period: per (s_t, a_t), condition on the straight-through
/// quantized skill at s_t (or the language embedding in `lang` mode) and
/// take the noise-prediction loss, with the mean running over all steps of
/// all trajectories.
///
/// `frozen` (one capture per trajectory) freezes quantization indices and
/// stop-gradient values for gradient checking.
#[allow(clippy::too_many_arguments)]
pub fn build_combined_loss(
    tape: &mut Tape,
    config: &TrainConfig,
    skill: Option<&SkillComponents>,
    policy: &DenoiseNet,
    vars: &CombinedVars,
    batch: &[&Trajectory],
    langs: &[LangEmbedding],
    draws: &DiffusionDraws,
    sched: &NoiseSchedule,
    frozen: Option<&[FrozenSkill]>,
) -> Result<BuiltLoss> {
    let weights = config.skill_weights();
    let mut indices: Vec<Vec<usize>> = Vec::with_capacity(batch.len());
    let mut skill_losses: Vec<Var> = Vec::with_capacity(batch.len());
    let mut recon_values: Vec<f64> = Vec::new();
    let mut bc_sumsqs: Vec<Var> = Vec::with_capacity(batch.len());
    let mut latent_rows: Vec<f64> = Vec::new();
    let mut draw_cursor = 0usize;

    for (ti, traj) in batch.iter().enumerate() {
        if traj.is_empty() {
            return Err(Error::contract("trajectory without actions in batch"));
        }
        let lang = &langs[ti];
        let states = states_matrix(traj)?;
        let actions: Vec<[f64; ACTION_DIM]> = traj.actions.iter().map(|a| a.to_vec()).collect();
        let t_len = actions.len();
        let traj_draws = DiffusionDraws {
            timesteps: draws.timesteps[draw_cursor..draw_cursor + t_len].to_vec(),
            noise: draws.noise[draw_cursor..draw_cursor + t_len].to_vec(),
        };
        draw_cursor += t_len;
        let bc_states = Tensor::new(
            vec![t_len, STATE_DIM],
            states.data()[..t_len * STATE_DIM].to_vec(),
        )?;

        let cond: Var = if let (Some(s), Some(ev), Some(cv)) = (skill, vars.enc.as_ref(), vars.cb)
        {
            let frozen_traj = frozen.map(|f| &f[ti]);
            let parts = quantizer::skill_loss_tape(
                tape,
                &s.encoder.mlp,
                ev,
                s.decoder.as_ref().zip(vars.dec.as_ref()),
                s.codebook.codes(),
                cv,
                &states,
                lang,
                &weights,
                frozen_traj,
            )?;
            skill_losses.push(parts.loss);
            if let Some(rv) = parts.recon {
                recon_values.push(tape.value(rv).item());
            }
            latent_rows.extend_from_slice(tape.value(parts.latents).data());

            let lat_bc = tape.gather_rows(parts.latents, (0..t_len).collect())?;
            let st = match frozen_traj {
                None => {
                    let codes_bc = tape.gather_rows(cv, parts.indices[..t_len].to_vec())?;
                    quantizer::straight_through(tape, lat_bc, codes_bc)?
                }
                Some(fz) => {
                    // frozen straight-through: cond = latents + const with
                    // const = codes(base) - latents(base)
                    let d = s.codebook.dim();
                    let mut delta = Vec::with_capacity(t_len * d);
                    for r in 0..t_len {
                        for c in 0..d {
                            delta.push(fz.codes.row(r)[c] - fz.latents.row(r)[c]);
                        }
                    }
                    let dl = tape.leaf(Tensor::new(vec![t_len, d], delta)?);
                    tape.add(lat_bc, dl)?
                }
            };
            indices.push(parts.indices);
            st
        } else {
            let mut lang_rows = Vec::with_capacity(t_len * EMBED_DIM);
            for _ in 0..t_len {
                lang_rows.extend_from_slice(lang.as_slice());
            }
            tape.leaf(Tensor::new(vec![t_len, EMBED_DIM], lang_rows)?)
        };

        let ssq = ddpm_sumsq_tape(
            tape,
            policy,
            &vars.policy,
            &bc_states,
            &actions,
            cond,
            &traj_draws,
            sched,
        )?;
        bc_sumsqs.push(ssq);
    }

    let total_steps: usize = batch.iter().map(|t| t.len()).sum();
    let mut bc_total = bc_sumsqs[0];
    for &v in &bc_sumsqs[1..] {
        bc_total = tape.add(bc_total, v)?;
    }
    let bc_loss = tape.scale(bc_total, 1.0 / (total_steps * ACTION_DIM) as f64);
    let bc_value = tape.value(bc_loss).item();

    let (total, skill_value) = if skill.is_some() {
        let mut skill_sum = skill_losses[0];
        for &v in &skill_losses[1..] {
            skill_sum = tape.add(skill_sum, v)?;
        }
        let skill_loss = tape.scale(skill_sum, 1.0 / batch.len() as f64);
        let sv = tape.value(skill_loss).item();
        let a = tape.scale(skill_loss, config.skill_weight);
        let b = tape.scale(bc_loss, config.behavior_weight);
        (tape.add(a, b)?, sv)
    } else {
        (tape.scale(bc_loss, config.behavior_weight), 0.0)
    };

    let latents = skill.map(|s| {
        let rows = latent_rows.len() / s.codebook.dim();
        Tensor::new(vec![rows, s.codebook.dim()], latent_rows).expect("latent rows")
    });
    let recon_value = if recon_values.is_empty() {
        0.0
    } else {
        recon_values.iter().sum::<f64>() / recon_values.len() as f64
    };

    Ok(BuiltLoss {
        total,
        skill_value,
        bc_value,
        recon_value,
        indices,
        latents,
    })
}

/// Capture per-trajectory frozen stop-gradient values for gradient checking
/// the combined loss.
pub fn capture_frozen_batch(
    skill: &SkillComponents,
    batch: &[&Trajectory],
    langs: &[LangEmbedding],
) -> Result<Vec<FrozenSkill>> {
    batch
        .iter()
        .zip(langs)
        .map(|(traj, lang)| {
            let states = states_matrix(traj)?;
            quantizer::capture_frozen(&skill.encoder, &skill.codebook, &states, lang)
        })
        .collect()
}
