//! Clipped-surrogate policy optimisation with GAE, an adaptive learning rate
//! and the history-encoder redundancy-reduction term added to the objective.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::agent::{ActorCritic, SequenceBatch};
use crate::barlow::{barlow_loss_tape, corr_diagnostics, cross_corr_tape, CorrDiagnostics};
use crate::error::{Error, Result};
use crate::nn::gaussian::{half_log_two_pi, half_log_two_pi_e, kl_diag};
use crate::nn::{ParamSet, Tape, Var};

pub const LR_MIN: f64 = 1e-5;
pub const LR_MAX: f64 = 1e-2;
pub const ROLLOUT_HORIZON: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_range: f64,
    pub num_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub desired_kl: f64,
    pub value_coef: f64,
    pub num_mini_batches: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub lr_min: f64,
    pub lr_max: f64,
    pub max_grad_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init_noise_std: f64,
    /// Consecutive skipped minibatch steps tolerated before aborting.
    pub max_consecutive_skips: u32,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_range: 0.2,
            num_epochs: 5,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            desired_kl: 0.01,
            value_coef: 1.0,
            num_mini_batches: 4,
            learning_rate: 1e-3,
            schedule: LrSchedule::Adaptive,
            lr_min: LR_MIN,
            lr_max: LR_MAX,
            max_grad_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_noise_std: 1.0,
            max_consecutive_skips: 10,
        }
    }
}

/// Redundancy-reduction branch settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarlowConfig {
    pub enabled: bool,
    pub lambda: f64,
    pub center_features: bool,
}

impl Default for BarlowConfig {
    fn default() -> Self {
        BarlowConfig {
            enabled: true,
            lambda: crate::barlow::DEFAULT_LAMBDA,
            center_features: false,
        }
    }
}

/// Generalised advantage estimation over one trajectory segment.
/// `values` carries the bootstrap value at index `T`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    assert_eq!(values.len(), t_len + 1, "values must include the bootstrap entry");
    assert_eq!(dones.len(), t_len);
    let mut adv = vec![0.0; t_len];
    let mut next = 0.0;
    for t in (0..t_len).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * not_done * values[t + 1] - values[t];
        next = delta + gamma * lambda * not_done * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)` with `ρ = exp(new − old)`; to be maximised.
pub fn ppo_surrogate(log_prob_new: f64, log_prob_old: f64, advantage: f64, clip: f64) -> f64 {
    let ratio = (log_prob_new - log_prob_old).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    unclipped.min(clipped)
}

pub fn adapt_lr(current_lr: f64, observed_kl: f64, desired_kl: f64) -> f64 {
    adapt_lr_bounded(current_lr, observed_kl, desired_kl, LR_MIN, LR_MAX)
}

pub fn adapt_lr_bounded(lr: f64, kl: f64, desired: f64, lo: f64, hi: f64) -> f64 {
    let next = if kl > 2.0 * desired {
        lr / 1.5
    } else if kl < desired / 2.0 && kl > 0.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(lo, hi)
}

/// In-place standardisation to zero mean and unit (population) std.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Adam with bias correction. Moments are kept as parameter sets so they can
/// be checkpointed alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for idx in 0..params.len() {
            let p = params.entry_mut(idx);
            let m = &mut self.m.entry_mut(idx).values;
            let v = &mut self.v.entry_mut(idx).values;
            for k in 0..p.values.len() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p.values[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    pub fn quantize_f32(&mut self) {
        self.m.quantize_f32();
        self.v.quantize_f32();
    }
}

/// Fixed-horizon trajectories from `num_envs` environments, stored time-major
/// (row `t * num_envs + e`).
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub num_envs: usize,
    pub policy_obs: Array2<f64>,
    pub old_slices: Array2<f64>,
    pub new_slices: Array2<f64>,
    pub critic_obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub means: Array2<f64>,
    pub log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Hidden state fed into the GRU at each step.
    pub actor_h: Array2<f64>,
    pub critic_h: Array2<f64>,
    /// Value of the state following the last step, per environment.
    pub last_values: Vec<f64>,
}

impl RolloutBatch {
    pub fn zeros(
        horizon: usize,
        num_envs: usize,
        policy_dim: usize,
        slice_dim: usize,
        critic_dim: usize,
        action_dim: usize,
        hidden: usize,
    ) -> Self {
        let n = horizon * num_envs;
        RolloutBatch {
            horizon,
            num_envs,
            policy_obs: Array2::zeros((n, policy_dim)),
            old_slices: Array2::zeros((n, slice_dim)),
            new_slices: Array2::zeros((n, slice_dim)),
            critic_obs: Array2::zeros((n, critic_dim)),
            actions: Array2::zeros((n, action_dim)),
            means: Array2::zeros((n, action_dim)),
            log_std: vec![0.0; action_dim],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            actor_h: Array2::zeros((n, hidden)),
            critic_h: Array2::zeros((n, hidden)),
            last_values: vec![0.0; num_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, t: usize, e: usize) -> usize {
        t * self.num_envs + e
    }

    /// Number of scalars held, a fixed function of the shape.
    pub fn footprint(&self) -> usize {
        self.policy_obs.len()
            + self.old_slices.len()
            + self.new_slices.len()
            + self.critic_obs.len()
            + self.actions.len()
            + self.means.len()
            + self.log_std.len()
            + self.log_probs.len()
            + self.values.len()
            + self.rewards.len()
            + self.dones.len()
            + self.actor_h.len()
            + self.critic_h.len()
            + self.last_values.len()
    }

    /// Per-environment GAE; returns `(advantages, returns)` in row order.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        for e in 0..self.num_envs {
            let rows: Vec<usize> = (0..self.horizon).map(|t| self.row(t, e)).collect();
            let rewards: Vec<f64> = rows.iter().map(|&r| self.rewards[r]).collect();
            let dones: Vec<bool> = rows.iter().map(|&r| self.dones[r]).collect();
            let mut values: Vec<f64> = rows.iter().map(|&r| self.values[r]).collect();
            values.push(self.last_values[e]);
            let (a, rt) = compute_gae(&rewards, &values, &dones, gamma, lambda);
            for (k, &r) in rows.iter().enumerate() {
                adv[r] = a[k];
                ret[r] = rt[k];
            }
        }
        (adv, ret)
    }
}

/// One minibatch of whole-environment sequences plus PPO targets.
#[derive(Debug, Clone)]
pub struct PpoMiniBatch {
    pub seq: SequenceBatch,
    pub actions: Array2<f64>,
    pub old_log_prob: Array2<f64>,
    pub old_mean: Array2<f64>,
    pub old_log_std: Vec<f64>,
    pub advantages: Array2<f64>,
    pub returns: Array2<f64>,
}

fn gather_rows(src: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    src.select(Axis(0), rows)
}

fn column(values: &[f64], rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_vec((rows.len(), 1), rows.iter().map(|&r| values[r]).collect())
        .expect("column shape")
}

impl PpoMiniBatch {
    /// Extracts the sequences of environments `envs` (time-major).
    pub fn from_rollout(batch: &RolloutBatch, envs: &[usize], advantages: &[f64], returns: &[f64]) -> Self {
        let horizon = batch.horizon;
        let rows: Vec<usize> = (0..horizon)
            .flat_map(|t| envs.iter().map(move |&e| t * batch.num_envs + e))
            .collect();
        let first: Vec<usize> = envs.iter().map(|&e| batch.row(0, e)).collect();
        let keep = (0..horizon)
            .map(|t| {
                envs.iter()
                    .map(|&e| {
                        if t > 0 && batch.dones[batch.row(t - 1, e)] {
                            0.0
                        } else {
                            1.0
                        }
                    })
                    .collect()
            })
            .collect();
        PpoMiniBatch {
            seq: SequenceBatch {
                steps: horizon,
                envs: envs.len(),
                policy_obs: gather_rows(&batch.policy_obs, &rows),
                old_slices: gather_rows(&batch.old_slices, &rows),
                new_slices: gather_rows(&batch.new_slices, &rows),
                critic_obs: gather_rows(&batch.critic_obs, &rows),
                actor_h0: gather_rows(&batch.actor_h, &first),
                critic_h0: gather_rows(&batch.critic_h, &first),
                keep,
            },
            actions: gather_rows(&batch.actions, &rows),
            old_log_prob: column(&batch.log_probs, &rows),
            old_mean: gather_rows(&batch.means, &rows),
            old_log_std: batch.log_std.clone(),
            advantages: column(advantages, &rows),
            returns: column(returns, &rows),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub barlow: Option<(f64, bool)>,
}

impl LossWeights {
    pub fn new(ppo: &PpoConfig, barlow: &BarlowConfig) -> Self {
        LossWeights {
            clip: ppo.clip_range,
            value_coef: ppo.value_coef,
            entropy_coef: ppo.entropy_coef,
            barlow: barlow
                .enabled
                .then_some((barlow.lambda, barlow.center_features)),
        }
    }
}

pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub barlow: Option<Var>,
    pub corr: Option<Var>,
    pub mean: Var,
    pub log_std: Var,
}

/// `−mean(surrogate) + c_v·mean((V − R)²) − c_e·entropy + L_BT`
pub fn total_loss_tape(
    tape: &mut Tape,
    model: &ActorCritic,
    params: &ParamSet,
    mb: &PpoMiniBatch,
    w: &LossWeights,
) -> Result<LossVars> {
    let out = model.forward_tape(tape, params, &mb.seq, w.barlow.is_some())?;
    let action_dim = tape.shape(out.mean).1 as f64;

    let actions = tape.constant(mb.actions.clone());
    let diff = tape.sub(actions, out.mean)?;
    let std = tape.exp(out.log_std);
    let zs = tape.div_row(diff, std)?;
    let zsq = tape.square(zs);
    let q = tape.sum_rows(zsq);
    let q = tape.scale(q, -0.5);
    let ls_sum = tape.sum_all(out.log_std);
    let neg_ls = tape.scale(ls_sum, -1.0);
    let logp = tape.add_row(q, neg_ls)?;
    let logp = tape.add_scalar(logp, -action_dim * half_log_two_pi());

    let old = tape.constant(mb.old_log_prob.clone());
    let log_ratio = tape.sub(logp, old)?;
    let ratio = tape.exp(log_ratio);
    let surr1 = tape.mul_const(ratio, mb.advantages.clone())?;
    let clipped = tape.clamp(ratio, 1.0 - w.clip, 1.0 + w.clip);
    let surr2 = tape.mul_const(clipped, mb.advantages.clone())?;
    let surr = tape.min(surr1, surr2)?;
    let mean_surr = tape.mean_all(surr);
    let policy = tape.scale(mean_surr, -1.0);

    let returns = tape.constant(mb.returns.clone());
    let verr = tape.sub(out.value, returns)?;
    let vsq = tape.square(verr);
    let value = tape.mean_all(vsq);

    let entropy = tape.add_scalar(ls_sum, action_dim * half_log_two_pi_e());

    let mut total = policy;
    let vterm = tape.scale(value, w.value_coef);
    total = tape.add(total, vterm)?;
    let eterm = tape.scale(entropy, -w.entropy_coef);
    total = tape.add(total, eterm)?;

    let (barlow, corr) = match (w.barlow, out.projections) {
        (Some((lambda, center)), Some((u_old, u_new))) => {
            let c = cross_corr_tape(tape, u_old, u_new, center)?;
            let l = barlow_loss_tape(tape, c, lambda)?;
            total = tape.add(total, l)?;
            (Some(l), Some(c))
        }
        _ => (None, None),
    };

    Ok(LossVars {
        total,
        policy,
        value,
        entropy,
        barlow,
        corr,
        mean: out.mean,
        log_std: out.log_std,
    })
}

/// Mean closed-form KL between the rollout policy and the taped one.
fn batch_kl(tape: &Tape, vars: &LossVars, mb: &PpoMiniBatch) -> f64 {
    let mean = tape.value(vars.mean);
    let ls_new: Vec<f64> = tape.value(vars.log_std).iter().copied().collect();
    let n = mean.nrows();
    let mut total = 0.0;
    for r in 0..n {
        let mu_new = mean.row(r);
        let mu_old = mb.old_mean.row(r);
        total += kl_diag(
            mu_old.as_slice().unwrap(),
            &mb.old_log_std,
            mu_new.as_slice().unwrap(),
            &ls_new,
        );
    }
    total / n as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss_pi: f64,
    pub loss_v: f64,
    pub loss_bt: f64,
    pub entropy: f64,
    pub kl: f64,
    pub lr: f64,
    pub corr: CorrDiagnostics,
    pub grad_norm: f64,
    pub steps_taken: usize,
    pub steps_skipped: usize,
    pub adv_mean: f64,
    pub adv_std: f64,
}

/// Optimisation state: network, parameters, optimiser and learning rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Learner {
    pub model: ActorCritic,
    pub params: ParamSet,
    pub adam: Adam,
    pub lr: f64,
    #[serde(default)]
    pub consecutive_skips: u32,
}

impl Learner {
    pub fn new(model: ActorCritic, params: ParamSet, cfg: &PpoConfig) -> Self {
        let adam = Adam::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut l = Learner {
            model,
            params,
            adam,
            lr: cfg.learning_rate,
            consecutive_skips: 0,
        };
        l.params.quantize_f32();
        l
    }

    /// Minibatches: a fixed partition of environments into contiguous groups.
    pub fn minibatches(batch: &RolloutBatch, count: usize, adv: &[f64], ret: &[f64]) -> Result<Vec<PpoMiniBatch>> {
        if count == 0 || !batch.num_envs.is_multiple_of(count) {
            return Err(Error::Config(format!(
                "{} environments cannot be split into {count} minibatches",
                batch.num_envs
            )));
        }
        let per = batch.num_envs / count;
        Ok((0..count)
            .map(|k| {
                let envs: Vec<usize> = (k * per..(k + 1) * per).collect();
                PpoMiniBatch::from_rollout(batch, &envs, adv, ret)
            })
            .collect())
    }

    fn note_skip(&mut self, cfg: &PpoConfig, what: &str) -> Result<()> {
        self.consecutive_skips += 1;
        eprintln!(
            "warning: {what}; skipping minibatch step ({} in a row)",
            self.consecutive_skips
        );
        if self.consecutive_skips >= cfg.max_consecutive_skips {
            return Err(Error::Numerical(format!(
                "{} consecutive minibatch steps skipped, last cause: {what}",
                self.consecutive_skips
            )));
        }
        Ok(())
    }

    pub fn update(&mut self, batch: &RolloutBatch, cfg: &PpoConfig, barlow: &BarlowConfig) -> Result<UpdateStats> {
        let (mut adv, ret) = batch.advantages(cfg.gamma, cfg.gae_lambda);
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let adv_mean = adv.iter().sum::<f64>() / n;
        let adv_std = (adv.iter().map(|a| (a - adv_mean).powi(2)).sum::<f64>() / n).sqrt();
        let mbs = Self::minibatches(batch, cfg.num_mini_batches, &adv, &ret)?;
        let weights = LossWeights::new(cfg, barlow);

        let mut stats = UpdateStats {
            adv_mean,
            adv_std,
            ..Default::default()
        };
        let mut counted = 0usize;
        for _ in 0..cfg.num_epochs {
            for mb in &mbs {
                let mut tape = Tape::new();
                let vars = total_loss_tape(&mut tape, &self.model, &self.params, mb, &weights)?;
                let kl = batch_kl(&tape, &vars, mb);
                if cfg.schedule == LrSchedule::Adaptive && kl.is_finite() {
                    self.lr = adapt_lr_bounded(self.lr, kl, cfg.desired_kl, cfg.lr_min, cfg.lr_max);
                }
                let total = tape.scalar(vars.total);
                if !total.is_finite() {
                    stats.steps_skipped += 1;
                    self.note_skip(cfg, &format!("non-finite loss ({total})"))?;
                    continue;
                }
                self.params.zero_grad();
                tape.backward(vars.total, &mut self.params)?;
                if !self.params.grads_finite() {
                    stats.steps_skipped += 1;
                    self.note_skip(cfg, "non-finite gradient")?;
                    continue;
                }
                self.consecutive_skips = 0;
                let gn = self.params.grad_norm();
                if cfg.max_grad_norm > 0.0 && gn > cfg.max_grad_norm {
                    self.params.scale_grads(cfg.max_grad_norm / gn);
                }
                self.adam.step(&mut self.params, self.lr);
                self.params.quantize_f32();
                self.adam.quantize_f32();

                stats.steps_taken += 1;
                counted += 1;
                stats.loss_pi += tape.scalar(vars.policy);
                stats.loss_v += tape.scalar(vars.value);
                stats.entropy += tape.scalar(vars.entropy);
                stats.kl += kl;
                stats.grad_norm += gn;
                if let Some(l) = vars.barlow {
                    stats.loss_bt += tape.scalar(l);
                }
                if let Some(c) = vars.corr {
                    let d = corr_diagnostics(tape.value(c).view());
                    stats.corr.diag_mean += d.diag_mean;
                    stats.corr.offdiag_rms += d.offdiag_rms;
                }
            }
        }
        if counted > 0 {
            let k = counted as f64;
            stats.loss_pi /= k;
            stats.loss_v /= k;
            stats.loss_bt /= k;
            stats.entropy /= k;
            stats.kl /= k;
            stats.grad_norm /= k;
            stats.corr.diag_mean /= k;
            stats.corr.offdiag_rms /= k;
        }
        stats.lr = self.lr;
        Ok(stats)
    }
}

/// Slice of a rollout column for one environment, in time order.
pub fn env_series(values: &[f64], horizon: usize, num_envs: usize, env: usize) -> Vec<f64> {
    (0..horizon).map(|t| values[t * num_envs + env]).collect()
}

/// Row `t * num_envs + e` of a rollout matrix.
pub fn rollout_row(m: &Array2<f64>, num_envs: usize, t: usize, e: usize) -> Array1<f64> {
    m.slice(s![t * num_envs + e, ..]).to_owned()
}
