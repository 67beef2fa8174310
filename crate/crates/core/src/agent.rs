//! Asymmetric recurrent actor-critic.
//!
//! Actor: `[proprio(35) ‖ z(16)] → GRU(64) → 32 → 8` (action mean) plus a
//! state-independent log std. Critic: `[full obs(38) ‖ height scan(187)] →
//! GRU(64) → 32 → 1`. The baseline variant feeds the 64-dim MLP-encoder output
//! to the actor instead of `z` and gives the critic no terrain scan.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderDims, Encoders, PROPRIO_DIM, WINDOW};
use crate::error::{Error, Result};
use crate::nn::gaussian::{LOG_STD_MAX, LOG_STD_MIN};
use crate::nn::{Gru, Mlp, MlpSpec, ParamSet, Tape, Var, HIDDEN_SIZE};

pub const FULL_OBS_DIM: usize = 38;
pub const SCAN_DIM: usize = 187;
pub const ACTION_DIM: usize = 8;
pub const HEAD_HIDDEN: usize = 32;
pub const LOG_STD_NAME: &str = "actor.log_std";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// History encoder with latent, Barlow projector, privileged critic.
    #[default]
    BarlowWalk,
    /// History MLP encoder only, no terrain perception anywhere.
    Baseline2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDims {
    pub proprio: usize,
    pub full_obs: usize,
    pub scan: usize,
    pub window: usize,
    pub action: usize,
    pub encoder: EncoderDims,
    pub gru_hidden: usize,
    pub head_hidden: usize,
}

impl Default for ArchDims {
    fn default() -> Self {
        ArchDims {
            proprio: PROPRIO_DIM,
            full_obs: FULL_OBS_DIM,
            scan: SCAN_DIM,
            window: WINDOW,
            action: ACTION_DIM,
            encoder: EncoderDims::default(),
            gru_hidden: HIDDEN_SIZE,
            head_hidden: HEAD_HIDDEN,
        }
    }
}

impl ArchDims {
    /// A small copy of the architecture for finite-difference checks.
    pub fn reduced() -> Self {
        ArchDims {
            proprio: 4,
            full_obs: 5,
            scan: 3,
            window: 5,
            action: 2,
            encoder: EncoderDims {
                slice: 20,
                mlp_hidden: 6,
                mlp_out: 5,
                latent_hidden: 4,
                latent: 3,
                barlow_hidden: 3,
                projection: 4,
            },
            gru_hidden: 5,
            head_hidden: 4,
        }
    }

    pub fn slice(&self) -> usize {
        self.proprio * self.window
    }

    /// Width of the actor's encoder feature.
    pub fn actor_feature(&self, variant: Variant) -> usize {
        match variant {
            Variant::BarlowWalk => self.encoder.latent,
            Variant::Baseline2 => self.encoder.mlp_out,
        }
    }

    pub fn policy_input(&self, variant: Variant) -> usize {
        self.proprio + self.actor_feature(variant)
    }

    pub fn critic_input(&self, variant: Variant) -> usize {
        match variant {
            Variant::BarlowWalk => self.full_obs + self.scan,
            Variant::Baseline2 => self.full_obs,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.encoder.slice != self.slice() {
            return Err(Error::dim("encoder slice", self.slice(), self.encoder.slice));
        }
        if self.full_obs < self.proprio {
            return Err(Error::Config("full observation smaller than proprioception".into()));
        }
        Ok(())
    }
}

/// Checks the default wiring against the published network table.
pub fn audit_dimensions() -> Result<()> {
    let d = ArchDims::default();
    let checks = [
        ("full observation", FULL_OBS_DIM, 3 + 3 + 3 + 3 + 8 + 8 + 8 + 2),
        ("proprioceptive observation", 35, d.proprio),
        ("MLP encoder input", 175, d.slice()),
        ("MLP encoder output", 64, d.encoder.mlp_out),
        ("latent", 16, d.encoder.latent),
        ("Barlow projection", 64, d.encoder.projection),
        ("policy input", 51, d.policy_input(Variant::BarlowWalk)),
        ("critic input", 225, d.critic_input(Variant::BarlowWalk)),
        ("height scan", 225 - 38, d.scan),
        ("action", 8, d.action),
        ("GRU hidden", 64, d.gru_hidden),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(Error::dim(what, expected, got));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorCritic {
    pub dims: ArchDims,
    pub variant: Variant,
    pub encoders: Encoders,
    pub actor_gru: Gru,
    pub actor_head: Mlp,
    pub critic_gru: Gru,
    pub critic_head: Mlp,
}

/// Per-step batched inference inputs, one environment per row.
pub struct ActInput<'a> {
    pub policy_obs: ArrayView2<'a, f64>,
    pub new_slices: ArrayView2<'a, f64>,
    pub critic_obs: ArrayView2<'a, f64>,
    pub actor_h: ArrayView2<'a, f64>,
    pub critic_h: ArrayView2<'a, f64>,
}

pub struct ActOutput {
    pub mean: Array2<f64>,
    pub value: Array1<f64>,
    pub actor_h: Array2<f64>,
    pub critic_h: Array2<f64>,
    /// Encoder feature fed to the actor (`z`, or the MLP output for the baseline).
    pub feature: Array2<f64>,
}

/// Time-major minibatch of whole-environment sequences (row `t * envs + e`).
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub steps: usize,
    pub envs: usize,
    pub policy_obs: Array2<f64>,
    pub old_slices: Array2<f64>,
    pub new_slices: Array2<f64>,
    pub critic_obs: Array2<f64>,
    pub actor_h0: Array2<f64>,
    pub critic_h0: Array2<f64>,
    /// `keep[t][e]` multiplies the carried hidden state before step `t`.
    pub keep: Vec<Vec<f64>>,
}

pub struct TapedOutputs {
    pub mean: Var,
    pub value: Var,
    pub log_std: Var,
    /// `(u_old, u_new)` projections when requested.
    pub projections: Option<(Var, Var)>,
}

impl ActorCritic {
    pub fn new(dims: ArchDims, variant: Variant) -> Result<Self> {
        dims.validate()?;
        let encoders = Encoders::new(dims.encoder)?;
        Ok(ActorCritic {
            actor_gru: Gru::new(dims.policy_input(variant), dims.gru_hidden, "actor.gru."),
            actor_head: Mlp::new(
                MlpSpec::elu_hidden(&[dims.gru_hidden, dims.head_hidden, dims.action]),
                "actor.head.",
            )?,
            critic_gru: Gru::new(dims.critic_input(variant), dims.gru_hidden, "critic.gru."),
            critic_head: Mlp::new(
                MlpSpec::elu_hidden(&[dims.gru_hidden, dims.head_hidden, 1]),
                "critic.head.",
            )?,
            dims,
            variant,
            encoders,
        })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, init_std: f64, rng: &mut R) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        let g = 2f64.sqrt();
        self.encoders.mlp_enc.init(&mut p, g, g, rng)?;
        self.encoders.latent_enc.init(&mut p, g, g, rng)?;
        self.encoders.barlow_enc.init(&mut p, g, g, rng)?;
        self.actor_gru.init(&mut p, rng)?;
        self.actor_head.init(&mut p, g, 0.01, rng)?;
        p.insert(LOG_STD_NAME, &[self.dims.action], vec![init_std.ln(); self.dims.action])?;
        self.critic_gru.init(&mut p, rng)?;
        self.critic_head.init(&mut p, g, 1.0, rng)?;
        Ok(p)
    }

    pub fn log_std(&self, params: &ParamSet) -> Result<Vec<f64>> {
        let e = params.get(LOG_STD_NAME).ok_or_else(|| {
            Error::Config(format!("missing parameter {LOG_STD_NAME:?}"))
        })?;
        Ok(e.values.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect())
    }

    /// The actor's encoder feature for a batch of new-view slices.
    pub fn actor_feature(&self, params: &ParamSet, slices: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self.variant {
            Variant::BarlowWalk => self.encoders.encode_latent_batch(params, slices),
            Variant::Baseline2 => self.encoders.mlp_enc.forward_batch(params, slices),
        }
    }

    pub fn act(&self, params: &ParamSet, input: &ActInput) -> Result<ActOutput> {
        let feature = self.actor_feature(params, input.new_slices)?;
        let actor_in = concatenate(Axis(1), &[input.policy_obs, feature.view()])
            .map_err(|e| Error::Config(format!("actor input: {e}")))?;
        let actor_h = self.actor_gru.step_batch(params, actor_in.view(), input.actor_h)?;
        let mean = self.actor_head.forward_batch(params, actor_h.view())?;
        let critic_h = self
            .critic_gru
            .step_batch(params, input.critic_obs, input.critic_h)?;
        let value = self
            .critic_head
            .forward_batch(params, critic_h.view())?
            .column(0)
            .to_owned();
        Ok(ActOutput {
            mean,
            value,
            actor_h,
            critic_h,
            feature,
        })
    }

    /// Critic value after one more recurrent step, without touching the actor.
    pub fn value(
        &self,
        params: &ParamSet,
        critic_obs: ArrayView2<f64>,
        critic_h: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let h = self.critic_gru.step_batch(params, critic_obs, critic_h)?;
        Ok(self.critic_head.forward_batch(params, h.view())?.column(0).to_owned())
    }

    /// Re-evaluates a sequence batch on the tape. The encoder runs once on
    /// both views stacked (new rows first).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        batch: &SequenceBatch,
        with_projections: bool,
    ) -> Result<TapedOutputs> {
        let n = batch.steps * batch.envs;
        let twin = with_projections && self.variant == Variant::BarlowWalk;
        let slices = if twin {
            let stacked = concatenate(Axis(0), &[batch.new_slices.view(), batch.old_slices.view()])
                .map_err(|e| Error::Config(format!("stacking twin views: {e}")))?;
            tape.constant(stacked)
        } else {
            tape.constant(batch.new_slices.clone())
        };
        let l = self.encoders.mlp_enc.forward_tape(tape, params, slices)?;
        let (feature_all, z_all) = match self.variant {
            Variant::BarlowWalk => {
                let z = self.encoders.latent_enc.forward_tape(tape, params, l)?;
                (z, Some(z))
            }
            Variant::Baseline2 => (l, None),
        };
        let feature_new = tape.slice_rows(feature_all, 0, n)?;

        let obs = tape.constant(batch.policy_obs.clone());
        let actor_in = tape.concat_cols(&[obs, feature_new])?;
        let h0 = tape.constant(batch.actor_h0.clone());
        let h = self
            .actor_gru
            .sequence_tape(tape, params, actor_in, h0, &batch.keep, batch.envs)?;
        let mean = self.actor_head.forward_tape(tape, params, h)?;

        let log_std_raw = tape.param_by_name(params, LOG_STD_NAME)?;
        let log_std = tape.clamp(log_std_raw, LOG_STD_MIN, LOG_STD_MAX);

        let critic_in = tape.constant(batch.critic_obs.clone());
        let ch0 = tape.constant(batch.critic_h0.clone());
        let ch = self
            .critic_gru
            .sequence_tape(tape, params, critic_in, ch0, &batch.keep, batch.envs)?;
        let value = self.critic_head.forward_tape(tape, params, ch)?;

        let projections = match (twin, z_all) {
            (true, Some(z)) => {
                let u = self.encoders.project_barlow_tape(tape, params, z)?;
                let u_new = tape.slice_rows(u, 0, n)?;
                let u_old = tape.slice_rows(u, n, n)?;
                Some((u_old, u_new))
            }
            _ => None,
        };
        Ok(TapedOutputs {
            mean,
            value,
            log_std,
            projections,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_wiring_matches_network_table() {
        audit_dimensions().unwrap();
        let d = ArchDims::default();
        assert_eq!(d.slice(), 175);
        assert_eq!(d.policy_input(Variant::BarlowWalk), 51);
        assert_eq!(d.critic_input(Variant::BarlowWalk), 225);
        assert_eq!(d.critic_input(Variant::Baseline2), 38);
        assert_eq!(d.scan, 187);
    }

    #[test]
    fn act_output_shapes() {
        let ac = ActorCritic::new(ArchDims::default(), Variant::BarlowWalk).unwrap();
        let p = ac.init_params(1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let e = 3;
        let po = Array2::zeros((e, 35));
        let sl = Array2::from_elem((e, 175), 0.1);
        let co = Array2::from_elem((e, 225), -0.2);
        let h = Array2::zeros((e, 64));
        let out = ac
            .act(
                &p,
                &ActInput {
                    policy_obs: po.view(),
                    new_slices: sl.view(),
                    critic_obs: co.view(),
                    actor_h: h.view(),
                    critic_h: h.view(),
                },
            )
            .unwrap();
        assert_eq!(out.mean.dim(), (e, 8));
        assert_eq!(out.value.len(), e);
        assert_eq!(out.feature.dim(), (e, 16));
        assert_eq!(out.actor_h.dim(), (e, 64));
        assert_eq!(ac.log_std(&p).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn baseline_feeds_mlp_feature_and_plain_critic() {
        let ac = ActorCritic::new(ArchDims::default(), Variant::Baseline2).unwrap();
        assert_eq!(ac.actor_gru.input_dim, 35 + 64);
        assert_eq!(ac.critic_gru.input_dim, 38);
    }
}
