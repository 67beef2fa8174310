//! Finite-difference audit of every network and of the combined training
//! loss on reduced-width copies of the architecture.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{ActorCritic, ArchDims, SequenceBatch, Variant};
use crate::error::Result;
use crate::nn::gaussian::gaussian_head;
use crate::nn::{fd_check, Mlp, ParamSet, Tape, Var};
use crate::ppo::{total_loss_tape, LossWeights, PpoMiniBatch};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub const NETWORKS: [&str; 6] = [
    "mlp_encoder",
    "latent_encoder",
    "barlow_encoder",
    "actor",
    "critic",
    "composite_loss",
];

#[derive(Debug, Clone, Serialize)]
pub struct NetworkReport {
    pub name: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    /// Entry with the largest error across seeds.
    pub worst_entry: String,
    pub passed: bool,
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// `sum(f(x) ⊙ W)` for a fixed random `W`, so every output receives a distinct weight.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Array2<f64>) -> Result<Var> {
    let prod = tape.mul_const(out, weights.clone())?;
    Ok(tape.sum_all(prod))
}

fn check_mlp(mlp: &Mlp, params: &ParamSet, rng: &mut ChaCha8Rng) -> Result<crate::nn::FdReport> {
    let input = random_matrix(4, mlp.spec.input_dim(), 1.0, rng);
    let w = random_matrix(4, mlp.spec.output_dim(), 1.0, rng);
    let own = params.extract_prefixed(&mlp.prefix);
    let mut sub = ParamSet::new();
    sub.extend_prefixed(&mlp.prefix, &own)?;
    fd_check(
        |tape, p| {
            let x = tape.constant(input.clone());
            let y = mlp.forward_tape(tape, p, x)?;
            weighted_sum(tape, y, &w)
        },
        &sub,
        FD_STEP,
        FD_TOLERANCE,
    )
}

fn sequence(dims: &ArchDims, variant: Variant, steps: usize, envs: usize, rng: &mut ChaCha8Rng) -> SequenceBatch {
    let n = steps * envs;
    let mut keep = vec![vec![1.0; envs]; steps];
    if steps > 1 {
        keep[steps / 2][0] = 0.0;
    }
    SequenceBatch {
        steps,
        envs,
        policy_obs: random_matrix(n, dims.proprio, 1.0, rng),
        old_slices: random_matrix(n, dims.slice(), 1.0, rng),
        new_slices: random_matrix(n, dims.slice(), 1.0, rng),
        critic_obs: random_matrix(n, dims.critic_input(variant), 1.0, rng),
        actor_h0: random_matrix(envs, dims.gru_hidden, 0.5, rng),
        critic_h0: random_matrix(envs, dims.gru_hidden, 0.5, rng),
        keep,
    }
}

/// Runs one network's check for one seed.
pub fn check_network(name: &str, seed: u64) -> Result<crate::nn::FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ArchDims::reduced();
    let model = ActorCritic::new(dims, Variant::BarlowWalk)?;
    let mut params = model.init_params(0.8, &mut rng)?;
    // Non-zero biases and log std so every entry has a generic gradient.
    for e in params.iter_mut() {
        for v in e.values.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    match name {
        "mlp_encoder" => check_mlp(&model.encoders.mlp_enc, &params, &mut rng),
        "latent_encoder" => check_mlp(&model.encoders.latent_enc, &params, &mut rng),
        "barlow_encoder" => check_mlp(&model.encoders.barlow_enc, &params, &mut rng),
        "actor" | "critic" => {
            let seq = sequence(&dims, Variant::BarlowWalk, 3, 2, &mut rng);
            let out_dim = if name == "actor" { dims.action } else { 1 };
            let w = random_matrix(seq.steps * seq.envs, out_dim, 1.0, &mut rng);
            let wl = random_matrix(1, dims.action, 1.0, &mut rng);
            let actor = name == "actor";
            let mut sub = ParamSet::new();
            let prefixes: &[&str] = if actor {
                &["actor.gru.", "actor.head."]
            } else {
                &["critic.gru.", "critic.head."]
            };
            for p in prefixes {
                sub.extend_prefixed(p, &params.extract_prefixed(p))?;
            }
            if actor {
                let e = params.get(crate::agent::LOG_STD_NAME).expect("log std");
                sub.insert(&e.name, &e.shape, e.values.clone())?;
            }
            let feature = random_matrix(seq.steps * seq.envs, dims.actor_feature(Variant::BarlowWalk), 1.0, &mut rng);
            fd_check(
                |tape, p| {
                    if actor {
                        let obs = tape.constant(seq.policy_obs.clone());
                        let f = tape.constant(feature.clone());
                        let x = tape.concat_cols(&[obs, f])?;
                        let h0 = tape.constant(seq.actor_h0.clone());
                        let h = model.actor_gru.sequence_tape(tape, p, x, h0, &seq.keep, seq.envs)?;
                        let mean = model.actor_head.forward_tape(tape, p, h)?;
                        let a = weighted_sum(tape, mean, &w)?;
                        let ls = tape.param_by_name(p, crate::agent::LOG_STD_NAME)?;
                        let b = weighted_sum(tape, ls, &wl)?;
                        tape.add(a, b)
                    } else {
                        let x = tape.constant(seq.critic_obs.clone());
                        let h0 = tape.constant(seq.critic_h0.clone());
                        let h = model.critic_gru.sequence_tape(tape, p, x, h0, &seq.keep, seq.envs)?;
                        let v = model.critic_head.forward_tape(tape, p, h)?;
                        weighted_sum(tape, v, &w)
                    }
                },
                &sub,
                FD_STEP,
                FD_TOLERANCE,
            )
        }
        "composite_loss" => check_composite(&model, &params, &mut rng),
        other => Err(crate::Error::Config(format!("unknown network `{other}`"))),
    }
}

fn check_composite(model: &ActorCritic, params: &ParamSet, rng: &mut ChaCha8Rng) -> Result<crate::nn::FdReport> {
    let dims = model.dims;
    let seq = sequence(&dims, Variant::BarlowWalk, 3, 3, rng);
    let n = seq.steps * seq.envs;
    let log_std = model.log_std(params)?;
    let mut tape = Tape::new();
    let out = model.forward_tape(&mut tape, params, &seq, false)?;
    let mean = tape.value(out.mean).clone();
    let actions = &mean + &random_matrix(n, dims.action, 1.0, rng);
    // Old log-probs near the current ones keep every ratio strictly inside the clip band.
    let old_log_prob = Array2::from_shape_fn((n, 1), |(r, _)| {
        let (lp, _) = gaussian_head(
            mean.row(r).as_slice().expect("row"),
            &log_std,
            actions.row(r).as_slice().expect("row"),
        );
        lp + rng.random_range(-0.1..0.1)
    });
    let mb = PpoMiniBatch {
        seq,
        actions,
        old_log_prob,
        old_mean: mean,
        old_log_std: log_std,
        advantages: random_matrix(n, 1, 1.0, rng),
        returns: random_matrix(n, 1, 2.0, rng),
    };
    let weights = LossWeights {
        clip: 0.2,
        value_coef: 1.0,
        entropy_coef: 0.01,
        barlow: Some((5e-3, false)),
    };
    fd_check(
        |tape, p| Ok(total_loss_tape(tape, model, p, &mb, &weights)?.total),
        params,
        FD_STEP,
        FD_TOLERANCE,
    )
}

/// Runs every network over `seeds` and folds the worst error per network.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<NetworkReport>> {
    NETWORKS
        .iter()
        .map(|&name| {
            let mut worst = 0.0f64;
            let mut worst_entry = String::new();
            for &s in seeds {
                let r = check_network(name, s)?;
                for e in &r.entries {
                    if e.max_rel_error >= worst {
                        worst = e.max_rel_error;
                        worst_entry = format!("{} (seed {s})", e.name);
                    }
                }
            }
            Ok(NetworkReport {
                name: name.to_string(),
                seeds: seeds.len(),
                max_rel_error: worst,
                worst_entry,
                passed: worst < FD_TOLERANCE,
            })
        })
        .collect()
}
