use barlowwalk::agent::{ActorCritic, ArchDims, SequenceBatch, Variant};
use barlowwalk::nn::{gaussian_head, ParamSet, Tape};
use barlowwalk::ppo::{
    adapt_lr, compute_gae, ppo_surrogate, total_loss_tape, LossWeights, PpoMiniBatch, RolloutBatch,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `A_t = Σ_l (γλ)^l δ_{t+l}`, truncated at the first termination.
fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = r.len();
    let delta = |t: usize| {
        let nd = if d[t] { 0.0 } else { 1.0 };
        r[t] + gamma * nd * v[t + 1] - v[t]
    };
    (0..t_len)
        .map(|t| {
            let mut sum = 0.0;
            let mut alive = 1.0;
            for l in 0..(t_len - t) {
                sum += alive * (gamma * lambda).powi(l as i32) * delta(t + l);
                if d[t + l] {
                    alive = 0.0;
                }
            }
            sum
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_on_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let r: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..21).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..20).map(|_| rng.random_bool(0.1)).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, 0.99, 0.95);
        let oracle = brute_force_gae(&r, &v, &d, 0.99, 0.95);
        for t in 0..20 {
            assert!((adv[t] - oracle[t]).abs() < 1e-10, "t={t}: {} vs {}", adv[t], oracle[t]);
            assert!((ret[t] - (oracle[t] + v[t])).abs() < 1e-10);
        }
    }
}

#[test]
fn gae_hand_example() {
    let (adv, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], &[false, false], 0.99, 0.95);
    assert!((adv[0] - 1.9405).abs() < 1e-12);
    assert_eq!(adv[1], 1.0);
}

#[test]
fn rollout_advantages_are_per_environment() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, n) = (24, 3);
    let mut b = RolloutBatch::zeros(h, n, 1, 1, 1, 1, 1);
    for i in 0..h * n {
        b.rewards[i] = rng.random_range(-1.0..1.0);
        b.values[i] = rng.random_range(-1.0..1.0);
        b.dones[i] = rng.random_bool(0.1);
    }
    b.last_values = vec![0.3, -0.2, 1.1];
    let (adv, _) = b.advantages(0.99, 0.95);
    for e in 0..n {
        let rows: Vec<usize> = (0..h).map(|t| t * n + e).collect();
        let r: Vec<f64> = rows.iter().map(|&i| b.rewards[i]).collect();
        let d: Vec<bool> = rows.iter().map(|&i| b.dones[i]).collect();
        let mut v: Vec<f64> = rows.iter().map(|&i| b.values[i]).collect();
        v.push(b.last_values[e]);
        let oracle = brute_force_gae(&r, &v, &d, 0.99, 0.95);
        for (k, &i) in rows.iter().enumerate() {
            assert!((adv[i] - oracle[k]).abs() < 1e-10);
        }
    }
}

#[test]
fn adaptive_lr_cases() {
    assert!((adapt_lr(1e-3, 0.03, 0.01) - 1e-3 / 1.5).abs() < 1e-15);
    assert!((adapt_lr(1e-3, 0.03, 0.01) - 6.667e-4).abs() < 1e-7);
    assert!((adapt_lr(1e-3, 0.004, 0.01) - 1.5e-3).abs() < 1e-15);
    assert_eq!(adapt_lr(1e-2, 0.001, 0.01), 1e-2);
    assert_eq!(adapt_lr(1e-3, 0.01, 0.01), 1e-3);
    assert_eq!(adapt_lr(1e-5, 1.0, 0.01), 1e-5);
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

/// Minibatch whose rollout log-probs sit `shift` nats away from the current
/// policy, with advantages of sign `sign`.
fn shifted_batch(model: &ActorCritic, params: &ParamSet, shift: f64, sign: f64, rng: &mut ChaCha8Rng) -> PpoMiniBatch {
    let dims = model.dims;
    let (steps, envs) = (3, 2);
    let n = steps * envs;
    let seq = SequenceBatch {
        steps,
        envs,
        policy_obs: rand_mat(rng, n, dims.proprio),
        old_slices: rand_mat(rng, n, dims.slice()),
        new_slices: rand_mat(rng, n, dims.slice()),
        critic_obs: rand_mat(rng, n, dims.critic_input(model.variant)),
        actor_h0: Array2::zeros((envs, dims.gru_hidden)),
        critic_h0: Array2::zeros((envs, dims.gru_hidden)),
        keep: vec![vec![1.0; envs]; steps],
    };
    let log_std = model.log_std(params).unwrap();
    let mut tape = Tape::new();
    let out = model.forward_tape(&mut tape, params, &seq, false).unwrap();
    let mean = tape.value(out.mean).clone();
    let actions = &mean + &rand_mat(rng, n, dims.action);
    let old_log_prob = Array2::from_shape_fn((n, 1), |(r, _)| {
        let (lp, _) = gaussian_head(
            mean.row(r).as_slice().unwrap(),
            &log_std,
            actions.row(r).as_slice().unwrap(),
        );
        lp - shift
    });
    PpoMiniBatch {
        seq,
        actions,
        old_log_prob,
        old_mean: mean,
        old_log_std: log_std,
        advantages: Array2::from_shape_fn((n, 1), |_| sign * rng.random_range(0.5..2.0)),
        returns: Array2::zeros((n, 1)),
    }
}

#[test]
fn clipped_region_has_exactly_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = ActorCritic::new(ArchDims::reduced(), Variant::BarlowWalk).unwrap();
    let mut params = model.init_params(1.0, &mut rng).unwrap();
    let w = LossWeights {
        clip: 0.2,
        value_coef: 0.0,
        entropy_coef: 0.0,
        barlow: None,
    };
    // ratio = e above the band with A > 0, and 1/e below it with A < 0.
    for (shift, sign) in [(1.0, 1.0), (-1.0, -1.0)] {
        let mb = shifted_batch(&model, &params, shift, sign, &mut rng);
        params.zero_grad();
        let mut tape = Tape::new();
        let vars = total_loss_tape(&mut tape, &model, &params, &mb, &w).unwrap();
        tape.backward(vars.total, &mut params).unwrap();
        for e in params.iter() {
            assert!(e.grad.iter().all(|&g| g == 0.0), "{} has a non-zero gradient", e.name);
        }
    }
    // Inside the band the same batch does move the policy.
    let mb = shifted_batch(&model, &params, 0.0, 1.0, &mut rng);
    params.zero_grad();
    let mut tape = Tape::new();
    let vars = total_loss_tape(&mut tape, &model, &params, &mb, &w).unwrap();
    tape.backward(vars.total, &mut params).unwrap();
    assert!(params.grad_norm() > 0.0);
}

proptest! {
    #[test]
    fn surrogate_is_flat_outside_band(lp_old in -5.0f64..5.0, gap in 0.25f64..3.0, adv in 0.01f64..10.0) {
        // d/dlp of the surrogate is zero once the ratio passes 1+eps with A > 0.
        let lp = lp_old + gap;
        let a = ppo_surrogate(lp, lp_old, adv, 0.2);
        let b = ppo_surrogate(lp + 1e-3, lp_old, adv, 0.2);
        prop_assert_eq!(a, b);
        prop_assert!((a - 1.2 * adv).abs() < 1e-12 * adv.max(1.0));
        let a = ppo_surrogate(lp_old - gap, lp_old, -adv, 0.2);
        let b = ppo_surrogate(lp_old - gap - 1e-3, lp_old, -adv, 0.2);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn surrogate_never_exceeds_unclipped(lp in -3.0f64..3.0, lp_old in -3.0f64..3.0, adv in -5.0f64..5.0) {
        let s = ppo_surrogate(lp, lp_old, adv, 0.2);
        prop_assert!(s <= (lp - lp_old).exp() * adv + 1e-12);
    }
}
