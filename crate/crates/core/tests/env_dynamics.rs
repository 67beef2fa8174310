use barlowwalk::env::{layout, observe, Env, EnvConfig, EnvContext, CRITIC_OBS_DIM, FULL_OBS_DIM};
use barlowwalk::randomization::{CommandRanges, RandomizationConfig, Range};
use barlowwalk::rewards::RewardConfig;
use barlowwalk::terrain::{TerrainConfig, TerrainWorld};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    env: EnvConfig,
    rewards: RewardConfig,
    randomization: RandomizationConfig,
    world: TerrainWorld,
}

impl Fixture {
    fn flat() -> Self {
        Fixture {
            env: EnvConfig {
                observation_noise: false,
                ..Default::default()
            },
            rewards: RewardConfig::default(),
            randomization: RandomizationConfig {
                enabled: false,
                push_enabled: false,
                ..Default::default()
            },
            world: TerrainWorld::flat(&TerrainConfig::default(), 0.0),
        }
    }

    fn ctx(&self) -> EnvContext<'_> {
        EnvContext {
            env: &self.env,
            rewards: &self.rewards,
            randomization: &self.randomization,
            world: &self.world,
        }
    }
}

fn still() -> CommandRanges {
    CommandRanges {
        lin_x: Range(0.0, 0.0),
        lin_y: Range(0.0, 0.0),
        yaw: Range(0.0, 0.0),
    }
}

#[test]
fn reset_gives_rest_state() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 1);
    let frame = env.reset(&ctx, 0, &still());
    assert_eq!(env.step_count, 0);
    assert_eq!(env.state.phase, 0.0);
    assert_eq!(frame.full.len(), FULL_OBS_DIM);
    assert_eq!(frame.policy_view().len(), 35);
    assert_eq!(&frame.policy_view()[0..3], &[0.0, 0.0, 0.0]);
    let g = &frame.full[layout::GRAVITY..layout::GRAVITY + 3];
    assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12 && (g[2] + 1.0).abs() < 1e-12);
    assert_eq!(&frame.full[layout::PHASE..], &[0.0, 1.0]);
}

#[test]
fn resets_with_same_seed_match() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut a = Env::new(2, 42);
    let mut b = Env::new(2, 42);
    let ranges = CommandRanges {
        lin_x: Range(-1.0, 1.0),
        lin_y: Range(-0.5, 0.5),
        yaw: Range(-1.0, 1.0),
    };
    assert_eq!(a.reset(&ctx, 0, &ranges), b.reset(&ctx, 0, &ranges));
    assert_eq!(a, b);
}

#[test]
fn zero_action_stands_on_flat_ground() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 3);
    env.reset(&ctx, 0, &still());
    let start = env.state.pos;
    for t in 0..50 {
        let out = env.step(&ctx, &[0.0; 8]).unwrap();
        assert!(!out.done, "fell at step {t}");
        for f in env.state.foot_force {
            assert!(f[2] >= 0.0);
        }
    }
    let dx = env.state.pos[0] - start[0];
    let dy = env.state.pos[1] - start[1];
    assert!((dx * dx + dy * dy).sqrt() < 0.05, "drift {dx} {dy}");
}

#[test]
fn timeout_at_thousand_steps() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 4);
    env.reset(&ctx, 0, &still());
    env.step_count = 998;
    let out = env.step(&ctx, &[0.0; 8]).unwrap();
    assert!(!out.done);
    let out = env.step(&ctx, &[0.0; 8]).unwrap();
    assert!(out.done);
    let ep = out.episode.unwrap();
    assert!(ep.timeout);
    assert_eq!(ep.length, 1000);
}

#[test]
fn phase_advances_by_gait_frequency() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 5);
    env.reset(&ctx, 0, &still());
    env.step(&ctx, &[0.0; 8]).unwrap();
    assert!((env.state.phase - 1.5 / 50.0).abs() < 1e-15);
}

#[test]
fn unloaded_feet_carry_no_force() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 6);
    env.reset(&ctx, 0, &still());
    env.state.pos[2] += 0.5;
    env.step(&ctx, &[0.0; 8]).unwrap();
    assert_eq!(env.state.foot_force, [[0.0; 3]; 2]);
}

#[test]
fn passive_base_gains_no_upward_velocity() {
    let mut fx = Fixture::flat();
    fx.env.torque_limit = [0.0; 4];
    let ctx = fx.ctx();
    let mut env = Env::new(0, 7);
    env.reset(&ctx, 0, &still());
    let z0 = env.state.pos[2];
    let mut peak = f64::NEG_INFINITY;
    for _ in 0..100 {
        env.step(&ctx, &[0.0; 8]).unwrap();
        peak = peak.max(env.state.pos[2]);
    }
    assert!(peak <= z0, "base rose from {z0} to {peak}");
    assert!(env.state.lin_vel[2].abs() < 1e-3);
}

#[test]
fn non_finite_action_is_rejected() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 8);
    env.reset(&ctx, 0, &still());
    let mut a = [0.0; 8];
    a[3] = f64::NAN;
    assert!(env.step(&ctx, &a).is_err());
    assert!(env.step(&ctx, &[0.0; 7]).is_err());
}

#[test]
fn observation_noise_statistics() {
    let cfg = EnvConfig::default();
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 9);
    env.reset(&ctx, 0, &still());
    env.command = [0.3, -0.1, 0.2];
    let clean = env.observe_noiseless(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 100_000;
    let mut qd_sum = 0.0;
    let mut qd_max = 0.0f64;
    for _ in 0..n {
        let f = observe(&cfg, &env.state, &env.command, &env.actions[0], true, &mut rng);
        for i in layout::JOINT_VEL..layout::ACTION {
            let e = f.full[i] - clean.full[i];
            qd_sum += e;
            qd_max = qd_max.max(e.abs());
        }
        assert_eq!(&f.full[layout::COMMAND..layout::JOINT_POS], &clean.full[layout::COMMAND..layout::JOINT_POS]);
        assert_eq!(&f.full[layout::PHASE..], &clean.full[layout::PHASE..]);
        let ang = f.full[layout::ANG_VEL] - clean.full[layout::ANG_VEL];
        assert!(ang.abs() <= 0.2);
    }
    assert!(qd_max <= 1.5);
    assert!(qd_max > 1.45);
    assert!((qd_sum / (8 * n) as f64).abs() < 0.02);
}

#[test]
fn critic_observation_layout() {
    let fx = Fixture::flat();
    let ctx = fx.ctx();
    let mut env = Env::new(0, 11);
    env.reset(&ctx, 0, &still());
    let c = env.critic_observation(&ctx);
    assert_eq!(c.len(), CRITIC_OBS_DIM);
    assert_eq!(c.len(), 225);
    assert_eq!(&c[..38], &env.observe_noiseless(&fx.env).full[..]);
    let scan = &c[38..];
    assert_eq!(scan.len(), 187);
    assert!(scan.iter().all(|&h| (h - scan[0]).abs() < 1e-12));
}

#[test]
fn noisy_trajectories_are_seed_deterministic() {
    let mut fx = Fixture::flat();
    fx.env.observation_noise = true;
    fx.randomization = RandomizationConfig::default();
    fx.world = TerrainWorld::generate(&TerrainConfig::default(), 5).unwrap();
    let ctx = fx.ctx();
    let run = || {
        let mut env = Env::new(3, 99);
        let mut frames = vec![env.reset(&ctx, 2, &still())];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..60 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = env.step(&ctx, &a).unwrap();
            if out.done {
                break;
            }
            frames.push(env.observe(&fx.env));
        }
        (env, frames)
    };
    let (a, fa) = run();
    let (b, fb) = run();
    assert_eq!(fa, fb);
    assert_eq!(a, b);
}
