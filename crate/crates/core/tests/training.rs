use std::time::Instant;

use barlowwalk::agent::Variant;
use barlowwalk::config::TrainConfig;
use barlowwalk::nn::{ParamSet, Tape};
use barlowwalk::ppo::{total_loss_tape, Learner, LossWeights, BarlowConfig};
use barlowwalk::trainer::{checkpoint_name, read_metrics, train, Checkpoint, RunMetrics, Trainer, CONFIG_SNAPSHOT, METRICS_FILE};

fn small(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.trainer.num_envs = 4;
    cfg.trainer.iterations = 4;
    cfg.trainer.seed = seed;
    cfg.trainer.workers = 1;
    cfg.trainer.checkpoint_interval = 2;
    cfg.ppo.num_mini_batches = 2;
    cfg.ppo.num_epochs = 2;
    cfg.env.observation_noise = false;
    cfg
}

fn without_clock(mut m: RunMetrics) -> RunMetrics {
    m.wall_clock = 0.0;
    m
}

fn run(trainer: &mut Trainer, iterations: usize) -> Vec<RunMetrics> {
    let t0 = Instant::now();
    (0..iterations).map(|_| without_clock(trainer.iterate(t0).unwrap())).collect()
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.iter().flat_map(|e| e.values.iter().map(|v| v.to_bits())).collect()
}

#[test]
fn repeated_single_worker_runs_are_bit_identical() {
    let mut a = Trainer::new(small(7)).unwrap();
    let mut b = Trainer::new(small(7)).unwrap();
    assert_eq!(run(&mut a, 3), run(&mut b, 3));
    assert_eq!(bits(&a.learner.params), bits(&b.learner.params));
    assert_eq!(a.envs, b.envs);
    let mut c = Trainer::new(small(8)).unwrap();
    run(&mut c, 1);
    assert_ne!(bits(&a.learner.params), bits(&c.learner.params));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(small(3)).unwrap();
    let reference = run(&mut full, 4);

    let mut first = Trainer::new(small(3)).unwrap();
    let mut resumed_metrics = run(&mut first, 2);
    let ckpt = dir.path().join("mid.bwlk");
    first.save_checkpoint(&ckpt, 0.0).unwrap();
    drop(first);
    let mut second = Trainer::from_checkpoint(&ckpt).unwrap();
    assert_eq!(second.iteration, 2);
    resumed_metrics.extend(run(&mut second, 2));

    assert_eq!(reference, resumed_metrics);
    assert_eq!(bits(&full.learner.params), bits(&second.learner.params));
    assert_eq!(bits(&full.learner.adam.m), bits(&second.learner.adam.m));
    assert_eq!(full.learner.lr, second.learner.lr);
}

#[test]
fn train_writes_snapshot_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(1);
    cfg.trainer.iterations = 3;
    let out = train(Trainer::new(cfg.clone()).unwrap(), dir.path(), None).unwrap();
    assert_eq!(out.iterations, 3);
    assert!(!out.interrupted);
    assert!(dir.path().join(checkpoint_name(2)).exists());
    assert_eq!(out.final_checkpoint, dir.path().join(checkpoint_name(3)));
    let metrics = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.iter().map(|m| m.iteration).collect::<Vec<_>>(), vec![1, 2, 3]);
    for m in &metrics {
        assert!(m.lr >= 1e-5 && m.lr <= 1e-2);
        assert!(m.loss_bt > 0.0);
        assert_eq!(m.reward_terms.len(), 17);
        assert!(m.terrain_levels.contains_key("rough"));
    }
    let snapshot = std::fs::read_to_string(dir.path().join(CONFIG_SNAPSHOT)).unwrap();
    assert_eq!(TrainConfig::from_toml_str(&snapshot, &[]).unwrap(), cfg);

    let ck = Checkpoint::load(&out.final_checkpoint).unwrap();
    assert_eq!(ck.iteration(), 3);
    assert_eq!(ck.config(), &cfg);
}

#[test]
fn stop_flag_checkpoints_before_exit() {
    let dir = tempfile::tempdir().unwrap();
    let stop = std::sync::atomic::AtomicBool::new(true);
    let out = train(Trainer::new(small(2)).unwrap(), dir.path(), Some(&stop)).unwrap();
    assert!(out.interrupted);
    assert_eq!(out.iterations, 0);
    assert!(out.final_checkpoint.exists());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::new(small(1)).unwrap();
    let p = dir.path().join("c.bwlk");
    t.save_checkpoint(&p, 0.0).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[0] = b'X';
    std::fs::write(&p, &bytes).unwrap();
    assert!(Checkpoint::load(&p).is_err());
    std::fs::write(&p, b"BWLK").unwrap();
    assert!(Checkpoint::load(&p).is_err());
}

#[test]
fn hidden_state_is_zeroed_after_termination() {
    let mut cfg = small(5);
    cfg.trainer.num_envs = 8;
    let mut t = Trainer::new(cfg).unwrap();
    let mut seen_done = 0;
    for _ in 0..3 {
        let (batch, _) = t.collect_rollout().unwrap();
        for step in 0..batch.horizon {
            for e in 0..batch.num_envs {
                if !batch.dones[batch.row(step, e)] {
                    continue;
                }
                seen_done += 1;
                let next = if step + 1 < batch.horizon {
                    batch.actor_h.row(batch.row(step + 1, e)).to_owned()
                } else {
                    t.actor_h.row(e).to_owned()
                };
                assert!(next.iter().all(|&v| v == 0.0));
                if step + 1 < batch.horizon {
                    assert!(batch.critic_h.row(batch.row(step + 1, e)).iter().all(|&v| v == 0.0));
                }
            }
        }
    }
    assert!(seen_done > 0, "random policy should fall at least once in 72 steps");
}

#[test]
fn rollout_storage_is_fixed_size() {
    let mut t = Trainer::new(small(6)).unwrap();
    let (first, _) = t.collect_rollout().unwrap();
    let per_step = 35 + 175 + 175 + 225 + 8 + 8 + 1 + 1 + 1 + 1 + 64 + 64;
    assert_eq!(first.footprint(), 4 * 24 * per_step + 8 + 4);
    for _ in 0..3 {
        let (b, _) = t.collect_rollout().unwrap();
        assert_eq!(b.footprint(), first.footprint());
    }
}

#[test]
fn barlow_disabled_reports_zero_loss() {
    let mut cfg = small(4);
    cfg.barlow.enabled = false;
    let mut t = Trainer::new(cfg).unwrap();
    let m = run(&mut t, 1).remove(0);
    assert_eq!(m.loss_bt, 0.0);
    assert_eq!(m.c_diag_mean, 0.0);
}

#[test]
fn baseline_variant_trains_without_perception() {
    let mut cfg = small(4);
    cfg.trainer.baseline2 = true;
    assert_eq!(cfg.variant(), Variant::Baseline2);
    assert!(!cfg.barlow_active());
    let mut t = Trainer::new(cfg).unwrap();
    let (batch, _) = t.collect_rollout().unwrap();
    assert_eq!(batch.critic_obs.ncols(), 38);
    assert_eq!(t.learner.model.actor_gru.input_dim, 35 + 64);
    let m = run(&mut t, 1).remove(0);
    assert_eq!(m.loss_bt, 0.0);
}

/// Which parameters receive a non-zero gradient from the full loss on one
/// real minibatch.
fn gradient_flow(cfg: TrainConfig) -> Vec<(String, bool)> {
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let (batch, _) = t.collect_rollout().unwrap();
    let (adv, ret) = batch.advantages(0.99, 0.95);
    let mb = Learner::minibatches(&batch, 1, &adv, &ret).unwrap().remove(0);
    let barlow = BarlowConfig {
        enabled: cfg.barlow_active(),
        ..cfg.barlow.clone()
    };
    let w = LossWeights::new(&cfg.ppo, &barlow);
    let mut params = t.learner.params.clone();
    params.zero_grad();
    let mut tape = Tape::new();
    let vars = total_loss_tape(&mut tape, &t.learner.model, &params, &mb, &w).unwrap();
    tape.backward(vars.total, &mut params).unwrap();
    params
        .iter()
        .map(|e| (e.name.clone(), e.grad.iter().any(|&g| g != 0.0)))
        .collect()
}

#[test]
fn gradient_flow_audit() {
    for (name, live) in gradient_flow(small(9)) {
        assert!(live, "{name} receives no gradient with the Barlow loss on");
    }

    let mut off = small(9);
    off.barlow.enabled = false;
    for (name, live) in gradient_flow(off) {
        let expected = !name.starts_with("barlow_enc.");
        assert_eq!(live, expected, "{name} with the Barlow loss off");
    }

    let mut base = small(9);
    base.trainer.baseline2 = true;
    for (name, live) in gradient_flow(base) {
        let unused = name.starts_with("latent_enc.") || name.starts_with("barlow_enc.");
        assert_eq!(live, !unused, "{name} in the baseline");
    }
}
