use barlowwalk::agent::{audit_dimensions, ActorCritic, ArchDims, Variant};
use barlowwalk::config::TrainConfig;
use barlowwalk::encoders::{HISTORY_LEN, LATENT_DIM, MLP_ENC_DIM, PROJECTION_DIM, PROPRIO_DIM, SLICE_DIM};
use barlowwalk::env::{CRITIC_OBS_DIM, FULL_OBS_DIM};
use barlowwalk::terrain::SCAN_POINTS;
use barlowwalk::trainer::Trainer;
use rand::SeedableRng;

#[test]
fn published_widths() {
    audit_dimensions().unwrap();
    assert_eq!(FULL_OBS_DIM, 38);
    assert_eq!(PROPRIO_DIM, 35);
    assert_eq!(SLICE_DIM, 175);
    assert_eq!(MLP_ENC_DIM, 64);
    assert_eq!(LATENT_DIM, 16);
    assert_eq!(PROJECTION_DIM, 64);
    assert_eq!(HISTORY_LEN, 10);
    assert_eq!(CRITIC_OBS_DIM, 225);
    assert_eq!(SCAN_POINTS, 225 - 38);
    assert_eq!(SCAN_POINTS, 187);
}

#[test]
fn parameter_shapes() {
    let m = ActorCritic::new(ArchDims::default(), Variant::BarlowWalk).unwrap();
    let p = m.init_params(1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
    let expect: &[(&str, &[usize])] = &[
        ("mlp_enc.l0.weight", &[128, 175]),
        ("mlp_enc.l1.weight", &[64, 128]),
        ("latent_enc.l0.weight", &[32, 64]),
        ("latent_enc.l1.weight", &[16, 32]),
        ("barlow_enc.l0.weight", &[16, 16]),
        ("barlow_enc.l1.weight", &[64, 16]),
        ("actor.gru.w_ih", &[192, 51]),
        ("actor.gru.w_hh", &[192, 64]),
        ("actor.head.l1.weight", &[8, 32]),
        ("actor.log_std", &[8]),
        ("critic.gru.w_ih", &[192, 225]),
        ("critic.head.l1.weight", &[1, 32]),
    ];
    for (name, shape) in expect {
        assert_eq!(p.get(name).unwrap_or_else(|| panic!("{name}")).shape, *shape, "{name}");
    }

    let b = ActorCritic::new(ArchDims::default(), Variant::Baseline2).unwrap();
    let p = b.init_params(1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(p.get("actor.gru.w_ih").unwrap().shape, vec![192, 35 + 64]);
    assert_eq!(p.get("critic.gru.w_ih").unwrap().shape, vec![192, 38]);
}

#[test]
fn rollout_rows_have_network_widths() {
    let mut cfg = TrainConfig::default();
    cfg.trainer.num_envs = 4;
    cfg.ppo.num_mini_batches = 2;
    cfg.trainer.workers = 1;
    let mut t = Trainer::new(cfg).unwrap();
    assert_eq!(t.frames[0].full.len(), 38);
    assert_eq!(t.frames[0].policy_view().len(), 35);
    let (b, _) = t.collect_rollout().unwrap();
    assert_eq!(b.policy_obs.ncols(), 35);
    assert_eq!(b.old_slices.ncols(), 175);
    assert_eq!(b.new_slices.ncols(), 175);
    assert_eq!(b.critic_obs.ncols(), 225);
    assert_eq!(b.actions.ncols(), 8);
    assert_eq!(b.actor_h.ncols(), 64);
    assert_eq!(b.len(), 4 * 24);
}
