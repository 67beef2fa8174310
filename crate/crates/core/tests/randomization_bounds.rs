use barlowwalk::randomization::{push_delta, push_due, sample_randomization, RandomizationConfig, RandomizationDraw, Range};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 100_000;

type Getter = fn(&RandomizationDraw) -> f64;

fn rows() -> Vec<(&'static str, Range, Getter)> {
    vec![
        ("link_mass_scale", Range(0.8, 1.2), |d| d.link_mass_scale),
        ("payload_kg", Range(-1.0, 3.0), |d| d.payload_kg),
        ("com_offset_x_cm", Range(-7.5, 7.5), |d| d.com_offset_cm[0]),
        ("com_offset_y_cm", Range(-5.0, 5.0), |d| d.com_offset_cm[1]),
        ("com_offset_z_cm", Range(-5.0, 5.0), |d| d.com_offset_cm[2]),
        ("friction", Range(0.2, 1.25), |d| d.friction),
        ("restitution", Range(0.0, 1.0), |d| d.restitution),
        ("kp_scale", Range(0.9, 1.1), |d| d.kp_scale),
        ("kd_scale", Range(0.9, 1.1), |d| d.kd_scale),
        ("motor_strength_scale", Range(0.8, 1.2), |d| d.motor_strength_scale),
    ]
}

#[test]
fn defaults_match_the_interval_table() {
    let c = RandomizationConfig::default();
    let configured = [
        c.link_mass_scale,
        c.payload_kg,
        c.com_offset_x_cm,
        c.com_offset_y_cm,
        c.com_offset_z_cm,
        c.friction,
        c.restitution,
        c.kp_scale,
        c.kd_scale,
        c.motor_strength_scale,
    ];
    for ((name, range, _), got) in rows().into_iter().zip(configured) {
        assert_eq!(range, got, "{name}");
    }
}

#[test]
fn hundred_thousand_draws_fill_each_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<RandomizationDraw> = (0..DRAWS).map(|_| sample_randomization(&mut rng)).collect();
    for (name, Range(lo, hi), get) in rows() {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for d in &draws {
            let v = get(d);
            assert!(v >= lo && v <= hi, "{name}: {v} outside [{lo}, {hi}]");
            min = min.min(v);
            max = max.max(v);
        }
        let slack = 0.02 * (hi - lo);
        assert!(min - lo <= slack, "{name}: min {min} too far from {lo}");
        assert!(hi - max <= slack, "{name}: max {max} too far from {hi}");
        let mean = draws.iter().map(get).sum::<f64>() / DRAWS as f64;
        assert!((mean - 0.5 * (lo + hi)).abs() < 0.01 * (hi - lo), "{name}: mean {mean}");
    }
}

#[test]
fn fixed_seed_gives_identical_draw() {
    let a = sample_randomization(&mut ChaCha8Rng::seed_from_u64(9));
    let b = sample_randomization(&mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn pushes_bounded_and_periodic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let [dx, dy] = push_delta(0.5, &mut rng);
        assert!(dx.abs() <= 0.5 && dy.abs() <= 0.5);
    }
    // Seven seconds at 50 Hz.
    let interval = 350;
    let due: Vec<u64> = (0..1200).filter(|&s| push_due(s, interval)).collect();
    assert_eq!(due, vec![350, 700, 1050]);
}
