//! One pinned value per reward row, derived by hand from the term formula and
//! its default weight.

use barlowwalk::rewards::{compute_rewards, total_reward, FootState, RewardConfig, RewardInputs, NUM_TERMS, TERM_NAMES};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn quiet() -> RewardInputs {
    RewardInputs {
        actions: [vec![0.0; 8], vec![0.0; 8], vec![0.0; 8]],
        torques: vec![0.0; 8],
        joint_vel: vec![0.0; 8],
        joint_acc: vec![0.0; 8],
        feet: vec![FootState::default(); 2],
        gravity: [0.0, 0.0, -1.0],
        base_height: 0.8,
        ..Default::default()
    }
}

fn weighted(x: &RewardInputs, term: &str) -> f64 {
    compute_rewards(&RewardConfig::default(), x)
        .weighted_value(term)
        .expect("known term")
}

fn assert_pinned(x: &RewardInputs, term: &str, expected: f64) {
    let got = weighted(x, term);
    assert!(
        (got - expected).abs() <= TOL,
        "{term}: got {got}, expected {expected}"
    );
}

#[test]
fn lin_vel_tracking_perfect() {
    let mut x = quiet();
    x.command = [0.5, -0.2, 0.0];
    x.lin_vel = [0.5, -0.2, 0.3];
    assert_pinned(&x, "lin_vel_tracking", 5.0);
}

#[test]
fn lin_vel_tracking_quarter_error() {
    let mut x = quiet();
    x.command = [0.5, 0.0, 0.0];
    // Squared error 0.25 equals sigma, so the kernel is exp(-1).
    assert_pinned(&x, "lin_vel_tracking", 1.839_397_205_857_211_6);
}

#[test]
fn ang_vel_tracking_half_rad() {
    let mut x = quiet();
    x.command = [0.0, 0.0, 0.5];
    assert_pinned(&x, "ang_vel_tracking", 0.919_698_602_928_605_8);
    x.ang_vel = [0.0, 0.0, 0.5];
    assert_pinned(&x, "ang_vel_tracking", 2.5);
}

#[test]
fn action_smoothness_unit_step() {
    let mut x = quiet();
    x.actions[0] = vec![1.0; 8];
    // (1 - 0 + 0)^2 per joint, eight joints, weight -0.01.
    assert_pinned(&x, "action_smoothness", -0.08);
}

#[test]
fn ang_vel_xy_roll_pitch() {
    let mut x = quiet();
    x.ang_vel = [1.0, 2.0, 7.0];
    assert_pinned(&x, "ang_vel_xy", -0.25);
}

#[test]
fn base_height_ten_cm_low() {
    let mut x = quiet();
    x.base_height = 0.7;
    assert_pinned(&x, "base_height", -0.1);
}

#[test]
fn orientation_tilt() {
    let mut x = quiet();
    x.gravity = [0.1, 0.2, -0.974_679_434_480_896_4];
    assert_pinned(&x, "orientation", -0.05);
}

#[test]
fn feet_clearance_low_moving_foot() {
    let mut x = quiet();
    x.feet[0] = FootState {
        height: 0.05,
        speed_xy: 1.0,
        ..Default::default()
    };
    x.feet[1] = FootState {
        height: 0.1,
        speed_xy: 3.0,
        ..Default::default()
    };
    assert_pinned(&x, "feet_clearance", 0.0025);
}

#[test]
fn torques_ten_each() {
    let mut x = quiet();
    x.torques = vec![10.0; 8];
    assert_pinned(&x, "torques", -0.064);
}

#[test]
fn powers_absolute_value() {
    let mut x = quiet();
    x.torques = vec![10.0; 8];
    x.joint_vel = vec![-2.0; 8];
    assert_pinned(&x, "powers", -0.32);
}

#[test]
fn dof_vel_two_rad_per_s() {
    let mut x = quiet();
    x.joint_vel = vec![2.0; 8];
    assert_pinned(&x, "dof_vel", -0.032);
}

#[test]
fn dof_acc_hundred() {
    let mut x = quiet();
    x.joint_acc = vec![100.0; 8];
    assert_pinned(&x, "dof_acc", -0.02);
}

#[test]
fn feet_swing_height_only_unloaded_feet() {
    let mut x = quiet();
    x.feet[0] = FootState {
        height: 0.3,
        force_norm: 0.0,
        ..Default::default()
    };
    x.feet[1] = FootState {
        height: 0.5,
        force_norm: 100.0,
        ..Default::default()
    };
    assert_pinned(&x, "feet_swing_height", -0.8);
}

#[test]
fn contact_matches_phase() {
    let mut x = quiet();
    x.feet[0] = FootState {
        phase: 0.2,
        force_z: 50.0,
        ..Default::default()
    };
    x.feet[1] = FootState {
        phase: 0.7,
        force_z: 50.0,
        ..Default::default()
    };
    assert_pinned(&x, "contact", 0.18);
}

#[test]
fn base_acc_three_four_five() {
    let mut x = quiet();
    x.base_acc = [3.0, 4.0, 0.0];
    assert_pinned(&x, "base_acc", 0.2 * 0.006_737_946_999_085_467);
    x.base_acc = [0.0; 3];
    assert_pinned(&x, "base_acc", 0.2);
}

#[test]
fn feet_contact_forces_excess_only() {
    let mut x = quiet();
    x.feet[0].force_norm = 400.0;
    x.feet[1].force_norm = 100.0;
    assert_pinned(&x, "feet_contact_forces", -0.1);
}

#[test]
fn feet_air_time_on_touchdown() {
    let mut x = quiet();
    x.command = [0.5, 0.0, 0.0];
    x.feet[0] = FootState {
        air_time: 0.8,
        first_contact: true,
        ..Default::default()
    };
    x.feet[1] = FootState {
        air_time: 2.0,
        first_contact: false,
        ..Default::default()
    };
    assert_pinned(&x, "feet_air_time", 0.3);
    x.command = [0.0; 3];
    assert_pinned(&x, "feet_air_time", 0.0);
}

#[test]
fn feet_contact_number_offset() {
    let mut x = quiet();
    x.feet[0] = FootState {
        phase: 0.2,
        force_z: 50.0,
        ..Default::default()
    };
    x.feet[1] = FootState {
        phase: 0.7,
        force_z: 50.0,
        ..Default::default()
    };
    // (1 - 0.3)/2 + (0 - 0.3)/2 = 0.2, weight 1.2.
    assert_pinned(&x, "feet_contact_number", 0.24);
}

#[test]
fn every_term_has_a_pinning_test() {
    assert_eq!(TERM_NAMES.len(), NUM_TERMS);
    let cfg = RewardConfig::default();
    let w = cfg.weights.as_array();
    let expected = [
        5.0, 2.5, -0.01, -0.05, -10.0, -1.0, 1.0, -8e-5, -2e-3, -1e-3, -2.5e-7, -20.0, 0.18, 0.2, -0.002, 1.0, 1.2,
    ];
    assert_eq!(w, expected);
}

fn arb_inputs() -> impl Strategy<Value = RewardInputs> {
    let v3 = || prop::array::uniform3(-3.0f64..3.0);
    let v8 = || prop::collection::vec(-50.0f64..50.0, 8);
    let foot = (0.0f64..0.5, 0.0f64..3.0, 0.0f64..600.0, 0.0f64..1.0, 0.0f64..2.0, any::<bool>()).prop_map(
        |(height, speed_xy, force, phase, air_time, first_contact)| FootState {
            height,
            speed_xy,
            force_z: force,
            force_norm: force,
            phase,
            air_time,
            first_contact,
        },
    );
    (
        (v3(), v3(), v3(), v3(), 0.3f64..1.2, v3()),
        (v8(), v8(), v8(), v8(), v8(), v8()),
        prop::collection::vec(foot, 2),
    )
        .prop_map(|((lin_vel, ang_vel, gravity, command, base_height, base_acc), (a0, a1, a2, t, qd, qdd), feet)| {
            RewardInputs {
                lin_vel,
                ang_vel,
                gravity,
                command,
                base_height,
                base_acc,
                actions: [a0, a1, a2],
                torques: t,
                joint_vel: qd,
                joint_acc: qdd,
                feet,
            }
        })
}

proptest! {
    #[test]
    fn total_is_weighted_sum(x in arb_inputs()) {
        let cfg = RewardConfig::default();
        let t = compute_rewards(&cfg, &x);
        let w = cfg.weights.as_array();
        let manual: f64 = (0..NUM_TERMS).map(|i| w[i] * t.values[i]).sum();
        prop_assert!((t.weighted_total - manual).abs() <= 1e-10 * manual.abs().max(1.0));
        prop_assert_eq!(total_reward(&t), t.weighted_total);
    }
}
