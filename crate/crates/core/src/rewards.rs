//! The seventeen shaping terms, their weights and the grouped total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_TERMS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Tracking,
    Action,
    Constraint,
}

/// Term names in table order; also the metrics-stream suffixes.
pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "lin_vel_tracking",
    "ang_vel_tracking",
    "action_smoothness",
    "ang_vel_xy",
    "base_height",
    "orientation",
    "feet_clearance",
    "torques",
    "powers",
    "dof_vel",
    "dof_acc",
    "feet_swing_height",
    "contact",
    "base_acc",
    "feet_contact_forces",
    "feet_air_time",
    "feet_contact_number",
];

pub fn term_group(index: usize) -> Group {
    match index {
        0..=6 => Group::Tracking,
        7..=11 => Group::Action,
        _ => Group::Constraint,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub lin_vel_tracking: f64,
    pub ang_vel_tracking: f64,
    pub action_smoothness: f64,
    pub ang_vel_xy: f64,
    pub base_height: f64,
    pub orientation: f64,
    pub feet_clearance: f64,
    pub torques: f64,
    pub powers: f64,
    pub dof_vel: f64,
    pub dof_acc: f64,
    pub feet_swing_height: f64,
    pub contact: f64,
    pub base_acc: f64,
    pub feet_contact_forces: f64,
    pub feet_air_time: f64,
    pub feet_contact_number: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lin_vel_tracking: 5.0,
            ang_vel_tracking: 2.5,
            action_smoothness: -0.01,
            ang_vel_xy: -0.05,
            base_height: -10.0,
            orientation: -1.0,
            feet_clearance: 1.0,
            torques: -8e-5,
            powers: -2e-3,
            dof_vel: -1e-3,
            dof_acc: -2.5e-7,
            feet_swing_height: -20.0,
            contact: 0.18,
            base_acc: 0.2,
            feet_contact_forces: -0.002,
            feet_air_time: 1.0,
            feet_contact_number: 1.2,
        }
    }
}

impl RewardWeights {
    pub fn as_array(&self) -> [f64; NUM_TERMS] {
        [
            self.lin_vel_tracking,
            self.ang_vel_tracking,
            self.action_smoothness,
            self.ang_vel_xy,
            self.base_height,
            self.orientation,
            self.feet_clearance,
            self.torques,
            self.powers,
            self.dof_vel,
            self.dof_acc,
            self.feet_swing_height,
            self.contact,
            self.base_acc,
            self.feet_contact_forces,
            self.feet_air_time,
            self.feet_contact_number,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub tracking_enabled: bool,
    pub action_enabled: bool,
    pub constraint_enabled: bool,
    pub tracking_sigma: f64,
    pub base_height_target: f64,
    pub foot_height_target: f64,
    pub swing_height_target: f64,
    pub stance_threshold: f64,
    pub contact_force_threshold: f64,
    pub contact_number_force_threshold: f64,
    pub max_contact_force: f64,
    pub air_time_offset: f64,
    pub air_time_command_threshold: f64,
    pub contact_number_offset: f64,
    pub literal_smoothness: bool,
    pub literal_xor: bool,
    pub literal_contact_force: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            weights: RewardWeights::default(),
            tracking_enabled: true,
            action_enabled: true,
            constraint_enabled: true,
            tracking_sigma: 0.25,
            base_height_target: 0.8,
            foot_height_target: 0.1,
            swing_height_target: 0.1,
            stance_threshold: 0.55,
            contact_force_threshold: 1.0,
            contact_number_force_threshold: 5.0,
            max_contact_force: 350.0,
            air_time_offset: 0.5,
            air_time_command_threshold: 0.1,
            contact_number_offset: 0.3,
            literal_smoothness: false,
            literal_xor: false,
            literal_contact_force: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tracking_sigma > 0.0) {
            return Err(Error::Config(format!(
                "rewards.tracking_sigma must lie in (0, inf), got {}",
                self.tracking_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.stance_threshold) {
            return Err(Error::Config(format!(
                "rewards.stance_threshold must lie in [0, 1], got {}",
                self.stance_threshold
            )));
        }
        if self.weights.as_array().iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("rewards.weights must be finite".into()));
        }
        Ok(())
    }

    fn group_enabled(&self, g: Group) -> bool {
        match g {
            Group::Tracking => self.tracking_enabled,
            Group::Action => self.action_enabled,
            Group::Constraint => self.constraint_enabled,
        }
    }
}

/// Per-foot quantities for one control step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FootState {
    /// Sole height above the terrain below it (m).
    pub height: f64,
    /// Horizontal speed of the foot (m/s).
    pub speed_xy: f64,
    /// Vertical and total contact force (N).
    pub force_z: f64,
    pub force_norm: f64,
    /// Phase of this foot in `[0, 1)`.
    pub phase: f64,
    /// Time spent airborne before touchdown (s), valid when `first_contact`.
    pub air_time: f64,
    pub first_contact: bool,
}

/// Everything the terms read. Velocities are in the body frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardInputs {
    pub lin_vel: [f64; 3],
    pub ang_vel: [f64; 3],
    pub gravity: [f64; 3],
    pub command: [f64; 3],
    pub base_height: f64,
    pub base_acc: [f64; 3],
    pub actions: [Vec<f64>; 3],
    pub torques: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub joint_acc: Vec<f64>,
    pub feet: Vec<FootState>,
}

/// Unweighted term values in table order plus the weighted sums.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub values: [f64; NUM_TERMS],
    pub weighted: [f64; NUM_TERMS],
    pub tracking: f64,
    pub action: f64,
    pub constraint: f64,
    pub weighted_total: f64,
}

impl RewardTerms {
    pub fn value(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn weighted_value(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.weighted[i])
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Whether the phase prediction and force contact count as matching.
fn stance_match(literal_xor: bool, stance: bool, contact: bool) -> bool {
    if literal_xor {
        stance ^ contact
    } else {
        stance == contact
    }
}

pub fn compute_rewards(cfg: &RewardConfig, x: &RewardInputs) -> RewardTerms {
    let mut v = [0.0; NUM_TERMS];
    let sigma = cfg.tracking_sigma;

    let dvx = x.command[0] - x.lin_vel[0];
    let dvy = x.command[1] - x.lin_vel[1];
    v[0] = (-(dvx * dvx + dvy * dvy) / sigma).exp();
    let dw = x.command[2] - x.ang_vel[2];
    v[1] = (-(dw * dw) / sigma).exp();

    let [a0, a1, a2] = &x.actions;
    v[2] = a0
        .iter()
        .zip(a1)
        .zip(a2)
        .map(|((&t, &t1), &t2)| {
            let d = if cfg.literal_smoothness {
                t - 2.0 * t1 - t2
            } else {
                t - 2.0 * t1 + t2
            };
            d * d
        })
        .sum();
    v[3] = x.ang_vel[0] * x.ang_vel[0] + x.ang_vel[1] * x.ang_vel[1];
    let dh = cfg.base_height_target - x.base_height;
    v[4] = dh * dh;
    v[5] = x.gravity[0] * x.gravity[0] + x.gravity[1] * x.gravity[1];
    v[6] = x
        .feet
        .iter()
        .map(|f| (cfg.foot_height_target - f.height).powi(2) * f.speed_xy)
        .sum();

    v[7] = sq_norm(&x.torques);
    v[8] = x.torques.iter().zip(&x.joint_vel).map(|(t, q)| (t * q).abs()).sum();
    v[9] = sq_norm(&x.joint_vel);
    v[10] = sq_norm(&x.joint_acc);
    v[11] = x
        .feet
        .iter()
        .filter(|f| f.force_norm <= cfg.contact_force_threshold)
        .map(|f| (f.height - cfg.swing_height_target).powi(2))
        .sum();

    v[12] = x
        .feet
        .iter()
        .map(|f| {
            let stance = f.phase < cfg.stance_threshold;
            let contact = f.force_z > cfg.contact_force_threshold;
            indicator(stance_match(cfg.literal_xor, stance, contact))
        })
        .sum();
    v[13] = (-sq_norm(&x.base_acc).sqrt()).exp();
    v[14] = x
        .feet
        .iter()
        .map(|f| {
            let over = if cfg.literal_contact_force {
                cfg.max_contact_force - f.force_norm
            } else {
                f.force_norm - cfg.max_contact_force
            };
            over.max(0.0) * indicator(f.force_norm > cfg.contact_force_threshold)
        })
        .sum();
    let moving = (x.command[0] * x.command[0] + x.command[1] * x.command[1]).sqrt()
        > cfg.air_time_command_threshold;
    v[15] = x
        .feet
        .iter()
        .map(|f| (f.air_time - cfg.air_time_offset) * indicator(f.first_contact) * indicator(moving))
        .sum();
    v[16] = x
        .feet
        .iter()
        .map(|f| {
            let stance = f.phase < cfg.stance_threshold;
            let contact = f.force_z > cfg.contact_number_force_threshold;
            (indicator(stance_match(cfg.literal_xor, stance, contact)) - cfg.contact_number_offset) / 2.0
        })
        .sum();

    weigh(cfg, v)
}

/// Applies weights and group switches to raw term values.
pub fn weigh(cfg: &RewardConfig, values: [f64; NUM_TERMS]) -> RewardTerms {
    let w = cfg.weights.as_array();
    let mut weighted = [0.0; NUM_TERMS];
    let (mut tracking, mut action, mut constraint) = (0.0, 0.0, 0.0);
    for i in 0..NUM_TERMS {
        let g = term_group(i);
        if !cfg.group_enabled(g) {
            continue;
        }
        weighted[i] = w[i] * values[i];
        match g {
            Group::Tracking => tracking += weighted[i],
            Group::Action => action += weighted[i],
            Group::Constraint => constraint += weighted[i],
        }
    }
    RewardTerms {
        values,
        weighted,
        tracking,
        action,
        constraint,
        weighted_total: tracking + action + constraint,
    }
}

/// Sum of the three weighted groups.
pub fn total_reward(terms: &RewardTerms) -> f64 {
    terms.tracking + terms.action + terms.constraint
}
