//! Surrogate biped: a rigid 6-DoF base carried by two massless legs whose
//! joints follow PD servo dynamics, touching a heightfield through
//! spring-damper contact points on each foot plate.
//!
//! Joint order per leg is `[abduction, hip pitch, knee, ankle]`, left leg
//! first. Quaternions are `[w, x, y, z]`; base angular velocity is kept in
//! the body frame, linear velocity in the world frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::HistoryBuffer;
use crate::error::{Error, Result};
use crate::randomization::{
    push_delta, push_due, sample_randomization_with, CommandRanges, EpisodeResult,
    RandomizationConfig, RandomizationDraw, Range,
};
use crate::rewards::{compute_rewards, FootState, RewardConfig, RewardInputs, RewardTerms, NUM_TERMS};
use crate::terrain::{ScanPose, TerrainWorld, SCAN_POINTS};

pub const NUM_JOINTS: usize = 8;
pub const NUM_FEET: usize = 2;
pub const FULL_OBS_DIM: usize = 38;
pub const CRITIC_OBS_DIM: usize = FULL_OBS_DIM + SCAN_POINTS;
const GRAVITY: f64 = 9.81;

/// Offsets of each observation block inside the 38-vector.
pub mod layout {
    pub const LIN_VEL: usize = 0;
    pub const ANG_VEL: usize = 3;
    pub const GRAVITY: usize = 6;
    pub const COMMAND: usize = 9;
    pub const JOINT_POS: usize = 12;
    pub const JOINT_VEL: usize = 20;
    pub const ACTION: usize = 28;
    pub const PHASE: usize = 36;
    pub const END: usize = 38;
    /// Start of the policy view inside the full observation.
    pub const POLICY_START: usize = ANG_VEL;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsNoise {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub gravity: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub action: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        ObsNoise {
            lin_vel: 0.1,
            ang_vel: 0.2,
            gravity: 0.05,
            joint_pos: 0.01,
            joint_vel: 1.5,
            action: 0.01,
        }
    }
}

/// Fixed per-block input scales applied before the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsScales {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub gravity: f64,
    pub command: [f64; 3],
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub action: f64,
    pub height_scan: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        ObsScales {
            lin_vel: 2.0,
            ang_vel: 0.25,
            gravity: 1.0,
            command: [2.0, 2.0, 0.25],
            joint_pos: 1.0,
            joint_vel: 0.05,
            action: 1.0,
            height_scan: 1.0,
        }
    }
}

impl ObsScales {
    fn factor(&self, i: usize) -> f64 {
        use layout::*;
        match i {
            LIN_VEL..ANG_VEL => self.lin_vel,
            ANG_VEL..GRAVITY => self.ang_vel,
            GRAVITY..COMMAND => self.gravity,
            COMMAND..JOINT_POS => self.command[i - COMMAND],
            JOINT_POS..JOINT_VEL => self.joint_pos,
            JOINT_VEL..ACTION => self.joint_vel,
            ACTION..PHASE => self.action,
            _ => 1.0,
        }
    }

    pub fn scale_full(&self, full: &[f64]) -> Vec<f64> {
        full.iter().enumerate().map(|(i, v)| v * self.factor(i)).collect()
    }

    pub fn scale_policy(&self, full: &[f64]) -> Vec<f64> {
        (layout::POLICY_START..layout::END)
            .map(|i| full[i] * self.factor(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub base_mass: f64,
    pub base_inertia: [f64; 3],
    pub hip_offset: [f64; 3],
    pub thigh_length: f64,
    pub shank_length: f64,
    pub sole_depth: f64,
    pub toe_length: f64,
    pub heel_length: f64,
    /// Default pose of one leg, mirrored on both.
    pub default_pose: [f64; 4],
    pub joint_lower: [f64; 4],
    pub joint_upper: [f64; 4],
    pub kp: [f64; 4],
    pub kd: [f64; 4],
    pub torque_limit: [f64; 4],
    pub armature: [f64; 4],
    pub action_scale: f64,
    pub action_clip: f64,
    pub decimation: usize,
    pub physics_dt: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_damping: f64,
    pub gait_frequency: f64,
    pub phase_offsets: [f64; 2],
    pub fall_height: f64,
    pub fall_tilt: f64,
    pub episode_steps: u64,
    pub command_resample_s: f64,
    pub observation_noise: bool,
    pub noise: ObsNoise,
    pub scales: ObsScales,
    pub spawn_clearance: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            base_mass: 15.0,
            base_inertia: [0.6, 0.6, 0.3],
            hip_offset: [0.0, 0.12, -0.05],
            thigh_length: 0.42,
            shank_length: 0.42,
            sole_depth: 0.03,
            toe_length: 0.10,
            heel_length: 0.10,
            default_pose: [0.0, -0.4, 0.8, -0.4],
            joint_lower: [-0.5, -1.5, 0.0, -1.0],
            joint_upper: [0.5, 1.0, 2.0, 0.8],
            kp: [100.0, 100.0, 150.0, 45.0],
            kd: [1.5, 1.5, 1.5, 0.8],
            torque_limit: [80.0, 80.0, 80.0, 40.0],
            armature: [0.1, 0.1, 0.1, 0.03],
            action_scale: 0.25,
            action_clip: 10.0,
            decimation: 4,
            physics_dt: 0.005,
            contact_stiffness: 5000.0,
            contact_damping: 100.0,
            tangential_damping: 300.0,
            gait_frequency: 1.5,
            phase_offsets: [0.0, 0.5],
            fall_height: 0.35,
            fall_tilt: 0.8,
            episode_steps: 1000,
            command_resample_s: 10.0,
            observation_noise: true,
            noise: ObsNoise::default(),
            scales: ObsScales::default(),
            spawn_clearance: 0.005,
        }
    }
}

impl EnvConfig {
    pub fn control_dt(&self) -> f64 {
        self.physics_dt * self.decimation as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.base_mass", self.base_mass),
            ("env.thigh_length", self.thigh_length),
            ("env.shank_length", self.shank_length),
            ("env.physics_dt", self.physics_dt),
            ("env.contact_stiffness", self.contact_stiffness),
            ("env.gait_frequency", self.gait_frequency),
            ("env.action_scale", self.action_scale),
            ("env.action_clip", self.action_clip),
            ("env.command_resample_s", self.command_resample_s),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must lie in (0, inf), got {v}")));
            }
        }
        for (key, arr) in [
            ("env.base_inertia", &self.base_inertia[..]),
            ("env.armature", &self.armature[..]),
        ] {
            if arr.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config(format!("{key} entries must lie in (0, inf)")));
            }
        }
        if self.decimation == 0 {
            return Err(Error::Config("env.decimation must be at least 1".into()));
        }
        if self.episode_steps == 0 {
            return Err(Error::Config("env.episode_steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fall_tilt) {
            return Err(Error::Config(format!(
                "env.fall_tilt must lie in [0, 1], got {}",
                self.fall_tilt
            )));
        }
        for k in 0..4 {
            if self.joint_lower[k] > self.joint_upper[k] {
                return Err(Error::Config("env.joint_lower must not exceed env.joint_upper".into()));
            }
        }
        Ok(())
    }

    pub fn default_joints(&self) -> [f64; NUM_JOINTS] {
        let mut q = [0.0; NUM_JOINTS];
        for leg in 0..NUM_FEET {
            q[4 * leg..4 * leg + 4].copy_from_slice(&self.default_pose);
        }
        q
    }

    /// Height of the base origin over flat ground when standing in the
    /// default pose with the soles just touching.
    pub fn standing_height(&self) -> f64 {
        let pts = foot_points(self, &self.default_joints(), [0.0; 3]);
        -pts.iter().flatten().map(|p| p[2]).fold(f64::INFINITY, f64::min)
    }
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotates a body-frame vector into the world frame.
pub fn quat_rotate(q: [f64; 4], v: V3) -> V3 {
    let u = [q[1], q[2], q[3]];
    let t = scale(cross(u, v), 2.0);
    add(add(v, scale(t, q[0])), cross(u, t))
}

pub fn quat_rotate_inv(q: [f64; 4], v: V3) -> V3 {
    quat_rotate([q[0], -q[1], -q[2], -q[3]], v)
}

pub fn quat_from_yaw(yaw: f64) -> [f64; 4] {
    let (s, c) = (yaw / 2.0).sin_cos();
    [c, 0.0, 0.0, s]
}

pub fn quat_yaw(q: [f64; 4]) -> f64 {
    let [w, x, y, z] = q;
    (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
}

fn quat_normalize(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Pitch rotation of `(a, 0, b)` by `t`.
fn rot_y(t: f64, a: f64, b: f64) -> (f64, f64) {
    let (s, c) = t.sin_cos();
    (a * c + b * s, -a * s + b * c)
}

/// Toe and heel sole points of each foot in the body frame, relative to the
/// centre of mass displaced by `com`.
pub fn foot_points(cfg: &EnvConfig, q: &[f64; NUM_JOINTS], com: V3) -> [[V3; 2]; NUM_FEET] {
    let mut out = [[[0.0; 3]; 2]; NUM_FEET];
    for leg in 0..NUM_FEET {
        let side = if leg == 0 { 1.0 } else { -1.0 };
        let j = &q[4 * leg..4 * leg + 4];
        let hip = sub(
            [cfg.hip_offset[0], side * cfg.hip_offset[1], cfg.hip_offset[2]],
            com,
        );
        let t1 = j[1];
        let t2 = t1 + j[2];
        let t3 = t2 + j[3];
        let (kx, kz) = rot_y(t1, 0.0, -cfg.thigh_length);
        let (ax, az) = rot_y(t2, 0.0, -cfg.shank_length);
        let ankle = (kx + ax, kz + az);
        let (s0, c0) = j[0].sin_cos();
        for (p, along) in [(0, cfg.toe_length), (1, -cfg.heel_length)] {
            let (fx, fz) = rot_y(t3, along, -cfg.sole_depth);
            let local = [ankle.0 + fx, 0.0, ankle.1 + fz];
            let rotated = [local[0], c0 * local[1] - s0 * local[2], s0 * local[1] + c0 * local[2]];
            out[leg][p] = add(hip, rotated);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pos: V3,
    pub quat: [f64; 4],
    pub lin_vel: V3,
    pub ang_vel: V3,
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    pub qdd: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    pub foot_force: [V3; NUM_FEET],
    pub phase: f64,
}

impl RobotState {
    pub fn body_lin_vel(&self) -> V3 {
        quat_rotate_inv(self.quat, self.lin_vel)
    }

    pub fn projected_gravity(&self) -> V3 {
        quat_rotate_inv(self.quat, [0.0, 0.0, -1.0])
    }

    pub fn foot_phase(&self, cfg: &EnvConfig, foot: usize) -> f64 {
        (self.phase + cfg.phase_offsets[foot]).rem_euclid(1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(&self.quat).chain(&self.lin_vel).chain(&self.ang_vel)
            .chain(&self.q).chain(&self.qd)
            .all(|v| v.is_finite())
    }
}

/// The 38-vector in table order; `policy_view` drops the body velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub full: Vec<f64>,
}

impl ObservationFrame {
    pub fn policy_view(&self) -> &[f64] {
        &self.full[layout::POLICY_START..]
    }
}

pub fn observe<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    state: &RobotState,
    command: &[f64; 3],
    prev_action: &[f64],
    noise_on: bool,
    rng: &mut R,
) -> ObservationFrame {
    let mut frame = observe_clean(cfg, state, command, prev_action);
    if noise_on {
        let n = &cfg.noise;
        let ranges = [
            (layout::LIN_VEL, layout::ANG_VEL, n.lin_vel),
            (layout::ANG_VEL, layout::GRAVITY, n.ang_vel),
            (layout::GRAVITY, layout::COMMAND, n.gravity),
            (layout::JOINT_POS, layout::JOINT_VEL, n.joint_pos),
            (layout::JOINT_VEL, layout::ACTION, n.joint_vel),
            (layout::ACTION, layout::PHASE, n.action),
        ];
        for (lo, hi, r) in ranges {
            if r > 0.0 {
                for v in &mut frame.full[lo..hi] {
                    *v += rng.random_range(-r..=r);
                }
            }
        }
    }
    frame
}

/// The observation without sensor noise.
pub fn observe_clean(cfg: &EnvConfig, state: &RobotState, command: &[f64; 3], prev_action: &[f64]) -> ObservationFrame {
    let mut full = Vec::with_capacity(FULL_OBS_DIM);
    full.extend_from_slice(&state.body_lin_vel());
    full.extend_from_slice(&state.ang_vel);
    full.extend_from_slice(&state.projected_gravity());
    full.extend_from_slice(command);
    let default = cfg.default_joints();
    full.extend(state.q.iter().zip(&default).map(|(q, d)| q - d));
    full.extend_from_slice(&state.qd);
    full.extend_from_slice(prev_action);
    let angle = 2.0 * std::f64::consts::PI * state.phase;
    full.push(angle.sin());
    full.push(angle.cos());
    ObservationFrame { full }
}

pub fn critic_observe(
    cfg: &EnvConfig,
    state: &RobotState,
    command: &[f64; 3],
    prev_action: &[f64],
    scan: &[f64],
) -> Result<Vec<f64>> {
    if scan.len() != SCAN_POINTS {
        return Err(Error::Config(format!(
            "height scan must have {SCAN_POINTS} samples, got {}",
            scan.len()
        )));
    }
    let mut out = observe_clean(cfg, state, command, prev_action).full;
    out.extend_from_slice(scan);
    Ok(out)
}

/// Shared read-only inputs of a step.
pub struct EnvContext<'a> {
    pub env: &'a EnvConfig,
    pub rewards: &'a RewardConfig,
    pub randomization: &'a RandomizationConfig,
    pub world: &'a TerrainWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub result: EpisodeResult,
    pub length: u64,
    pub episode_return: f64,
    pub timeout: bool,
    pub fault: Option<String>,
    pub mean_lin_error: f64,
    pub mean_ang_error: f64,
    pub term_sums: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub terms: RewardTerms,
    pub reward: f64,
    pub done: bool,
    pub lin_error: f64,
    pub ang_error: f64,
    pub episode: Option<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub row: usize,
    pub level: usize,
    pub state: RobotState,
    pub draw: RandomizationDraw,
    pub command: [f64; 3],
    pub command_ranges: CommandRanges,
    pub rng: ChaCha8Rng,
    pub step_count: u64,
    /// `a_t`, `a_{t−1}`, `a_{t−2}` after the last step.
    pub actions: [Vec<f64>; 3],
    pub air_time: [f64; NUM_FEET],
    pub last_contact: [bool; NUM_FEET],
    pub spawn: [f64; 2],
    pub history: HistoryBuffer,
    pub episode_return: f64,
    pub lin_error_sum: f64,
    pub ang_error_sum: f64,
    pub term_sums: Vec<f64>,
    pub commanded_distance: f64,
}

impl Env {
    pub fn new(row: usize, seed: u64) -> Self {
        Env {
            row,
            level: 0,
            state: RobotState {
                pos: [0.0; 3],
                quat: [1.0, 0.0, 0.0, 0.0],
                lin_vel: [0.0; 3],
                ang_vel: [0.0; 3],
                q: [0.0; NUM_JOINTS],
                qd: [0.0; NUM_JOINTS],
                qdd: [0.0; NUM_JOINTS],
                tau: [0.0; NUM_JOINTS],
                foot_force: [[0.0; 3]; NUM_FEET],
                phase: 0.0,
            },
            draw: RandomizationDraw::nominal(1.0, 0.0),
            command: [0.0; 3],
            command_ranges: CommandRanges {
                lin_x: Range(0.0, 0.0),
                lin_y: Range(0.0, 0.0),
                yaw: Range(0.0, 0.0),
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            step_count: 0,
            actions: [vec![0.0; NUM_JOINTS], vec![0.0; NUM_JOINTS], vec![0.0; NUM_JOINTS]],
            air_time: [0.0; NUM_FEET],
            last_contact: [false; NUM_FEET],
            spawn: [0.0; 2],
            history: HistoryBuffer::new(),
            episode_return: 0.0,
            lin_error_sum: 0.0,
            ang_error_sum: 0.0,
            term_sums: vec![0.0; NUM_TERMS],
            commanded_distance: 0.0,
        }
    }

    /// Places the robot at the centre of its row's tile for `level`, standing
    /// still in the default pose, and resamples dynamics and command.
    pub fn reset(&mut self, ctx: &EnvContext, level: usize, ranges: &CommandRanges) -> ObservationFrame {
        let cfg = ctx.env;
        self.level = level.min(crate::terrain::MAX_LEVEL);
        self.draw = if ctx.randomization.enabled {
            sample_randomization_with(ctx.randomization, &mut self.rng)
        } else {
            RandomizationDraw::nominal(ctx.world.friction, ctx.world.restitution)
        };
        let (x, y) = ctx.world.tile_center(self.row % ctx.world.num_rows(), self.level);
        let q = cfg.default_joints();
        let pts = foot_points(cfg, &q, self.draw.com_offset_m());
        let mut z = f64::NEG_INFINITY;
        for p in pts.iter().flatten() {
            z = z.max(ctx.world.height_at(x + p[0], y + p[1]) - p[2]);
        }
        self.state = RobotState {
            pos: [x, y, z + cfg.spawn_clearance],
            quat: [1.0, 0.0, 0.0, 0.0],
            lin_vel: [0.0; 3],
            ang_vel: [0.0; 3],
            q,
            qd: [0.0; NUM_JOINTS],
            qdd: [0.0; NUM_JOINTS],
            tau: [0.0; NUM_JOINTS],
            foot_force: [[0.0; 3]; NUM_FEET],
            phase: 0.0,
        };
        self.command_ranges = *ranges;
        self.command = ranges.sample(&mut self.rng);
        self.step_count = 0;
        self.actions = [vec![0.0; NUM_JOINTS], vec![0.0; NUM_JOINTS], vec![0.0; NUM_JOINTS]];
        self.air_time = [0.0; NUM_FEET];
        self.last_contact = [false; NUM_FEET];
        self.spawn = [x, y];
        self.history.reset();
        self.episode_return = 0.0;
        self.lin_error_sum = 0.0;
        self.ang_error_sum = 0.0;
        self.term_sums = vec![0.0; NUM_TERMS];
        self.commanded_distance = 0.0;
        self.observe(cfg)
    }

    pub fn mass(&self, cfg: &EnvConfig) -> f64 {
        (cfg.base_mass * self.draw.link_mass_scale + self.draw.payload_kg).max(0.1 * cfg.base_mass)
    }

    pub fn inertia(&self, cfg: &EnvConfig) -> V3 {
        let r = self.mass(cfg) / cfg.base_mass;
        cfg.base_inertia.map(|i| i * r)
    }

    pub fn observe(&mut self, cfg: &EnvConfig) -> ObservationFrame {
        let noise = cfg.observation_noise;
        observe(cfg, &self.state, &self.command, &self.actions[0], noise, &mut self.rng)
    }

    pub fn observe_noiseless(&self, cfg: &EnvConfig) -> ObservationFrame {
        observe_clean(cfg, &self.state, &self.command, &self.actions[0])
    }

    pub fn scan_pose(&self) -> ScanPose {
        ScanPose {
            x: self.state.pos[0],
            y: self.state.pos[1],
            z: self.state.pos[2],
            yaw: quat_yaw(self.state.quat),
        }
    }

    pub fn height_scan(&self, world: &TerrainWorld) -> Vec<f64> {
        world.height_scan(&self.scan_pose())
    }

    pub fn critic_observation(&self, ctx: &EnvContext) -> Vec<f64> {
        let scan = self.height_scan(ctx.world);
        critic_observe(ctx.env, &self.state, &self.command, &self.actions[0], &scan)
            .expect("scan length is fixed")
    }

    /// Base height above the terrain directly below it.
    pub fn base_height(&self, world: &TerrainWorld) -> f64 {
        self.state.pos[2] - world.height_at(self.state.pos[0], self.state.pos[1])
    }

    fn pd_torques(&self, cfg: &EnvConfig, target: &[f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
        let mut tau = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let k = j % 4;
            let kp = cfg.kp[k] * self.draw.kp_scale;
            let kd = cfg.kd[k] * self.draw.kd_scale;
            let raw = (kp * (target[j] - self.state.q[j]) - kd * self.state.qd[j]) * self.draw.motor_strength_scale;
            tau[j] = raw.clamp(-cfg.torque_limit[k], cfg.torque_limit[k]);
        }
        tau
    }

    /// One physics substep: joint servo dynamics, contact, base integration.
    fn substep(&mut self, ctx: &EnvContext, target: &[f64; NUM_JOINTS]) {
        let cfg = ctx.env;
        let dt = cfg.physics_dt;
        let tau = self.pd_torques(cfg, target);
        for j in 0..NUM_JOINTS {
            let k = j % 4;
            let acc = tau[j] / cfg.armature[k];
            let mut qd = self.state.qd[j] + acc * dt;
            let mut q = self.state.q[j] + qd * dt;
            if q < cfg.joint_lower[k] {
                q = cfg.joint_lower[k];
                qd = qd.max(0.0);
            } else if q > cfg.joint_upper[k] {
                q = cfg.joint_upper[k];
                qd = qd.min(0.0);
            }
            self.state.qdd[j] = (qd - self.state.qd[j]) / dt;
            self.state.qd[j] = qd;
            self.state.q[j] = q;
        }
        self.state.tau = tau;

        let com = self.draw.com_offset_m();
        let pts = foot_points(cfg, &self.state.q, com);
        let h = 1e-6;
        let mut q_plus = self.state.q;
        let mut q_minus = self.state.q;
        for j in 0..NUM_JOINTS {
            q_plus[j] += h * self.state.qd[j];
            q_minus[j] -= h * self.state.qd[j];
        }
        let pp = foot_points(cfg, &q_plus, com);
        let pm = foot_points(cfg, &q_minus, com);

        let mass = self.mass(cfg);
        let inertia = self.inertia(cfg);
        let quat = self.state.quat;
        let w_world = quat_rotate(quat, self.state.ang_vel);
        let mut active = 0usize;
        let mut world_pts = [[[0.0; 3]; 2]; NUM_FEET];
        let mut penetration = [[0.0; 2]; NUM_FEET];
        for f in 0..NUM_FEET {
            for p in 0..2 {
                let r = quat_rotate(quat, pts[f][p]);
                let wp = add(self.state.pos, r);
                world_pts[f][p] = wp;
                penetration[f][p] = ctx.world.height_at(wp[0], wp[1]) - wp[2];
                if penetration[f][p] > 0.0 {
                    active += 1;
                }
            }
        }

        let mut force = [0.0, 0.0, -GRAVITY * mass];
        let mut torque_world = [0.0; 3];
        let mut foot_force = [[0.0; 3]; NUM_FEET];
        let damping_scale = 1.0 - 0.5 * self.draw.restitution;
        for f in 0..NUM_FEET {
            for p in 0..2 {
                let pen = penetration[f][p];
                if pen <= 0.0 {
                    continue;
                }
                let r = sub(world_pts[f][p], self.state.pos);
                let rel_body = scale(sub(pp[f][p], pm[f][p]), 1.0 / (2.0 * h));
                let v = add(add(self.state.lin_vel, cross(w_world, r)), quat_rotate(quat, rel_body));
                let share = active as f64;
                let m_n = effective_mass(mass, inertia, quat, r, [0.0, 0.0, 1.0]) / share;
                let c_n = cfg.contact_damping * damping_scale;
                let damp_n = c_n * v[2] / (1.0 + c_n * dt / m_n);
                let fz = (cfg.contact_stiffness * pen - damp_n).max(0.0);
                let vt = [v[0], v[1], 0.0];
                let speed = norm(vt);
                let mut ft = [0.0; 3];
                if speed > 0.0 {
                    let dir = scale(vt, 1.0 / speed);
                    let m_t = effective_mass(mass, inertia, quat, r, dir) / share;
                    let ct = cfg.tangential_damping;
                    let mag = (ct * speed / (1.0 + ct * dt / m_t)).min(self.draw.friction * fz);
                    ft = scale(dir, -mag);
                }
                let fvec = [ft[0], ft[1], fz];
                force = add(force, fvec);
                torque_world = add(torque_world, cross(r, fvec));
                foot_force[f] = add(foot_force[f], fvec);
            }
        }
        self.state.foot_force = foot_force;

        self.state.lin_vel = add(self.state.lin_vel, scale(force, dt / mass));
        self.state.pos = add(self.state.pos, scale(self.state.lin_vel, dt));
        let tb = quat_rotate_inv(quat, torque_world);
        let w = self.state.ang_vel;
        let iw = [inertia[0] * w[0], inertia[1] * w[1], inertia[2] * w[2]];
        let gyro = cross(w, iw);
        for k in 0..3 {
            self.state.ang_vel[k] += dt * (tb[k] - gyro[k]) / inertia[k];
        }
        let w = self.state.ang_vel;
        let angle = norm(w) * dt;
        if angle > 0.0 {
            let axis = scale(w, 1.0 / norm(w));
            let (s, c) = (angle / 2.0).sin_cos();
            self.state.quat = quat_normalize(quat_mul(quat, [c, axis[0] * s, axis[1] * s, axis[2] * s]));
        }
    }

    /// Advances one control step with `action` (one entry per joint).
    pub fn step(&mut self, ctx: &EnvContext, action: &[f64]) -> Result<StepOutput> {
        let cfg = ctx.env;
        if action.len() != NUM_JOINTS {
            return Err(Error::dim("action", NUM_JOINTS, action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("action contains non-finite values".into()));
        }
        let action: Vec<f64> = action.iter().map(|a| a.clamp(-cfg.action_clip, cfg.action_clip)).collect();
        let default = cfg.default_joints();
        let mut target = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            target[j] = default[j] + cfg.action_scale * action[j];
        }
        let qd_before = self.state.qd;
        let vel_before = self.state.lin_vel;
        for _ in 0..cfg.decimation {
            self.substep(ctx, &target);
        }
        let dt = cfg.control_dt();
        self.state.phase = (self.state.phase + cfg.gait_frequency * dt).rem_euclid(1.0);
        self.step_count += 1;
        self.actions.rotate_right(1);
        self.actions[0] = action;

        let fault = if self.state.is_finite() {
            None
        } else {
            Some(format!("non-finite robot state at step {}", self.step_count))
        };

        let (terms, lin_error, ang_error) = if fault.is_none() {
            self.reward_terms(ctx, &qd_before, vel_before, dt)
        } else {
            (crate::rewards::weigh(ctx.rewards, [0.0; NUM_TERMS]), 0.0, 0.0)
        };
        let reward = terms.weighted_total;

        let steps_per_push = (ctx.randomization.push_interval_s / dt).round() as u64;
        if fault.is_none() && ctx.randomization.push_enabled && push_due(self.step_count, steps_per_push) {
            let d = push_delta(ctx.randomization.push_max_velocity, &mut self.rng);
            self.state.lin_vel[0] += d[0];
            self.state.lin_vel[1] += d[1];
        }
        let resample = (cfg.command_resample_s / dt).round() as u64;
        if resample > 0 && self.step_count.is_multiple_of(resample) && self.step_count < cfg.episode_steps {
            self.command = self.command_ranges.sample(&mut self.rng);
        }

        self.episode_return += reward;
        self.lin_error_sum += lin_error;
        self.ang_error_sum += ang_error;
        for (s, v) in self.term_sums.iter_mut().zip(terms.weighted.iter()) {
            *s += v;
        }
        let speed = (self.command[0].powi(2) + self.command[1].powi(2)).sqrt();
        self.commanded_distance += speed * dt;

        let fell = fault.is_none() && self.fallen(ctx);
        let timeout = self.step_count >= cfg.episode_steps;
        let done = fell || timeout || fault.is_some();
        let episode = done.then(|| self.summary(ctx, fell, timeout, fault));
        Ok(StepOutput {
            terms,
            reward,
            done,
            lin_error,
            ang_error,
            episode,
        })
    }

    fn fallen(&self, ctx: &EnvContext) -> bool {
        let g = self.state.projected_gravity();
        self.base_height(ctx.world) < ctx.env.fall_height || g[0] * g[0] + g[1] * g[1] > ctx.env.fall_tilt
    }

    fn summary(&self, ctx: &EnvContext, fell: bool, timeout: bool, fault: Option<String>) -> EpisodeSummary {
        let dx = self.state.pos[0] - self.spawn[0];
        let dy = self.state.pos[1] - self.spawn[1];
        let n = self.step_count.max(1) as f64;
        let distance = if fault.is_some() { 0.0 } else { (dx * dx + dy * dy).sqrt() };
        EpisodeSummary {
            result: EpisodeResult {
                distance,
                commanded_distance: self.commanded_distance,
                fell: fell || fault.is_some(),
                tile_length: ctx.world.tile_length,
            },
            length: self.step_count,
            episode_return: self.episode_return,
            timeout,
            fault,
            mean_lin_error: self.lin_error_sum / n,
            mean_ang_error: self.ang_error_sum / n,
            term_sums: self.term_sums.clone(),
        }
    }

    fn reward_terms(&mut self, ctx: &EnvContext, qd_before: &[f64; NUM_JOINTS], vel_before: V3, dt: f64) -> (RewardTerms, f64, f64) {
        let cfg = ctx.env;
        let com = self.draw.com_offset_m();
        let pts = foot_points(cfg, &self.state.q, com);
        let mut feet = Vec::with_capacity(NUM_FEET);
        let w_world = quat_rotate(self.state.quat, self.state.ang_vel);
        for f in 0..NUM_FEET {
            let mut height = f64::INFINITY;
            let mut speed = 0.0;
            for p in 0..2 {
                let r = quat_rotate(self.state.quat, pts[f][p]);
                let wp = add(self.state.pos, r);
                height = height.min(wp[2] - ctx.world.height_at(wp[0], wp[1]));
                let v = add(self.state.lin_vel, cross(w_world, r));
                speed += 0.5 * (v[0] * v[0] + v[1] * v[1]).sqrt();
            }
            let fz = self.state.foot_force[f][2];
            let contact = fz > ctx.rewards.contact_force_threshold;
            let contact_filt = contact || self.last_contact[f];
            self.last_contact[f] = contact;
            let first_contact = self.air_time[f] > 0.0 && contact_filt;
            self.air_time[f] += dt;
            let air = self.air_time[f];
            if contact_filt {
                self.air_time[f] = 0.0;
            }
            feet.push(FootState {
                height,
                speed_xy: speed,
                force_z: fz,
                force_norm: norm(self.state.foot_force[f]),
                phase: self.state.foot_phase(cfg, f),
                air_time: air,
                first_contact,
            });
        }
        let joint_acc: Vec<f64> = self.state.qd.iter().zip(qd_before).map(|(a, b)| (a - b) / dt).collect();
        let acc = scale(sub(self.state.lin_vel, vel_before), 1.0 / dt);
        let body_v = self.state.body_lin_vel();
        let inputs = RewardInputs {
            lin_vel: body_v,
            ang_vel: self.state.ang_vel,
            gravity: self.state.projected_gravity(),
            command: self.command,
            base_height: self.base_height(ctx.world),
            base_acc: acc,
            actions: self.actions.clone(),
            torques: self.state.tau.to_vec(),
            joint_vel: self.state.qd.to_vec(),
            joint_acc,
            feet,
        };
        let terms = compute_rewards(ctx.rewards, &inputs);
        let lin_error = ((self.command[0] - body_v[0]).powi(2) + (self.command[1] - body_v[1]).powi(2)).sqrt();
        let ang_error = (self.command[2] - self.state.ang_vel[2]).abs();
        (terms, lin_error, ang_error)
    }
}

/// Mass seen by a force along unit `dir` applied at offset `r` (world frame)
/// from the centre of mass.
fn effective_mass(mass: f64, inertia: V3, quat: [f64; 4], r: V3, dir: V3) -> f64 {
    let rxd = quat_rotate_inv(quat, cross(r, dir));
    let ang = rxd[0] * rxd[0] / inertia[0] + rxd[1] * rxd[1] / inertia[1] + rxd[2] * rxd[2] / inertia[2];
    1.0 / (1.0 / mass + ang)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pose_puts_feet_under_hips() {
        let cfg = EnvConfig::default();
        let pts = foot_points(&cfg, &cfg.default_joints(), [0.0; 3]);
        let toe = pts[0][0];
        let heel = pts[0][1];
        assert!(((toe[0] + heel[0]) / 2.0).abs() < 1e-12);
        assert!((toe[1] - 0.12).abs() < 1e-12);
        assert!((cfg.standing_height() - (0.05 + 0.84 * 0.4f64.cos() + 0.03)).abs() < 1e-12);
    }

    #[test]
    fn quaternion_round_trip() {
        let q = quat_normalize([0.9, 0.1, -0.3, 0.2]);
        let v = [0.3, -1.2, 0.5];
        let back = quat_rotate_inv(q, quat_rotate(q, v));
        for k in 0..3 {
            assert!((back[k] - v[k]).abs() < 1e-12);
        }
        assert!((quat_yaw(quat_from_yaw(0.7)) - 0.7).abs() < 1e-12);
    }
}
