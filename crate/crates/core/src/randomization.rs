//! Per-episode dynamics randomization, push perturbations and the terrain and
//! command curricula.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::MAX_LEVEL;

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }

    fn validate(&self, key: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(Error::Config(format!(
                "{key} must be an interval [lo, hi] with lo <= hi, got [{}, {}]",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub enabled: bool,
    pub link_mass_scale: Range,
    pub payload_kg: Range,
    pub com_offset_x_cm: Range,
    pub com_offset_y_cm: Range,
    pub com_offset_z_cm: Range,
    pub friction: Range,
    pub restitution: Range,
    pub kp_scale: Range,
    pub kd_scale: Range,
    pub motor_strength_scale: Range,
    pub push_enabled: bool,
    pub push_interval_s: f64,
    pub push_max_velocity: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            enabled: true,
            link_mass_scale: Range(0.8, 1.2),
            payload_kg: Range(-1.0, 3.0),
            com_offset_x_cm: Range(-7.5, 7.5),
            com_offset_y_cm: Range(-5.0, 5.0),
            com_offset_z_cm: Range(-5.0, 5.0),
            friction: Range(0.2, 1.25),
            restitution: Range(0.0, 1.0),
            kp_scale: Range(0.9, 1.1),
            kd_scale: Range(0.9, 1.1),
            motor_strength_scale: Range(0.8, 1.2),
            push_enabled: true,
            push_interval_s: 7.0,
            push_max_velocity: 0.5,
        }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, r) in [
            ("randomization.link_mass_scale", self.link_mass_scale),
            ("randomization.payload_kg", self.payload_kg),
            ("randomization.com_offset_x_cm", self.com_offset_x_cm),
            ("randomization.com_offset_y_cm", self.com_offset_y_cm),
            ("randomization.com_offset_z_cm", self.com_offset_z_cm),
            ("randomization.friction", self.friction),
            ("randomization.restitution", self.restitution),
            ("randomization.kp_scale", self.kp_scale),
            ("randomization.kd_scale", self.kd_scale),
            ("randomization.motor_strength_scale", self.motor_strength_scale),
        ] {
            r.validate(key)?;
        }
        if self.friction.0 < 0.0 {
            return Err(Error::Config("randomization.friction must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.restitution.0) || !(0.0..=1.0).contains(&self.restitution.1) {
            return Err(Error::Config("randomization.restitution must lie in [0, 1]".into()));
        }
        if !(self.push_interval_s > 0.0) {
            return Err(Error::Config(format!(
                "randomization.push_interval_s must lie in (0, inf), got {}",
                self.push_interval_s
            )));
        }
        if !(self.push_max_velocity >= 0.0) {
            return Err(Error::Config(format!(
                "randomization.push_max_velocity must lie in [0, inf), got {}",
                self.push_max_velocity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    pub link_mass_scale: f64,
    pub payload_kg: f64,
    pub com_offset_cm: [f64; 3],
    pub friction: f64,
    pub restitution: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub motor_strength_scale: f64,
}

impl RandomizationDraw {
    /// The unperturbed robot on a surface with the given contact properties.
    pub fn nominal(friction: f64, restitution: f64) -> Self {
        RandomizationDraw {
            link_mass_scale: 1.0,
            payload_kg: 0.0,
            com_offset_cm: [0.0; 3],
            friction,
            restitution,
            kp_scale: 1.0,
            kd_scale: 1.0,
            motor_strength_scale: 1.0,
        }
    }

    pub fn com_offset_m(&self) -> [f64; 3] {
        self.com_offset_cm.map(|c| c * 0.01)
    }
}

pub fn sample_randomization<R: Rng + ?Sized>(rng: &mut R) -> RandomizationDraw {
    sample_randomization_with(&RandomizationConfig::default(), rng)
}

pub fn sample_randomization_with<R: Rng + ?Sized>(cfg: &RandomizationConfig, rng: &mut R) -> RandomizationDraw {
    RandomizationDraw {
        link_mass_scale: cfg.link_mass_scale.sample(rng),
        payload_kg: cfg.payload_kg.sample(rng),
        com_offset_cm: [
            cfg.com_offset_x_cm.sample(rng),
            cfg.com_offset_y_cm.sample(rng),
            cfg.com_offset_z_cm.sample(rng),
        ],
        friction: cfg.friction.sample(rng),
        restitution: cfg.restitution.sample(rng),
        kp_scale: cfg.kp_scale.sample(rng),
        kd_scale: cfg.kd_scale.sample(rng),
        motor_strength_scale: cfg.motor_strength_scale.sample(rng),
    }
}

/// Horizontal velocity kick, each axis uniform in `±max`.
pub fn push_delta<R: Rng + ?Sized>(max: f64, rng: &mut R) -> [f64; 2] {
    let r = Range(-max, max);
    [r.sample(rng), r.sample(rng)]
}

/// Whether a push is due after `step` control steps.
pub fn push_due(step: u64, interval_steps: u64) -> bool {
    interval_steps > 0 && step > 0 && step.is_multiple_of(interval_steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub terrain_enabled: bool,
    pub initial_level: usize,
    /// Fraction of the tile length to travel, without falling, for promotion.
    pub promote_fraction: f64,
    /// Demote when the distance falls below this fraction of the commanded one.
    pub demote_fraction: f64,
    pub command_enabled: bool,
    pub lin_x_start: f64,
    pub lin_x_final: f64,
    pub lin_y: f64,
    pub yaw_rate: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            terrain_enabled: true,
            initial_level: 0,
            promote_fraction: 0.5,
            demote_fraction: 0.25,
            command_enabled: true,
            lin_x_start: 0.5,
            lin_x_final: 1.0,
            lin_y: 0.3,
            yaw_rate: 0.5,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_level > MAX_LEVEL {
            return Err(Error::Config(format!(
                "curriculum.initial_level must lie in [0, {MAX_LEVEL}], got {}",
                self.initial_level
            )));
        }
        for (key, v) in [
            ("curriculum.promote_fraction", self.promote_fraction),
            ("curriculum.demote_fraction", self.demote_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{key} must lie in [0, 1], got {v}")));
            }
        }
        for (key, v) in [
            ("curriculum.lin_x_start", self.lin_x_start),
            ("curriculum.lin_x_final", self.lin_x_final),
            ("curriculum.lin_y", self.lin_y),
            ("curriculum.yaw_rate", self.yaw_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must lie in [0, inf), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub lin_x: Range,
    pub lin_y: Range,
    pub yaw: Range,
}

impl CommandRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        [self.lin_x.sample(rng), self.lin_y.sample(rng), self.yaw.sample(rng)]
    }
}

/// How an episode ended, as seen by the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub distance: f64,
    pub commanded_distance: f64,
    pub fell: bool,
    pub tile_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub levels: Vec<usize>,
    pub ranges: CommandRanges,
    pub promotions: u64,
    pub demotions: u64,
}

/// New level after an episode: at most one step up or down, clamped to 0–9.
pub fn next_level(cfg: &CurriculumConfig, level: usize, r: &EpisodeResult) -> usize {
    if r.distance >= cfg.promote_fraction * r.tile_length && !r.fell {
        (level + 1).min(MAX_LEVEL)
    } else if r.distance < cfg.demote_fraction * r.commanded_distance {
        level.saturating_sub(1)
    } else {
        level
    }
}

impl CurriculumState {
    pub fn new(cfg: &CurriculumConfig, num_envs: usize) -> Self {
        let mut s = CurriculumState {
            levels: vec![cfg.initial_level.min(MAX_LEVEL); num_envs],
            ranges: CommandRanges {
                lin_x: Range(-cfg.lin_x_start, cfg.lin_x_start),
                lin_y: Range(-cfg.lin_y, cfg.lin_y),
                yaw: Range(-cfg.yaw_rate, cfg.yaw_rate),
            },
            promotions: 0,
            demotions: 0,
        };
        s.refresh_ranges(cfg);
        s
    }

    pub fn mean_level(&self) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        self.levels.iter().sum::<usize>() as f64 / self.levels.len() as f64
    }

    /// Forward command range widens linearly with the mean level.
    pub fn refresh_ranges(&mut self, cfg: &CurriculumConfig) {
        let t = if cfg.command_enabled {
            (self.mean_level() / MAX_LEVEL as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let x = cfg.lin_x_start + t * (cfg.lin_x_final - cfg.lin_x_start);
        self.ranges.lin_x = Range(-x, x);
    }
}

pub fn update_curriculum(
    cfg: &CurriculumConfig,
    mut state: CurriculumState,
    env: usize,
    result: &EpisodeResult,
) -> CurriculumState {
    if cfg.terrain_enabled {
        let old = state.levels[env];
        let new = next_level(cfg, old, result);
        if new > old {
            state.promotions += 1;
        } else if new < old {
            state.demotions += 1;
        }
        state.levels[env] = new;
    }
    state.refresh_ranges(cfg);
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn result(distance: f64, fell: bool) -> EpisodeResult {
        EpisodeResult {
            distance,
            commanded_distance: 10.0,
            fell,
            tile_length: 8.0,
        }
    }

    #[test]
    fn promotion_demotion_and_clamps() {
        let cfg = CurriculumConfig::default();
        assert_eq!(next_level(&cfg, 3, &result(8.0, false)), 4);
        assert_eq!(next_level(&cfg, 3, &result(0.0, true)), 2);
        assert_eq!(next_level(&cfg, 9, &result(8.0, false)), 9);
        assert_eq!(next_level(&cfg, 0, &result(0.0, true)), 0);
        assert_eq!(next_level(&cfg, 5, &result(3.0, false)), 5);
    }

    #[test]
    fn traversal_with_fall_is_not_promoted() {
        let cfg = CurriculumConfig::default();
        assert_eq!(next_level(&cfg, 3, &result(6.0, true)), 3);
    }

    #[test]
    fn command_range_widens_with_mean_level() {
        let cfg = CurriculumConfig::default();
        let mut s = CurriculumState::new(&cfg, 2);
        assert_eq!(s.ranges.lin_x, Range(-0.5, 0.5));
        s.levels = vec![9, 9];
        s.refresh_ranges(&cfg);
        assert_eq!(s.ranges.lin_x, Range(-1.0, 1.0));
    }

    #[test]
    fn draws_reproducible() {
        let a = sample_randomization(&mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_randomization(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn push_schedule() {
        assert!(!push_due(0, 350));
        assert!(!push_due(349, 350));
        assert!(push_due(350, 350));
        assert!(!push_due(351, 350));
    }
}
