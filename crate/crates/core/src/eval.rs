//! Deterministic rollouts of a trained policy: success-rate evaluation on a
//! single terrain family and latent export for external projection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::agent::{ActInput, ActorCritic, Variant};
use crate::config::TrainConfig;
use crate::env::{Env, EnvContext, ObservationFrame, StepOutput};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::randomization::{CommandRanges, CurriculumState, Range};
use crate::rewards::{NUM_TERMS, TERM_NAMES};
use crate::terrain::{Family, TerrainConfig, TerrainWorld};
use crate::trainer::{critic_input, derive_seed};

const STREAM_EVAL_WORLD: u64 = 11;
const STREAM_EVAL_ENV: u64 = 5000;

/// Lock-step batch of environments driven by the mean action.
struct PolicyRunner<'a> {
    model: &'a ActorCritic,
    params: &'a ParamSet,
    envs: Vec<Env>,
    frames: Vec<ObservationFrame>,
    actor_h: Array2<f64>,
    critic_h: Array2<f64>,
}

struct RunnerStep {
    outputs: Vec<Result<StepOutput>>,
    feature: Array2<f64>,
}

impl<'a> PolicyRunner<'a> {
    fn new(model: &'a ActorCritic, params: &'a ParamSet, envs: Vec<Env>, frames: Vec<ObservationFrame>) -> Self {
        let n = envs.len();
        let h = model.dims.gru_hidden;
        PolicyRunner {
            model,
            params,
            envs,
            frames,
            actor_h: Array2::zeros((n, h)),
            critic_h: Array2::zeros((n, h)),
        }
    }

    fn step(&mut self, ctx: &EnvContext) -> Result<RunnerStep> {
        let n = self.envs.len();
        let dims = self.model.dims;
        let variant = self.model.variant;
        let mut policy = Array2::zeros((n, dims.proprio));
        let mut slices = Array2::zeros((n, dims.slice()));
        let mut critic = Array2::zeros((n, dims.critic_input(variant)));
        for (e, env) in self.envs.iter_mut().enumerate() {
            let p = ctx.env.scales.scale_policy(&self.frames[e].full);
            let (_, new) = env.history.twin_views(&p)?;
            env.history.push(&p)?;
            policy.row_mut(e).assign(&ArrayView1::from(&p));
            slices.row_mut(e).assign(&ArrayView1::from(&new));
            critic.row_mut(e).assign(&ArrayView1::from(&critic_input(env, ctx, variant)));
        }
        let out = self.model.act(
            self.params,
            &ActInput {
                policy_obs: policy.view(),
                new_slices: slices.view(),
                critic_obs: critic.view(),
                actor_h: self.actor_h.view(),
                critic_h: self.critic_h.view(),
            },
        )?;
        self.actor_h = out.actor_h;
        self.critic_h = out.critic_h;
        let mut outputs = Vec::with_capacity(n);
        for (e, env) in self.envs.iter_mut().enumerate() {
            let action = out.mean.row(e).to_vec();
            let r = env.step(ctx, &action);
            if let Ok(o) = &r {
                if !o.done {
                    self.frames[e] = env.observe(ctx.env);
                }
            }
            outputs.push(r);
        }
        Ok(RunnerStep {
            outputs,
            feature: out.feature,
        })
    }

    fn reset(&mut self, e: usize, ctx: &EnvContext, level: usize, ranges: &CommandRanges) {
        self.frames[e] = self.envs[e].reset(ctx, level, ranges);
        self.actor_h.row_mut(e).fill(0.0);
        self.critic_h.row_mut(e).fill(0.0);
    }
}

fn family_world(cfg: &TrainConfig, family: Family, seed: u64) -> Result<TerrainWorld> {
    let tcfg = TerrainConfig {
        train_families: vec![family],
        ..cfg.terrain.clone()
    };
    TerrainWorld::generate(&tcfg, derive_seed(seed, STREAM_EVAL_WORLD))
}

fn fixed_ranges(command: [f64; 3]) -> CommandRanges {
    CommandRanges {
        lin_x: Range(command[0], command[0]),
        lin_y: Range(command[1], command[1]),
        yaw: Range(command[2], command[2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode_return: f64,
    pub length: u64,
    pub distance: f64,
    pub commanded_distance: f64,
    pub fell: bool,
    pub success: bool,
    pub lin_vel_tracking_error: f64,
    pub ang_vel_tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub family: Family,
    pub level: usize,
    pub seed: u64,
    pub episodes: usize,
    pub success_traversal: f64,
    pub success_rate: f64,
    pub fall_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub mean_distance: f64,
    pub lin_vel_tracking_error: f64,
    pub ang_vel_tracking_error: f64,
    /// Per-step mean of each weighted reward term over all episodes.
    pub reward_terms: BTreeMap<String, f64>,
    pub per_episode: Vec<EpisodeRecord>,
}

/// Runs `episodes` deterministic episodes on `family` at `level`, each under
/// the fixed command `cfg.eval.command`.
pub fn evaluate(
    cfg: &TrainConfig,
    model: &ActorCritic,
    params: &ParamSet,
    family: Family,
    level: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    run_evaluation(cfg, model, params, family, level, episodes, seed, None)
}

/// Header of the per-step state trace written by [`evaluate_traced`].
pub fn trace_header() -> String {
    let mut h = String::from("episode,step,x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz");
    for prefix in ["q", "qd", "tau"] {
        for j in 0..crate::env::NUM_JOINTS {
            let _ = write!(h, ",{prefix}{j}");
        }
    }
    h.push_str(",fz_left,fz_right,reward\n");
    h
}

fn trace_line(out: &mut String, episode: usize, env: &Env, reward: f64) {
    let s = &env.state;
    let _ = write!(out, "{episode},{}", env.step_count);
    for v in s.pos.iter().chain(&s.quat).chain(&s.lin_vel).chain(&s.ang_vel) {
        let _ = write!(out, ",{v}");
    }
    for v in s.q.iter().chain(&s.qd).chain(&s.tau) {
        let _ = write!(out, ",{v}");
    }
    let _ = writeln!(out, ",{},{},{reward}", s.foot_force[0][2], s.foot_force[1][2]);
}

/// [`evaluate`] plus a CSV of the full robot state after every step.
pub fn evaluate_traced(
    cfg: &TrainConfig,
    model: &ActorCritic,
    params: &ParamSet,
    family: Family,
    level: usize,
    episodes: usize,
    seed: u64,
) -> Result<(EvalReport, String)> {
    let mut trace = trace_header();
    let report = run_evaluation(cfg, model, params, family, level, episodes, seed, Some(&mut trace))?;
    Ok((report, trace))
}

#[allow(clippy::too_many_arguments)]
fn run_evaluation(
    cfg: &TrainConfig,
    model: &ActorCritic,
    params: &ParamSet,
    family: Family,
    level: usize,
    episodes: usize,
    seed: u64,
    mut trace: Option<&mut String>,
) -> Result<EvalReport> {
    if level > crate::terrain::MAX_LEVEL {
        return Err(Error::Config(format!(
            "level {level} is outside the valid interval [0, {}]",
            crate::terrain::MAX_LEVEL
        )));
    }
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let world = family_world(cfg, family, seed)?;
    let ctx = EnvContext {
        env: &cfg.env,
        rewards: &cfg.rewards,
        randomization: &cfg.randomization,
        world: &world,
    };
    let ranges = fixed_ranges(cfg.eval.command);
    let mut envs: Vec<Env> = (0..episodes)
        .map(|i| Env::new(i % world.num_rows(), derive_seed(seed, STREAM_EVAL_ENV + i as u64)))
        .collect();
    let frames = envs.iter_mut().map(|e| e.reset(&ctx, level, &ranges)).collect();
    let mut runner = PolicyRunner::new(model, params, envs, frames);

    let mut records: Vec<Option<EpisodeRecord>> = vec![None; episodes];
    let mut term_sums = [0.0; NUM_TERMS];
    let mut steps = 0usize;
    while records.iter().any(Option::is_none) {
        let step = runner.step(&ctx)?;
        for (e, r) in step.outputs.into_iter().enumerate() {
            if records[e].is_some() {
                continue;
            }
            let o = match r {
                Ok(o) => o,
                Err(err) => {
                    records[e] = Some(EpisodeRecord {
                        episode_return: runner.envs[e].episode_return,
                        length: runner.envs[e].step_count,
                        distance: 0.0,
                        commanded_distance: runner.envs[e].commanded_distance,
                        fell: true,
                        success: false,
                        lin_vel_tracking_error: f64::NAN,
                        ang_vel_tracking_error: f64::NAN,
                    });
                    eprintln!("warning: evaluation episode {e} faulted: {err}");
                    continue;
                }
            };
            steps += 1;
            if let Some(t) = trace.as_deref_mut() {
                trace_line(t, e, &runner.envs[e], o.reward);
            }
            for (s, v) in term_sums.iter_mut().zip(o.terms.weighted.iter()) {
                *s += v;
            }
            if let Some(sum) = o.episode {
                let res = sum.result;
                let success = !res.fell && res.distance >= cfg.eval.success_traversal * res.commanded_distance;
                records[e] = Some(EpisodeRecord {
                    episode_return: sum.episode_return,
                    length: sum.length,
                    distance: res.distance,
                    commanded_distance: res.commanded_distance,
                    fell: res.fell,
                    success,
                    lin_vel_tracking_error: sum.mean_lin_error,
                    ang_vel_tracking_error: sum.mean_ang_error,
                });
            }
        }
    }
    let per_episode: Vec<EpisodeRecord> = records.into_iter().map(|r| r.expect("finished")).collect();
    let k = episodes as f64;
    let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| per_episode.iter().map(f).sum::<f64>() / k;
    let steps = steps.max(1) as f64;
    Ok(EvalReport {
        family,
        level,
        seed,
        episodes,
        success_traversal: cfg.eval.success_traversal,
        success_rate: mean(&|r| r.success as u8 as f64),
        fall_rate: mean(&|r| r.fell as u8 as f64),
        mean_return: mean(&|r| r.episode_return),
        mean_length: mean(&|r| r.length as f64),
        mean_distance: mean(&|r| r.distance),
        lin_vel_tracking_error: mean(&|r| r.lin_vel_tracking_error),
        ang_vel_tracking_error: mean(&|r| r.ang_vel_tracking_error),
        reward_terms: TERM_NAMES
            .iter()
            .zip(term_sums)
            .map(|(n, s)| (n.to_string(), s / steps))
            .collect(),
        per_episode,
    })
}

/// Latent rows collected per family, ready to be written as CSV.
#[derive(Debug, Clone)]
pub struct LatentTable {
    pub latent_dim: usize,
    pub rows: Vec<LatentRow>,
}

#[derive(Debug, Clone)]
pub struct LatentRow {
    /// Unique across the whole table; a new id starts whenever an environment resets.
    pub episode_id: usize,
    /// Step within the episode.
    pub step: usize,
    pub family: Family,
    pub level: usize,
    pub z: Vec<f64>,
}

impl LatentTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode_id,step,terrain_family,terrain_level");
        for i in 0..self.latent_dim {
            let _ = write!(out, ",z_{i}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.episode_id, r.step, r.family, r.level);
            for v in &r.z {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn rows_for(&self, family: Family) -> usize {
        self.rows.iter().filter(|r| r.family == family).count()
    }
}

/// Records the actor's latent `z` every step while the deterministic policy
/// walks each family's terrain under curriculum-start commands.
#[allow(clippy::too_many_arguments)]
pub fn export_latents(
    cfg: &TrainConfig,
    model: &ActorCritic,
    params: &ParamSet,
    families: &[Family],
    level: usize,
    envs_per_family: usize,
    steps: usize,
    seed: u64,
) -> Result<LatentTable> {
    if model.variant != Variant::BarlowWalk {
        return Err(Error::Config(
            "latent export needs a checkpoint with the history latent (trainer.baseline2 = false)".into(),
        ));
    }
    let latent_dim = model.dims.encoder.latent;
    let ranges = CurriculumState::new(&cfg.curriculum, 1).ranges;
    let mut rows = Vec::with_capacity(families.len() * envs_per_family * steps);
    let mut next_id = 0usize;
    for (fi, &family) in families.iter().enumerate() {
        let fseed = derive_seed(seed, 100 + fi as u64);
        let world = family_world(cfg, family, fseed)?;
        let ctx = EnvContext {
            env: &cfg.env,
            rewards: &cfg.rewards,
            randomization: &cfg.randomization,
            world: &world,
        };
        let mut envs: Vec<Env> = (0..envs_per_family)
            .map(|i| Env::new(i % world.num_rows(), derive_seed(fseed, STREAM_EVAL_ENV + i as u64)))
            .collect();
        let frames = envs.iter_mut().map(|e| e.reset(&ctx, level, &ranges)).collect();
        let mut runner = PolicyRunner::new(model, params, envs, frames);
        let mut episode: Vec<(usize, usize)> = (next_id..next_id + envs_per_family).map(|id| (id, 0)).collect();
        next_id += envs_per_family;
        for _ in 0..steps {
            let out = runner.step(&ctx)?;
            for (e, r) in out.outputs.iter().enumerate() {
                let (id, step) = episode[e];
                rows.push(LatentRow {
                    episode_id: id,
                    step,
                    family,
                    level,
                    z: out.feature.row(e).to_vec(),
                });
                let done = match r {
                    Ok(o) => o.done,
                    Err(_) => true,
                };
                if done {
                    runner.reset(e, &ctx, level, &ranges);
                    episode[e] = (next_id, 0);
                    next_id += 1;
                } else {
                    episode[e].1 += 1;
                }
            }
        }
    }
    Ok(LatentTable { latent_dim, rows })
}
