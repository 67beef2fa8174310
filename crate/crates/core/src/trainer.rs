//! Rollout collection, PPO updates, curriculum bookkeeping, metrics and
//! checkpoints.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{audit_dimensions, ActInput, ActorCritic, ArchDims, Variant};
use crate::config::TrainConfig;
use crate::env::{Env, EnvContext, ObservationFrame, StepOutput};
use crate::error::{Error, Result};
use crate::nn::gaussian::gaussian_head;
use crate::nn::ParamSet;
use crate::ppo::{Learner, RolloutBatch, UpdateStats};
use crate::randomization::{update_curriculum, CurriculumState};
use crate::rewards::{NUM_TERMS, TERM_NAMES};
use crate::terrain::{Family, TerrainWorld};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
const STATE_MAGIC: &[u8; 8] = b"BWLKSTAT";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration}.bwlk")
}

/// Stable per-purpose seed derivation.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scaled policy observation, old and new history slices, critic input.
type StepInputs = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

const STREAM_WORLD: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_ENV: u64 = 1000;

/// One JSON line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iteration: u64,
    /// Mean return of the most recent finished episodes; `null` until one ends.
    pub mean_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub episodes: u64,
    pub step_reward: f64,
    pub mean_terrain_level: f64,
    /// Mean level of the environments on each trained family's rows.
    pub terrain_levels: BTreeMap<String, f64>,
    pub lin_vel_tracking_error: f64,
    pub ang_vel_tracking_error: f64,
    pub loss_pi: f64,
    pub loss_v: f64,
    pub loss_bt: f64,
    pub entropy: f64,
    pub kl: f64,
    pub lr: f64,
    pub c_diag_mean: f64,
    pub c_offdiag_rms: f64,
    pub grad_norm: f64,
    pub steps_skipped: usize,
    pub action_std: f64,
    pub lin_x_command_max: f64,
    /// Per-step mean of each weighted reward term.
    pub reward_terms: BTreeMap<String, f64>,
    pub wall_clock: f64,
}

/// Aggregates gathered while stepping.
#[derive(Debug, Clone, Default)]
pub struct RolloutStats {
    pub reward_sum: f64,
    pub lin_error_sum: f64,
    pub ang_error_sum: f64,
    pub term_sums: Vec<f64>,
    pub steps: usize,
    pub finished_returns: Vec<f64>,
    pub finished_lengths: Vec<u64>,
    pub faults: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    config: TrainConfig,
    iteration: u64,
    lr: f64,
    adam_step: u64,
    consecutive_skips: u32,
    envs: Vec<Env>,
    frames: Vec<ObservationFrame>,
    actor_h: Vec<f64>,
    critic_h: Vec<f64>,
    curriculum: CurriculumState,
    recent_returns: Vec<f64>,
    recent_lengths: Vec<u64>,
    episodes: u64,
    elapsed: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub world: TerrainWorld,
    pub learner: Learner,
    pub envs: Vec<Env>,
    /// Latest observation of each environment, not yet acted on.
    pub frames: Vec<ObservationFrame>,
    pub actor_h: Array2<f64>,
    pub critic_h: Array2<f64>,
    pub curriculum: CurriculumState,
    pub iteration: u64,
    pub recent_returns: VecDeque<f64>,
    pub recent_lengths: VecDeque<u64>,
    pub episodes: u64,
    /// Seconds of training accumulated before the current process.
    pub elapsed_before: f64,
    pool: rayon::ThreadPool,
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

pub fn build_model(cfg: &TrainConfig) -> Result<ActorCritic> {
    ActorCritic::new(ArchDims::default(), cfg.variant())
}

/// The network input built from an environment's privileged view.
pub fn critic_input(env: &Env, ctx: &EnvContext, variant: Variant) -> Vec<f64> {
    let scales = &ctx.env.scales;
    match variant {
        Variant::BarlowWalk => {
            let raw = env.critic_observation(ctx);
            let mut out = scales.scale_full(&raw[..crate::env::FULL_OBS_DIM]);
            out.extend(raw[crate::env::FULL_OBS_DIM..].iter().map(|h| h * scales.height_scan));
            out
        }
        Variant::Baseline2 => scales.scale_full(&env.observe_noiseless(ctx.env).full),
    }
}

fn zero_rows(h: &mut Array2<f64>, rows: &[usize]) {
    for &r in rows {
        h.row_mut(r).fill(0.0);
    }
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        audit_dimensions()?;
        let seed = cfg.trainer.seed;
        let world = TerrainWorld::generate(&cfg.terrain, derive_seed(seed, STREAM_WORLD))?;
        let model = build_model(&cfg)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
        let params = model.init_params(cfg.ppo.init_noise_std, &mut init_rng)?;
        let learner = Learner::new(model, params, &cfg.ppo);
        let n = cfg.trainer.num_envs;
        let curriculum = CurriculumState::new(&cfg.curriculum, n);
        let mut envs: Vec<Env> = (0..n)
            .map(|e| Env::new(e % world.num_rows(), derive_seed(seed, STREAM_ENV + e as u64)))
            .collect();
        let ctx = EnvContext {
            env: &cfg.env,
            rewards: &cfg.rewards,
            randomization: &cfg.randomization,
            world: &world,
        };
        let frames = envs
            .iter_mut()
            .enumerate()
            .map(|(e, env)| env.reset(&ctx, curriculum.levels[e], &curriculum.ranges))
            .collect();
        let hidden = learner.model.dims.gru_hidden;
        let pool = build_pool(cfg.trainer.workers)?;
        Ok(Trainer {
            world,
            learner,
            envs,
            frames,
            actor_h: Array2::zeros((n, hidden)),
            critic_h: Array2::zeros((n, hidden)),
            curriculum,
            iteration: 0,
            recent_returns: VecDeque::new(),
            recent_lengths: VecDeque::new(),
            episodes: 0,
            elapsed_before: 0.0,
            pool,
            cfg,
        })
    }

    pub fn ctx(&self) -> EnvContext<'_> {
        EnvContext {
            env: &self.cfg.env,
            rewards: &self.cfg.rewards,
            randomization: &self.cfg.randomization,
            world: &self.world,
        }
    }

    /// Steps every environment `horizon` times under the current policy.
    pub fn collect_rollout(&mut self) -> Result<(RolloutBatch, RolloutStats)> {
        let cfg = &self.cfg;
        let model = &self.learner.model;
        let params = &self.learner.params;
        let variant = model.variant;
        let dims = model.dims;
        let n = cfg.trainer.num_envs;
        let horizon = cfg.trainer.horizon;
        let mut batch = RolloutBatch::zeros(
            horizon,
            n,
            dims.proprio,
            dims.slice(),
            dims.critic_input(variant),
            dims.action,
            dims.gru_hidden,
        );
        let log_std = model.log_std(params)?;
        batch.log_std = log_std.clone();
        let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
        let mut stats = RolloutStats {
            term_sums: vec![0.0; NUM_TERMS],
            ..Default::default()
        };
        let ctx = EnvContext {
            env: &cfg.env,
            rewards: &cfg.rewards,
            randomization: &cfg.randomization,
            world: &self.world,
        };
        let scales = &cfg.env.scales;

        for t in 0..horizon {
            let rows = t * n..(t + 1) * n;
            let inputs: Vec<Result<StepInputs>> = self.pool.install(|| {
                self.envs
                    .par_iter_mut()
                    .zip(self.frames.par_iter())
                    .map(|(env, frame)| {
                        let p = scales.scale_policy(&frame.full);
                        let (old, new) = env.history.twin_views(&p)?;
                        env.history.push(&p)?;
                        let c = critic_input(env, &ctx, variant);
                        Ok((p, old, new, c))
                    })
                    .collect()
            });
            for (e, item) in inputs.into_iter().enumerate() {
                let (p, old, new, c) = item?;
                let r = rows.start + e;
                batch.policy_obs.row_mut(r).assign(&ndarray::ArrayView1::from(&p));
                batch.old_slices.row_mut(r).assign(&ndarray::ArrayView1::from(&old));
                batch.new_slices.row_mut(r).assign(&ndarray::ArrayView1::from(&new));
                batch.critic_obs.row_mut(r).assign(&ndarray::ArrayView1::from(&c));
            }
            batch.actor_h.slice_mut(s![rows.clone(), ..]).assign(&self.actor_h);
            batch.critic_h.slice_mut(s![rows.clone(), ..]).assign(&self.critic_h);

            let out = model.act(
                params,
                &ActInput {
                    policy_obs: batch.policy_obs.slice(s![rows.clone(), ..]),
                    new_slices: batch.new_slices.slice(s![rows.clone(), ..]),
                    critic_obs: batch.critic_obs.slice(s![rows.clone(), ..]),
                    actor_h: self.actor_h.view(),
                    critic_h: self.critic_h.view(),
                },
            )?;

            let mut actions = Vec::with_capacity(n);
            for (e, env) in self.envs.iter_mut().enumerate() {
                let mean = out.mean.row(e);
                let a: Vec<f64> = mean
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| m + s * env.rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let (lp, _) = gaussian_head(mean.as_slice().expect("contiguous"), &log_std, &a);
                let r = rows.start + e;
                batch.means.row_mut(r).assign(&mean);
                batch.actions.row_mut(r).assign(&ndarray::ArrayView1::from(&a));
                batch.log_probs[r] = lp;
                batch.values[r] = out.value[e];
                actions.push(a);
            }

            let results: Vec<(Option<StepOutput>, Option<String>, Option<ObservationFrame>)> =
                self.pool.install(|| {
                    self.envs
                        .par_iter_mut()
                        .zip(actions.par_iter())
                        .map(|(env, a)| match env.step(&ctx, a) {
                            Ok(o) => {
                                let frame = (!o.done).then(|| env.observe(ctx.env));
                                (Some(o), None, frame)
                            }
                            Err(err) => (None, Some(err.to_string()), None),
                        })
                        .collect()
                });

            let mut reset_rows = Vec::new();
            for (e, (step, fault, frame)) in results.into_iter().enumerate() {
                let r = rows.start + e;
                let (reward, done, summary) = match step {
                    Some(o) => {
                        stats.lin_error_sum += o.lin_error;
                        stats.ang_error_sum += o.ang_error;
                        for (acc, v) in stats.term_sums.iter_mut().zip(o.terms.weighted.iter()) {
                            *acc += v;
                        }
                        (o.reward, o.done, o.episode)
                    }
                    None => {
                        stats.faults += 1;
                        eprintln!("warning: environment {e} fault: {}", fault.unwrap_or_default());
                        (0.0, true, None)
                    }
                };
                stats.reward_sum += reward;
                stats.steps += 1;
                let mut stored = reward;
                if let Some(sum) = &summary {
                    if sum.timeout && !sum.result.fell && cfg.trainer.bootstrap_timeouts {
                        stored += cfg.ppo.gamma * out.value[e];
                    }
                    if sum.fault.is_some() {
                        stats.faults += 1;
                    }
                    stats.finished_returns.push(sum.episode_return);
                    stats.finished_lengths.push(sum.length);
                    self.curriculum =
                        update_curriculum(&cfg.curriculum, self.curriculum.clone(), e, &sum.result);
                }
                batch.rewards[r] = stored;
                batch.dones[r] = done;
                if done {
                    reset_rows.push(e);
                    let level = self.curriculum.levels[e];
                    self.frames[e] = self.envs[e].reset(&ctx, level, &self.curriculum.ranges);
                } else if let Some(f) = frame {
                    self.frames[e] = f;
                }
            }
            self.actor_h = out.actor_h;
            self.critic_h = out.critic_h;
            zero_rows(&mut self.actor_h, &reset_rows);
            zero_rows(&mut self.critic_h, &reset_rows);
        }

        let critic_obs: Vec<Vec<f64>> = self.pool.install(|| {
            self.envs.par_iter().map(|env| critic_input(env, &ctx, variant)).collect()
        });
        let width = dims.critic_input(variant);
        let flat: Vec<f64> = critic_obs.into_iter().flatten().collect();
        let co = ArrayView2::from_shape((n, width), &flat)
            .map_err(|e| Error::Config(format!("critic batch: {e}")))?;
        let last = model.value(params, co, self.critic_h.view())?;
        batch.last_values = last.to_vec();
        Ok((batch, stats))
    }

    fn record_episodes(&mut self, stats: &RolloutStats) {
        let window = self.cfg.trainer.return_window;
        for (&r, &l) in stats.finished_returns.iter().zip(&stats.finished_lengths) {
            self.recent_returns.push_back(r);
            self.recent_lengths.push_back(l);
            self.episodes += 1;
        }
        while self.recent_returns.len() > window {
            self.recent_returns.pop_front();
            self.recent_lengths.pop_front();
        }
    }

    pub fn family_levels(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for family in Family::ALL {
            let rows = self.world.rows_of(family);
            let levels: Vec<usize> = self
                .envs
                .iter()
                .enumerate()
                .filter(|(_, env)| rows.contains(&env.row))
                .map(|(e, _)| self.curriculum.levels[e])
                .collect();
            if !levels.is_empty() {
                let mean = levels.iter().sum::<usize>() as f64 / levels.len() as f64;
                out.insert(family.name().to_string(), mean);
            }
        }
        out
    }

    /// One collect/update cycle; returns the metrics record for it.
    pub fn iterate(&mut self, started: Instant) -> Result<RunMetrics> {
        let (batch, stats) = self.collect_rollout()?;
        let cfg = self.cfg.clone();
        let barlow = crate::ppo::BarlowConfig {
            enabled: cfg.barlow_active(),
            ..cfg.barlow.clone()
        };
        let update: UpdateStats = self.learner.update(&batch, &cfg.ppo, &barlow)?;
        self.iteration += 1;
        self.record_episodes(&stats);

        let steps = stats.steps.max(1) as f64;
        let mean_of = |v: &VecDeque<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let lengths: VecDeque<f64> = self.recent_lengths.iter().map(|&l| l as f64).collect();
        let log_std = self.learner.model.log_std(&self.learner.params)?;
        let reward_terms = TERM_NAMES
            .iter()
            .zip(&stats.term_sums)
            .map(|(name, s)| (name.to_string(), s / steps))
            .collect();
        Ok(RunMetrics {
            iteration: self.iteration,
            mean_reward: mean_of(&self.recent_returns),
            mean_episode_length: mean_of(&lengths),
            episodes: self.episodes,
            step_reward: stats.reward_sum / steps,
            mean_terrain_level: self.curriculum.mean_level(),
            terrain_levels: self.family_levels(),
            lin_vel_tracking_error: stats.lin_error_sum / steps,
            ang_vel_tracking_error: stats.ang_error_sum / steps,
            loss_pi: update.loss_pi,
            loss_v: update.loss_v,
            loss_bt: update.loss_bt,
            entropy: update.entropy,
            kl: update.kl,
            lr: update.lr,
            c_diag_mean: update.corr.diag_mean,
            c_offdiag_rms: update.corr.offdiag_rms,
            grad_norm: update.grad_norm,
            steps_skipped: update.steps_skipped,
            action_std: log_std.iter().map(|l| l.exp()).sum::<f64>() / log_std.len() as f64,
            lin_x_command_max: self.curriculum.ranges.lin_x.1,
            reward_terms,
            wall_clock: self.elapsed_before + started.elapsed().as_secs_f64(),
        })
    }

    fn state(&self, elapsed: f64) -> TrainerState {
        TrainerState {
            config: self.cfg.clone(),
            iteration: self.iteration,
            lr: self.learner.lr,
            adam_step: self.learner.adam.step,
            consecutive_skips: self.learner.consecutive_skips,
            envs: self.envs.clone(),
            frames: self.frames.clone(),
            actor_h: self.actor_h.iter().copied().collect(),
            critic_h: self.critic_h.iter().copied().collect(),
            curriculum: self.curriculum.clone(),
            recent_returns: self.recent_returns.iter().copied().collect(),
            recent_lengths: self.recent_lengths.iter().copied().collect(),
            episodes: self.episodes,
            elapsed,
        }
    }

    /// Writes the parameter container (weights plus Adam moments) followed by
    /// a JSON block with everything else needed to resume.
    pub fn save_checkpoint(&self, path: &Path, elapsed: f64) -> Result<()> {
        let mut all = self.learner.params.clone();
        all.extend_prefixed("adam.m.", &self.learner.adam.m)?;
        all.extend_prefixed("adam.v.", &self.learner.adam.v)?;
        let json = serde_json::to_vec(&self.state(elapsed))?;
        let tmp = path.with_extension("bwlk.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            all.write_to(&mut w)?;
            w.write_all(STATE_MAGIC)?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let state = ck.state;
        let cfg = state.config;
        cfg.validate()?;
        let world = TerrainWorld::generate(&cfg.terrain, derive_seed(cfg.trainer.seed, STREAM_WORLD))?;
        let mut learner = Learner::new(ck.model, ck.params, &cfg.ppo);
        learner.adam.m.load_values_from(&ck.adam_m)?;
        learner.adam.v.load_values_from(&ck.adam_v)?;
        learner.adam.step = state.adam_step;
        learner.lr = state.lr;
        learner.consecutive_skips = state.consecutive_skips;
        let n = cfg.trainer.num_envs;
        let hidden = learner.model.dims.gru_hidden;
        let to_arr = |v: Vec<f64>| {
            Array2::from_shape_vec((n, hidden), v)
                .map_err(|e| Error::Checkpoint(format!("hidden state shape: {e}")))
        };
        if state.envs.len() != n || state.frames.len() != n {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} environments, config expects {n}",
                state.envs.len()
            )));
        }
        let pool = build_pool(cfg.trainer.workers)?;
        Ok(Trainer {
            world,
            learner,
            envs: state.envs,
            frames: state.frames,
            actor_h: to_arr(state.actor_h)?,
            critic_h: to_arr(state.critic_h)?,
            curriculum: state.curriculum,
            iteration: state.iteration,
            recent_returns: state.recent_returns.into(),
            recent_lengths: state.recent_lengths.into(),
            episodes: state.episodes,
            elapsed_before: state.elapsed,
            pool,
            cfg,
        })
    }
}

/// Parsed checkpoint contents.
pub struct Checkpoint {
    pub model: ActorCritic,
    pub params: ParamSet,
    pub adam_m: ParamSet,
    pub adam_v: ParamSet,
    state: TrainerState,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(
            File::open(path)
                .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?,
        );
        let all = ParamSet::read_from(&mut r)?;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint has no state block".into()))?;
        if &magic != STATE_MAGIC {
            return Err(Error::Format("bad checkpoint state block magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let state: TrainerState = serde_json::from_slice(&json)?;

        let model = build_model(&state.config)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = model.init_params(1.0, &mut init_rng)?;
        let mut stored = ParamSet::new();
        for entry in all.iter().filter(|e| !e.name.starts_with("adam.")) {
            stored.insert(&entry.name, &entry.shape, entry.values.clone())?;
        }
        params.same_layout(&stored)?;
        params.load_values_from(&stored)?;
        let mut adam_m = params.zeros_like();
        let mut adam_v = params.zeros_like();
        adam_m.load_values_from(&all.extract_prefixed("adam.m."))?;
        adam_v.load_values_from(&all.extract_prefixed("adam.v."))?;
        Ok(Checkpoint {
            model,
            params,
            adam_m,
            adam_v,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub iterations: u64,
    pub interrupted: bool,
}

/// Runs (or resumes) training in `run_dir`, appending one metrics line per
/// iteration and checkpointing periodically, at the end, and on `stop`.
pub fn train(mut trainer: Trainer, run_dir: &Path, stop: Option<&AtomicBool>) -> Result<TrainOutcome> {
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join(CONFIG_SNAPSHOT), trainer.cfg.to_toml()?)?;
    let mut metrics = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(METRICS_FILE))?;
    let started = Instant::now();
    let total = trainer.cfg.trainer.iterations;
    let interval = trainer.cfg.trainer.checkpoint_interval;
    let mut interrupted = false;
    let mut last_ckpt = None;
    while trainer.iteration < total {
        if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let record = trainer.iterate(started)?;
        serde_json::to_writer(&mut metrics, &record)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        if trainer.iteration.is_multiple_of(interval) {
            let p = run_dir.join(checkpoint_name(trainer.iteration));
            trainer.save_checkpoint(&p, trainer.elapsed_before + started.elapsed().as_secs_f64())?;
            last_ckpt = Some(p);
        }
    }
    let final_path = run_dir.join(checkpoint_name(trainer.iteration));
    if last_ckpt.as_deref() != Some(final_path.as_path()) {
        trainer.save_checkpoint(&final_path, trainer.elapsed_before + started.elapsed().as_secs_f64())?;
    }
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        final_checkpoint: final_path,
        iterations: trainer.iteration,
        interrupted,
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunMetrics>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
