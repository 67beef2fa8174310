//! Training configuration: nested TOML sections, `key=value` overrides and
//! range validation. Key names are dotted paths such as `ppo.clip_range`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Variant;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ppo::{BarlowConfig, PpoConfig};
use crate::randomization::{CurriculumConfig, RandomizationConfig};
use crate::rewards::RewardConfig;
use crate::terrain::{Family, TerrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub num_envs: usize,
    pub horizon: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Worker threads for environment stepping; 0 uses every core.
    pub workers: usize,
    /// History-MLP-only policy with no latent, projector or terrain scan.
    pub baseline2: bool,
    pub checkpoint_interval: u64,
    /// Episodes averaged into `mean_reward`.
    pub return_window: usize,
    /// Adds `gamma * V(s)` to the reward of steps that end by timeout.
    pub bootstrap_timeouts: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            num_envs: 64,
            horizon: crate::ppo::ROLLOUT_HORIZON,
            iterations: 1500,
            seed: 1,
            workers: 0,
            baseline2: false,
            checkpoint_interval: 100,
            return_window: 100,
            bootstrap_timeouts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fraction of the commanded path an episode must cover to count as a success.
    pub success_traversal: f64,
    pub command: [f64; 3],
    pub episodes: usize,
    pub latent_envs: usize,
    pub latent_steps: usize,
    pub latent_level: usize,
    pub latent_families: Vec<Family>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            success_traversal: 0.8,
            command: [0.5, 0.0, 0.0],
            episodes: 10,
            latent_envs: 8,
            latent_steps: 150,
            latent_level: 2,
            latent_families: Family::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub trainer: TrainerConfig,
    pub ppo: PpoConfig,
    pub barlow: BarlowConfig,
    pub env: EnvConfig,
    pub terrain: TerrainConfig,
    pub rewards: RewardConfig,
    pub randomization: RandomizationConfig,
    pub curriculum: CurriculumConfig,
    pub eval: EvalConfig,
}

fn interval_error(key: &str, value: f64, interval: &str) -> Error {
    Error::Config(format!("{key} = {value} is outside the valid interval {interval}"))
}

fn closed(key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(interval_error(key, v, &format!("[{lo}, {hi}]")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(interval_error(key, v, "(0, inf)"))
    }
}

fn at_least(key: &str, v: u64, lo: u64) -> Result<()> {
    if v >= lo {
        Ok(())
    } else {
        Err(Error::Config(format!("{key} = {v} is outside the valid interval [{lo}, inf)")))
    }
}

impl TrainConfig {
    pub fn variant(&self) -> Variant {
        if self.trainer.baseline2 {
            Variant::Baseline2
        } else {
            Variant::BarlowWalk
        }
    }

    /// Whether the redundancy-reduction loss actually runs.
    pub fn barlow_active(&self) -> bool {
        self.barlow.enabled && !self.trainer.baseline2
    }

    pub fn batch_size(&self) -> usize {
        self.trainer.num_envs * self.trainer.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        at_least("trainer.num_envs", t.num_envs as u64, 1)?;
        at_least("trainer.horizon", t.horizon as u64, 1)?;
        at_least("trainer.iterations", t.iterations, 1)?;
        at_least("trainer.checkpoint_interval", t.checkpoint_interval, 1)?;
        at_least("trainer.return_window", t.return_window as u64, 1)?;

        let p = &self.ppo;
        closed("ppo.gamma", p.gamma, 0.0, 1.0)?;
        closed("ppo.gae_lambda", p.gae_lambda, 0.0, 1.0)?;
        if !(p.clip_range > 0.0 && p.clip_range < 1.0) {
            return Err(interval_error("ppo.clip_range", p.clip_range, "(0, 1)"));
        }
        at_least("ppo.num_epochs", p.num_epochs as u64, 1)?;
        at_least("ppo.num_mini_batches", p.num_mini_batches as u64, 1)?;
        at_least("ppo.max_consecutive_skips", p.max_consecutive_skips as u64, 1)?;
        closed("ppo.entropy_coef", p.entropy_coef, 0.0, f64::MAX)?;
        closed("ppo.value_coef", p.value_coef, 0.0, f64::MAX)?;
        closed("ppo.max_grad_norm", p.max_grad_norm, 0.0, f64::MAX)?;
        positive("ppo.desired_kl", p.desired_kl)?;
        positive("ppo.adam_eps", p.adam_eps)?;
        positive("ppo.init_noise_std", p.init_noise_std)?;
        closed("ppo.lr_min", p.lr_min, f64::MIN_POSITIVE, p.lr_max)?;
        closed("ppo.lr_max", p.lr_max, p.lr_min, f64::MAX)?;
        closed("ppo.learning_rate", p.learning_rate, p.lr_min, p.lr_max)?;
        for (key, b) in [("ppo.adam_beta1", p.adam_beta1), ("ppo.adam_beta2", p.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(interval_error(key, b, "[0, 1)"));
            }
        }
        if !t.num_envs.is_multiple_of(p.num_mini_batches) {
            return Err(Error::Config(format!(
                "ppo.num_mini_batches = {} must divide trainer.num_envs = {} (minibatches hold whole environment sequences)",
                p.num_mini_batches, t.num_envs
            )));
        }
        if self.barlow_active() && t.num_envs * t.horizon / p.num_mini_batches < 2 {
            return Err(Error::Config(
                "each minibatch needs at least 2 samples for the cross-correlation".into(),
            ));
        }
        closed("barlow.lambda", self.barlow.lambda, 0.0, f64::MAX)?;

        closed("eval.success_traversal", self.eval.success_traversal, 0.0, 1.0)?;
        at_least("eval.episodes", self.eval.episodes as u64, 1)?;
        at_least("eval.latent_envs", self.eval.latent_envs as u64, 1)?;
        at_least("eval.latent_steps", self.eval.latent_steps as u64, 1)?;
        closed("eval.latent_level", self.eval.latent_level as f64, 0.0, crate::terrain::MAX_LEVEL as f64)?;

        self.env.validate()?;
        self.terrain.validate()?;
        self.rewards.validate()?;
        self.randomization.validate()?;
        self.curriculum.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("serialising config: {e}")))
    }

    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config does not parse: {e}")))?;
        let reference = default_tree()?;
        check_keys(&table, &reference, "")?;
        for ov in overrides {
            apply_override(&mut table, &reference, ov)?;
        }
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loads `path` (or the defaults when `None`) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    TrainConfig::from_toml_str(&text, overrides)
}

fn default_tree() -> Result<toml::Table> {
    match toml::Value::try_from(TrainConfig::default()) {
        Ok(toml::Value::Table(t)) => Ok(t),
        Ok(_) => Err(Error::Format("default config is not a table".into())),
        Err(e) => Err(Error::Format(format!("serialising defaults: {e}"))),
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn check_keys(table: &toml::Table, reference: &toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in table {
        let path = join(prefix, key);
        match (reference.get(key), value) {
            (None, _) => return Err(Error::Config(format!("unknown configuration key `{path}`"))),
            (Some(toml::Value::Table(r)), toml::Value::Table(t)) => check_keys(t, r, &path)?,
            (Some(toml::Value::Table(_)), _) => {
                return Err(Error::Config(format!("`{path}` is a section, not a value")))
            }
            _ => {}
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, reference: &toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{ov}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut reference = reference;
    let mut node = table;
    for (i, part) in parts.iter().enumerate() {
        let path = parts[..=i].join(".");
        let Some(r) = reference.get(*part) else {
            return Err(Error::Config(format!("unknown configuration key `{path}`")));
        };
        if i + 1 == parts.len() {
            if r.is_table() {
                return Err(Error::Config(format!("`{path}` is a section, not a value")));
            }
            node.insert(part.to_string(), parse_value(raw));
            return Ok(());
        }
        let toml::Value::Table(rt) = r else {
            return Err(Error::Config(format!("`{path}` is a value, not a section")));
        };
        reference = rt;
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(t) = entry else {
            return Err(Error::Config(format!("`{path}` is a value, not a section")));
        };
        node = t;
    }
    Err(Error::Config("empty override key".into()))
}
