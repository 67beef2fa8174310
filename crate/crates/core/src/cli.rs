//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_traced, export_latents};
use crate::gradcheck::run_suite;
use crate::terrain::{generate_tile_with, Family};
use crate::trainer::{read_metrics, train, Checkpoint, RunMetrics, Trainer};

pub const RUN_DIR_ENV: &str = "BARLOWWALK_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "barlowwalk", version, about = "Train and inspect history-encoder locomotion policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy, writing config snapshot, metrics and checkpoints to a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the deterministic policy on one terrain family and level.
    Eval(EvalArgs),
    /// Write the actor's latent vectors on several terrain families to CSV.
    ExportLatents(ExportArgs),
    /// Terrain utilities.
    Terrain {
        #[command(subcommand)]
        command: TerrainCommand,
    },
    /// Finite-difference gradient checks on reduced-width networks.
    CheckGrads(CheckGradsArgs),
    /// Convert a metrics.jsonl file to CSV.
    MetricsToCsv(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set ppo.clip_range=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Exact run directory (skips the timestamped name).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Parent of timestamped run directories; `BARLOWWALK_RUN_DIR` overrides the default `runs`.
    #[arg(long)]
    pub out_root: Option<PathBuf>,
    /// Continue from a checkpoint; the run directory defaults to the checkpoint's.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, visible_alias = "terrain", default_value = "rough")]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    /// Defaults to `eval.episodes`.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override keys of the checkpoint's config (e.g. `eval.success_traversal=0.9`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the full robot state after every step as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated families; defaults to `eval.latent_families`.
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<Family>,
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to `latents.csv` next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TerrainCommand {
    /// Write one tile's heights as CSV (rows along x).
    Dump(TerrainDumpArgs),
}

#[derive(Debug, Args)]
pub struct TerrainDumpArgs {
    #[arg(long, default_value = "rough")]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML config whose `[terrain]` section shapes the tile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckGradsArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub metrics: PathBuf,
    /// Defaults to the input path with a `.csv` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error: 2 for configuration problems, 3 for numerical aborts.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportLatents(a) => cmd_export(a),
        Command::Terrain {
            command: TerrainCommand::Dump(a),
        } => cmd_terrain_dump(a),
        Command::CheckGrads(a) => cmd_check_grads(a),
        Command::MetricsToCsv(a) => cmd_metrics_to_csv(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// A fresh directory under `root`, named by local time and seed.
pub fn timestamped_run_dir(root: &Path, seed: u64) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = root.join(format!("{stamp}-seed{seed}"));
    let mut dir = base.clone();
    let mut k = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{k}", base.display()));
        k += 1;
    }
    dir
}

fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(RUN_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn cancellation_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        eprintln!("interrupt received; checkpointing after the current iteration");
        f.store(true, Ordering::SeqCst);
    }) {
        eprintln!("warning: cannot install interrupt handler: {e}");
    }
    flag
}

fn cmd_train(a: TrainArgs) -> Result<u8> {
    let (trainer, run_dir) = match &a.resume {
        Some(ckpt) => {
            let mut t = Trainer::from_checkpoint(ckpt)?;
            if let Some(n) = a.iterations {
                t.cfg.trainer.iterations = n;
            }
            let dir = a
                .run_dir
                .clone()
                .or_else(|| ckpt.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            (t, dir)
        }
        None => {
            let mut overrides = a.overrides.clone();
            if let Some(s) = a.seed {
                overrides.push(format!("trainer.seed={s}"));
            }
            if let Some(n) = a.iterations {
                overrides.push(format!("trainer.iterations={n}"));
            }
            if let Some(w) = a.workers {
                overrides.push(format!("trainer.workers={w}"));
            }
            let cfg = load_config(a.config.as_deref(), &overrides)?;
            let dir = match &a.run_dir {
                Some(d) => d.clone(),
                None => timestamped_run_dir(&output_root(a.out_root.clone()), cfg.trainer.seed),
            };
            (Trainer::new(cfg)?, dir)
        }
    };
    eprintln!("run directory: {}", run_dir.display());
    let stop = cancellation_flag();
    let outcome = train(trainer, &run_dir, Some(&stop))?;
    eprintln!(
        "{} after {} iterations; final checkpoint {}",
        if outcome.interrupted { "stopped" } else { "finished" },
        outcome.iterations,
        outcome.final_checkpoint.display()
    );
    Ok(0)
}

fn checkpoint_config(ck: &Checkpoint, overrides: &[String]) -> Result<TrainConfig> {
    if overrides.is_empty() {
        return Ok(ck.config().clone());
    }
    TrainConfig::from_toml_str(&ck.config().to_toml()?, overrides)
}

fn cmd_eval(a: EvalArgs) -> Result<u8> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = checkpoint_config(&ck, &a.overrides)?;
    let episodes = a.episodes.unwrap_or(cfg.eval.episodes);
    let report = match &a.trace {
        Some(path) => {
            let (report, trace) = evaluate_traced(&cfg, &ck.model, &ck.params, a.family, a.level, episodes, a.seed)?;
            std::fs::write(path, trace)?;
            report
        }
        None => evaluate(&cfg, &ck.model, &ck.params, a.family, a.level, episodes, a.seed)?,
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = a.out {
        std::fs::write(out, &json)?;
    }
    Ok(0)
}

fn cmd_export(a: ExportArgs) -> Result<u8> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = ck.config().clone();
    let families = if a.families.is_empty() {
        cfg.eval.latent_families.clone()
    } else {
        a.families.clone()
    };
    let table = export_latents(
        &cfg,
        &ck.model,
        &ck.params,
        &families,
        a.level.unwrap_or(cfg.eval.latent_level),
        a.envs.unwrap_or(cfg.eval.latent_envs),
        a.steps.unwrap_or(cfg.eval.latent_steps),
        a.seed,
    )?;
    let out = a.out.unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("latents.csv")
    });
    std::fs::write(&out, table.to_csv())?;
    for f in &families {
        eprintln!("{f}: {} rows", table.rows_for(*f));
    }
    eprintln!("wrote {}", out.display());
    Ok(0)
}

fn cmd_terrain_dump(a: TerrainDumpArgs) -> Result<u8> {
    let cfg = load_config(a.config.as_deref(), &[])?;
    let tile = generate_tile_with(&cfg.terrain, a.family, a.level, a.seed)?;
    let csv = tile.to_csv();
    match a.out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_check_grads(a: CheckGradsArgs) -> Result<u8> {
    let seeds: Vec<u64> = (0..a.seeds.max(1)).collect();
    let reports = run_suite(&seeds)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed;
        println!(
            "{} {:<16} seeds={} max_rel_error={:.3e} worst={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seeds,
            r.max_rel_error,
            r.worst_entry
        );
    }
    Ok(if ok { 0 } else { 1 })
}

/// Flattens metrics records into CSV columns: scalars first, then
/// `level_<family>` and `rew_<term>` columns.
pub fn metrics_csv(records: &[RunMetrics]) -> Result<String> {
    let mut out = String::new();
    let mut header: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let v = serde_json::to_value(rec)?;
        let obj = v.as_object().expect("record is an object");
        let mut cols: Vec<(String, String)> = Vec::new();
        for (k, val) in obj {
            match val {
                serde_json::Value::Object(inner) => {
                    let prefix = if k == "terrain_levels" { "level_" } else { "rew_" };
                    for (ik, iv) in inner {
                        cols.push((format!("{prefix}{ik}"), cell(iv)));
                    }
                }
                other => cols.push((k.clone(), cell(other))),
            }
        }
        if i == 0 {
            header = cols.iter().map(|(k, _)| k.clone()).collect();
        }
        let row = header
            .iter()
            .map(|h| {
                cols.iter()
                    .find(|(k, _)| k == h)
                    .map(|(_, v)| v.clone())
                    .unwrap_or_default()
            })
            .collect();
        rows.push(row);
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cmd_metrics_to_csv(a: MetricsArgs) -> Result<u8> {
    let records = read_metrics(&a.metrics)?;
    let csv = metrics_csv(&records)?;
    let out = a.out.unwrap_or_else(|| a.metrics.with_extension("csv"));
    std::fs::write(&out, csv)?;
    eprintln!("wrote {} rows to {}", records.len(), out.display());
    Ok(0)
}
