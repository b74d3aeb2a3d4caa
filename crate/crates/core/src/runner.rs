//! Drives a [`RunConfig`] to completion: one agent per seed, a metrics
//! stream, periodic checkpoints and a rendered report.
//!
//! A run directory holds
//!
//! ```text
//! config.toml          copy of the configuration
//! seeds.json           seed list
//! metrics.jsonl        one {seed, step, key, value} record per line
//! checkpoints/         seed-<s>.json, rewritten every checkpoint_interval steps
//! report/              <key>.csv and <key>.svg per metric
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::FlatAgent;
use crate::config::RunConfig;
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{EpisodeEnd, Hierarchy, LevelUpdate, TickReport};
use crate::metrics::{
    self, final_performance_score, learning_speed_score, subpolicy_probe, EpisodeLog, GreedyActor, MetricRecord,
    MetricsWriter, ProbeConfig, ProbeLabel, METRICS_FILE,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const SEEDS_FILE: &str = "seeds.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Per-seed scores written once training ends.
pub const SUMMARY_KEYS: [&str; 2] = ["final_performance", "learning_speed"];

/// Whatever learner a run trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Agent {
    Hierarchy(Box<Hierarchy<Env>>),
    Flat(Box<FlatAgent<Env>>),
}

impl Agent {
    pub fn build(config: &RunConfig, seed: u64) -> Result<Self> {
        let envs = (0..config.actors())
            .map(|_| config.env.build())
            .collect::<Result<Vec<_>>>()?;
        match (&config.hierarchy, &config.baseline) {
            (Some(h), _) => Ok(Agent::Hierarchy(Box::new(Hierarchy::new(envs, h.clone(), seed)?))),
            (None, Some(b)) => Ok(Agent::Flat(Box::new(FlatAgent::new(envs, b.clone(), seed)?))),
            (None, None) => Err(Error::Config("exactly one of [hierarchy] and [baseline] must be present".into())),
        }
    }

    pub fn step(&mut self) -> Result<TickReport> {
        match self {
            Agent::Hierarchy(h) => h.step(),
            Agent::Flat(f) => f.step(),
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Agent::Hierarchy(h) => h.steps(),
            Agent::Flat(f) => f.steps(),
        }
    }

    pub fn as_hierarchy(&self) -> Option<&Hierarchy<Env>> {
        match self {
            Agent::Hierarchy(h) => Some(h),
            Agent::Flat(_) => None,
        }
    }
}

/// Complete training state of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub agent: Agent,
    pub episodes: EpisodeLog,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::format(&tmp, e))?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(out);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::format(path, e))
    }
}

pub fn checkpoint_path(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("seed-{seed}.json"))
}

fn failure_path(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("seed-{seed}.failed.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps: u64,
    pub episodes: usize,
    pub final_performance: f64,
    pub learning_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub seeds: Vec<SeedSummary>,
}

/// Starts a new run in `config.run_dir()`, which must not already hold one.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.run_dir();
    if dir.join(CONFIG_FILE).exists() {
        return Err(Error::Invalid(format!(
            "{} already holds a run; resume it or choose another name",
            dir.display()
        )));
    }
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    let seeds_path = dir.join(SEEDS_FILE);
    let seeds = serde_json::to_string(&config.seeds).map_err(|e| Error::format(&seeds_path, e))?;
    fs::write(&seeds_path, seeds).map_err(|e| Error::io(&seeds_path, e))?;
    execute(config, &dir)
}

/// Continues every seed of the run in `dir` from its latest checkpoint.
pub fn resume(dir: &Path) -> Result<RunSummary> {
    let config = load_run_config(dir)?;
    let metrics_path = dir.join(METRICS_FILE);
    if metrics_path.exists() {
        // records past a seed's checkpoint would be written again, and the
        // summary is rewritten when training ends
        let mut kept = Vec::new();
        for record in metrics::read_metrics(&metrics_path)? {
            let resumed_from = match Checkpoint::load(&checkpoint_path(dir, record.seed)) {
                Ok(c) => c.agent.steps(),
                Err(_) => 0,
            };
            if record.step <= resumed_from && !SUMMARY_KEYS.contains(&record.key.as_str()) {
                kept.push(record);
            }
        }
        let mut text = String::new();
        for r in &kept {
            text.push_str(&serde_json::to_string(r).map_err(|e| Error::format(&metrics_path, e))?);
            text.push('\n');
        }
        fs::write(&metrics_path, text).map_err(|e| Error::io(&metrics_path, e))?;
    }
    execute(&config, dir)
}

pub fn load_run_config(dir: &Path) -> Result<RunConfig> {
    let mut config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    config.output = Some(dir.to_path_buf());
    Ok(config)
}

fn execute(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let mut writer = MetricsWriter::append(&dir.join(METRICS_FILE))?;
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let start = match Checkpoint::load(&checkpoint_path(dir, seed)) {
            Ok(c) => c,
            Err(Error::Io { .. }) => Checkpoint {
                seed,
                agent: Agent::build(config, seed)?,
                episodes: EpisodeLog::new(),
            },
            Err(e) => return Err(e),
        };
        seeds.push(train_seed(config, dir, start, &mut writer)?);
    }
    writer.flush()?;
    metrics::emit_report(dir)?;
    Ok(RunSummary {
        run_dir: dir.to_path_buf(),
        seeds,
    })
}

fn train_seed(config: &RunConfig, dir: &Path, mut state: Checkpoint, writer: &mut MetricsWriter) -> Result<SeedSummary> {
    let path = checkpoint_path(dir, state.seed);
    let mut next_checkpoint = (state.agent.steps() / config.checkpoint_interval + 1) * config.checkpoint_interval;
    while state.agent.steps() < config.budget {
        if let Err(e) = advance(config, &mut state, writer) {
            // best effort: the original error is what the caller needs to see
            let _ = writer.flush();
            let _ = state.save(&failure_path(dir, state.seed));
            return Err(e);
        }
        if state.agent.steps() >= next_checkpoint {
            writer.flush()?;
            state.save(&path)?;
            next_checkpoint += config.checkpoint_interval;
        }
    }
    let summary = SeedSummary {
        seed: state.seed,
        steps: state.agent.steps(),
        episodes: state.episodes.len(),
        final_performance: final_performance_score(&state.episodes).unwrap_or(0.0),
        learning_speed: learning_speed_score(&state.episodes).unwrap_or(0.0),
    };
    let step = state.agent.steps();
    if !state.episodes.is_empty() {
        writer.write(&record(state.seed, step, SUMMARY_KEYS[0], summary.final_performance))?;
        writer.write(&record(state.seed, step, SUMMARY_KEYS[1], summary.learning_speed))?;
    }
    writer.flush()?;
    state.save(&path)?;
    Ok(summary)
}

fn record(seed: u64, step: u64, key: &str, value: f64) -> MetricRecord {
    MetricRecord {
        seed,
        step,
        key: key.to_string(),
        value,
    }
}

/// One tick of every actor, with its metrics and any due meta-reset.
fn advance(config: &RunConfig, state: &mut Checkpoint, writer: &mut MetricsWriter) -> Result<()> {
    let report = state.agent.step()?;
    let step = state.agent.steps();
    let seed = state.seed;
    for end in &report.episodes {
        write_episode(writer, seed, step, end)?;
        state.episodes.record(end.extrinsic_return, end.length, step);
    }
    for update in &report.updates {
        write_update(writer, seed, step, update)?;
    }
    if let Agent::Hierarchy(h) = &mut state.agent {
        let interval = config.meta_reset_interval;
        if interval > 0 && step / interval > h.meta_resets() {
            let top = h.top();
            let before = h.policy_entropy(top)?;
            h.reset_top_level()?;
            let after = h.policy_entropy(top)?;
            writer.write(&record(seed, step, "meta_reset/entropy_before", before))?;
            writer.write(&record(seed, step, "meta_reset/entropy_after", after))?;
        }
    }
    Ok(())
}

fn write_episode(writer: &mut MetricsWriter, seed: u64, step: u64, end: &EpisodeEnd) -> Result<()> {
    writer.write(&record(seed, step, "episode_reward", end.extrinsic_return))?;
    writer.write(&record(seed, step, "episode_length", end.length as f64))?;
    if let Some(ops) = end.valid_operations {
        writer.write(&record(seed, step, "valid_operations", ops as f64))?;
    }
    Ok(())
}

fn write_update(writer: &mut MetricsWriter, seed: u64, step: u64, u: &LevelUpdate) -> Result<()> {
    let l = u.level;
    let mut put = |name: &str, value: f64| writer.write(&record(seed, step, &format!("level{l}/{name}"), value));
    put("entropy", u.policy.entropy)?;
    put("policy_loss", u.policy.policy_loss)?;
    put("value_loss", u.policy.value_loss)?;
    put("approx_kl", u.policy.approx_kl)?;
    if let Some(p) = u.predictor {
        put("transition_loss", p.transition_loss)?;
        put("bonus_loss", p.bonus_loss)?;
    }
    if let Some(b) = u.bonus_raw_mean {
        put("bonus_raw", b)?;
    }
    if let Some(b) = u.bonus_normalized_mean {
        put("bonus_normalized", b)?;
    }
    Ok(())
}

/// Subpolicy labels of level 0 for every seed that has a checkpoint.
pub fn probe(dir: &Path, probe: ProbeConfig) -> Result<Vec<(u64, Vec<ProbeLabel>)>> {
    let config = load_run_config(dir)?;
    let mut out = Vec::new();
    for &seed in &config.seeds {
        let path = checkpoint_path(dir, seed);
        if !path.exists() {
            continue;
        }
        let checkpoint = Checkpoint::load(&path)?;
        out.push((seed, probe_agent(&checkpoint.agent, &config.env, probe)?));
    }
    Ok(out)
}

pub fn probe_agent(agent: &Agent, env: &EnvConfig, probe: ProbeConfig) -> Result<Vec<ProbeLabel>> {
    let Some(h) = agent.as_hierarchy() else {
        return Err(Error::Invalid("the subpolicy probe needs a hierarchy with at least two levels".into()));
    };
    if h.levels().len() < 2 {
        return Err(Error::Invalid("the subpolicy probe needs a hierarchy with at least two levels".into()));
    }
    let probe = ProbeConfig {
        steps: h.level(1).spec.period,
        ..probe
    };
    let mut actor = GreedyActor {
        policy: &h.level(0).policy,
    };
    subpolicy_probe(&mut actor, env, h.level(1).spec.actions, probe)
}
