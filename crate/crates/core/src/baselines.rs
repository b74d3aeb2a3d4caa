//! Flat (single-level) agents: plain PPO and two novelty-bonus variants.
//!
//! The state-novelty bonus is the count-based `1/sqrt(n)` over exact
//! observation hashes. The transition-novelty bonus is the squared error of
//! a one-step forward model that shares the predictor architecture of the
//! hierarchy. Both are conventional stand-ins for methods whose exact form
//! is not pinned down elsewhere.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_predictor, default_policy_hidden, Decision, EpisodeEnd, LevelUpdate, PredictorConfig, PredictorLearner,
    TickReport,
};
use crate::ppo::{build_policy, log_softmax, Batch, PolicyLearner, PpoConfig, Rollout};
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Ppo,
    StateNovelty,
    TransitionNovelty,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Self::Ppo),
            "state_novelty" => Ok(Self::StateNovelty),
            "transition_novelty" => Ok(Self::TransitionNovelty),
            other => Err(Error::Config(format!(
                "unknown baseline kind {other:?} (expected ppo, state_novelty or transition_novelty)"
            ))),
        }
    }
}

/// Visit counts keyed by observation hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisitTable {
    counts: BTreeMap<String, u64>,
    total: u64,
    quantize: bool,
}

impl VisitTable {
    /// With `quantize`, values are rounded to sixteenths before hashing.
    pub fn new(quantize: bool) -> Self {
        Self {
            quantize,
            ..Self::default()
        }
    }

    pub fn key(&self, observation: &[f64]) -> String {
        let mut hasher = Sha256::new();
        if self.quantize {
            let bytes: Vec<u8> = observation
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 16.0).round() as u8)
                .collect();
            hasher.update(&bytes);
        } else {
            for v in observation {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn count(&self, observation: &[f64]) -> u64 {
        self.counts.get(&self.key(observation)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &VisitTable) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
        self.total += other.total;
    }

    fn visit(&mut self, observation: &[f64]) -> u64 {
        let key = self.key(observation);
        let c = self.counts.entry(key).or_insert(0);
        *c += 1;
        self.total += 1;
        *c
    }
}

/// Counts the visit and returns `1/sqrt(count)`.
pub fn state_novelty_bonus(table: &mut VisitTable, observation: &[f64]) -> f64 {
    1.0 / (table.visit(observation) as f64).sqrt()
}

/// Squared prediction error of `next`, after which the model takes one
/// training step on the transition.
pub fn transition_novelty_bonus(
    model: &mut PredictorLearner,
    observation: &[f64],
    action: usize,
    next: &[f64],
    max_grad_norm: f64,
) -> Result<f64> {
    model.transition_step(observation, action, next, max_grad_norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    #[serde(default = "default_policy_hidden")]
    pub policy_hidden: Vec<usize>,
    #[serde(default)]
    pub ppo: PpoConfig,
    /// Forward model used by the transition-novelty bonus.
    #[serde(default)]
    pub predictor: PredictorConfig,
    /// Weight of the novelty bonus added to the environment reward.
    #[serde(default = "default_bonus_coef")]
    pub bonus_coef: f64,
    /// Hash observations after rounding to sixteenths (for continuous-valued views).
    #[serde(default)]
    pub quantize: bool,
}

fn default_bonus_coef() -> f64 {
    0.1
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            policy_hidden: default_policy_hidden(),
            ppo: PpoConfig::default(),
            predictor: PredictorConfig::default(),
            bonus_coef: default_bonus_coef(),
            quantize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.kind == BaselineKind::TransitionNovelty {
            self.predictor.validate()?;
        }
        if self.policy_hidden.is_empty() || self.policy_hidden.contains(&0) {
            return Err(Error::Config("policy_hidden must list at least one positive width".into()));
        }
        if !self.bonus_coef.is_finite() || self.bonus_coef < 0.0 {
            return Err(Error::Config("baseline.bonus_coef must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Bonus {
    None,
    Visits(VisitTable),
    Forward(PredictorLearner),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatWorker<E> {
    pub env: E,
    observation: Vec<f64>,
    t: u64,
    open: Option<Decision>,
    rollout: Rollout,
    sampling: ChaCha8Rng,
    episodes: ChaCha8Rng,
    episode_return: f64,
}

impl<E> FlatWorker<E> {
    pub fn observation(&self) -> &[f64] {
        &self.observation
    }
}

/// Single-level actor-critic agent with an optional exploration bonus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatAgent<E> {
    config: BaselineConfig,
    pub policy: PolicyLearner,
    pub bonus: Bonus,
    update_rng: ChaCha8Rng,
    workers: Vec<FlatWorker<E>>,
    steps: u64,
    pub updates: u64,
}

impl<E: Environment> FlatAgent<E> {
    pub fn new(mut envs: Vec<E>, config: BaselineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let Some(first) = envs.first() else {
            return Err(Error::Config("a baseline needs at least one environment".into()));
        };
        if envs.len() != config.ppo.actors {
            return Err(Error::Config(format!(
                "ppo.actors = {} but {} environments were supplied",
                config.ppo.actors,
                envs.len()
            )));
        }
        let actions = first.action_count();
        let obs_dim: usize = first.observation_shape().iter().product();
        let mut init = seeding::rng(seed, Stream::PolicyInit, &[0]);
        let model = build_policy(obs_dim, &config.policy_hidden, actions, 1, &mut init)?;
        let policy = PolicyLearner::new(model, config.ppo.adam);
        let bonus = match config.kind {
            BaselineKind::Ppo => Bonus::None,
            BaselineKind::StateNovelty => Bonus::Visits(VisitTable::new(config.quantize)),
            BaselineKind::TransitionNovelty => {
                let mut init = seeding::rng(seed, Stream::Bonus, &[0]);
                let model = build_predictor(obs_dim, actions, &config.predictor, &mut init)?;
                Bonus::Forward(PredictorLearner::new(model, config.predictor.adam))
            }
        };
        let workers = envs
            .drain(..)
            .enumerate()
            .map(|(w, mut env)| {
                let mut episodes = seeding::rng(seed, Stream::Episodes, &[w as u64]);
                let observation = env.reset(episodes.gen()).into_data();
                FlatWorker {
                    env,
                    observation,
                    t: 0,
                    open: None,
                    rollout: Rollout::default(),
                    sampling: seeding::rng(seed, Stream::Sampling, &[w as u64, 0]),
                    episodes,
                    episode_return: 0.0,
                }
            })
            .collect();
        Ok(Self {
            config,
            policy,
            bonus,
            update_rng: seeding::rng(seed, Stream::Update, &[0]),
            workers,
            steps: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn workers(&self) -> &[FlatWorker<E>] {
        &self.workers
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self) -> Result<TickReport> {
        let mut report = TickReport::default();
        for w in 0..self.workers.len() {
            let worker = &mut self.workers[w];
            if let Some(d) = worker.open.take() {
                worker
                    .rollout
                    .push(d.start, d.upper, d.action, d.log_prob, d.value, d.extrinsic + d.bonus, false);
            }
            let (action, log_prob, value) = self.policy.act(&worker.observation, 0, &mut worker.sampling)?;
            worker.open = Some(Decision {
                upper: 0,
                action,
                log_prob,
                value,
                start: worker.observation.clone(),
                extrinsic: 0.0,
                bonus: 0.0,
            });
        }
        let collected: usize = self.workers.iter().map(|w| w.rollout.len()).sum();
        if collected >= self.config.ppo.horizon * self.workers.len() {
            report.updates.push(self.train()?);
        }
        for w in 0..self.workers.len() {
            if let Some(end) = self.advance(w)? {
                report.episodes.push(end);
            }
        }
        self.steps += self.workers.len() as u64;
        Ok(report)
    }

    fn advance(&mut self, w: usize) -> Result<Option<EpisodeEnd>> {
        let coef = self.config.bonus_coef;
        let max_norm = self.config.predictor.max_grad_norm;
        let worker = &mut self.workers[w];
        let d = worker
            .open
            .as_mut()
            .ok_or(Error::Invalid("no open decision".into()))?;
        let outcome = worker.env.step(d.action)?;
        worker.observation = worker.env.observe().into_data();
        d.extrinsic += outcome.reward;
        match &mut self.bonus {
            Bonus::None => {}
            Bonus::Visits(table) => d.bonus += coef * state_novelty_bonus(table, &worker.observation),
            Bonus::Forward(model) => {
                d.bonus += coef * transition_novelty_bonus(model, &d.start, d.action, &worker.observation, max_norm)?
            }
        }
        worker.episode_return += outcome.reward;
        worker.t += 1;
        if !outcome.done {
            return Ok(None);
        }
        if let Some(d) = worker.open.take() {
            worker
                .rollout
                .push(d.start, d.upper, d.action, d.log_prob, d.value, d.extrinsic + d.bonus, true);
        }
        let end = EpisodeEnd {
            worker: w,
            extrinsic_return: worker.episode_return,
            length: worker.t,
            valid_operations: worker.env.valid_operations(),
        };
        worker.observation = worker.env.reset(worker.episodes.gen()).into_data();
        worker.t = 0;
        worker.episode_return = 0.0;
        Ok(Some(end))
    }

    fn train(&mut self) -> Result<LevelUpdate> {
        let segments = self
            .workers
            .iter_mut()
            .map(|w| {
                let bootstrap = w.open.as_ref().map_or(0.0, |d| d.value);
                (std::mem::take(&mut w.rollout), bootstrap)
            })
            .collect();
        let ppo = &self.config.ppo;
        let batch = Batch::from_segments(segments, ppo.gamma, ppo.gae_lambda)?;
        let stats = self.policy.update(batch, ppo, &mut self.update_rng)?;
        self.updates += 1;
        for worker in &mut self.workers {
            if let Some(d) = worker.open.as_mut() {
                let (logits, value) = self.policy.evaluate(&d.start, d.upper)?;
                d.log_prob = log_softmax(&logits)[d.action];
                d.value = value;
            }
        }
        Ok(LevelUpdate {
            level: 0,
            policy: stats,
            predictor: None,
            bonus_raw_mean: None,
            bonus_normalized_mean: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("ppo".parse::<BaselineKind>().is_ok());
        assert!("curiosity".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = VisitTable::new(false);
        let mut b = VisitTable::new(false);
        state_novelty_bonus(&mut a, &[1.0]);
        state_novelty_bonus(&mut b, &[1.0]);
        state_novelty_bonus(&mut b, &[0.0]);
        a.merge(&b);
        assert_eq!(a.count(&[1.0]), 2);
        assert_eq!(a.total(), 3);
        assert_eq!(a.distinct(), 2);
    }

    #[test]
    fn quantized_keys_ignore_small_noise() {
        let t = VisitTable::new(true);
        assert_eq!(t.key(&[0.5, 0.25]), t.key(&[0.501, 0.249]));
        assert_ne!(VisitTable::new(false).key(&[0.5]), VisitTable::new(false).key(&[0.501]));
    }
}
