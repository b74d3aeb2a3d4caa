//! The levelwise hierarchy: per-level policies conditioned on the action
//! above, per-level predictors, the bounty estimator, and the multi-rate
//! scheduler that ties them to an environment.
//!
//! Level `l` decides every `T^l` primitive steps. When a level-`l` macro-step
//! closes, its predictor guesses where every *other* action would have led;
//! the distance from the real outcome to the nearest guess, minus the
//! predicted expectation of that distance, is paid to the level-`l-1`
//! decision that ended on the same boundary.

mod estimator;
mod predictor;
mod spec;

pub use estimator::{
    center_of_mass, distance, intrinsic_reward_raw, normalize_intrinsic, state_distance, DistanceConfig, DistanceMode,
};
pub use predictor::{build_predictor, PredictorConfig, PredictorLearner, PredictorSample, PredictorStats};
pub use spec::{HierarchySpec, LevelSpec};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::Adam;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::ppo::{build_policy, log_softmax, Batch, PolicyLearner, PpoConfig, Rollout, UpdateStats};
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub levels: HierarchySpec,
    #[serde(default = "default_policy_hidden")]
    pub policy_hidden: Vec<usize>,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub distance: DistanceConfig,
    /// Zero the environment reward in every level's training signal.
    #[serde(default)]
    pub intrinsic_only: bool,
}

pub fn default_policy_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl HierarchyConfig {
    pub fn new(levels: HierarchySpec) -> Self {
        Self {
            levels,
            policy_hidden: default_policy_hidden(),
            ppo: PpoConfig::default(),
            predictor: PredictorConfig::default(),
            distance: DistanceConfig::default(),
            intrinsic_only: false,
        }
    }

    pub fn validate(&self, env_actions: usize) -> Result<()> {
        self.levels.validate(env_actions)?;
        self.ppo.validate()?;
        self.predictor.validate()?;
        self.distance.validate()?;
        if self.policy_hidden.is_empty() || self.policy_hidden.contains(&0) {
            return Err(Error::Config("policy_hidden must list at least one positive width".into()));
        }
        Ok(())
    }
}

/// One open decision of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub upper: usize,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    /// Observation when the decision was taken.
    pub start: Vec<f64>,
    /// Environment reward summed since the decision.
    pub extrinsic: f64,
    /// Weighted, normalized bounty credited from the level above.
    pub bonus: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BonusTally {
    pub raw_sum: f64,
    pub normalized_sum: f64,
    pub count: u64,
}

/// One environment instance with its per-level scheduling state and buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker<E> {
    pub env: E,
    observation: Vec<f64>,
    t: u64,
    decisions: Vec<Option<Decision>>,
    rollouts: Vec<Rollout>,
    samples: Vec<Vec<PredictorSample>>,
    /// Bounty received by each level since its last update.
    tallies: Vec<BonusTally>,
    sampling: Vec<ChaCha8Rng>,
    episodes: ChaCha8Rng,
    episode_return: f64,
}

impl<E> Worker<E> {
    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    /// Primitive steps since the current episode began.
    pub fn episode_step(&self) -> u64 {
        self.t
    }

    pub fn decision(&self, level: usize) -> Option<&Decision> {
        self.decisions[level].as_ref()
    }

    pub fn rollout(&self, level: usize) -> &Rollout {
        &self.rollouts[level]
    }

    pub fn predictor_samples(&self, level: usize) -> &[PredictorSample] {
        &self.samples[level]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub spec: LevelSpec,
    pub policy: PolicyLearner,
    pub predictor: Option<PredictorLearner>,
    update_rng: ChaCha8Rng,
    pub updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub worker: usize,
    /// Undiscounted environment reward of the episode.
    pub extrinsic_return: f64,
    pub length: u64,
    pub valid_operations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelUpdate {
    pub level: usize,
    pub policy: UpdateStats,
    pub predictor: Option<PredictorStats>,
    /// Mean raw and normalized bounty this level received over the window.
    pub bonus_raw_mean: Option<f64>,
    pub bonus_normalized_mean: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickReport {
    pub episodes: Vec<EpisodeEnd>,
    pub updates: Vec<LevelUpdate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy<E> {
    config: HierarchyConfig,
    observation_shape: [usize; 3],
    seed: u64,
    levels: Vec<Level>,
    workers: Vec<Worker<E>>,
    steps: u64,
    meta_resets: u64,
}

impl<E: Environment> Hierarchy<E> {
    /// One worker per environment; `config.ppo.actors` must equal `envs.len()`.
    pub fn new(mut envs: Vec<E>, config: HierarchyConfig, seed: u64) -> Result<Self> {
        let Some(first) = envs.first() else {
            return Err(Error::Config("a hierarchy needs at least one environment".into()));
        };
        if envs.len() != config.ppo.actors {
            return Err(Error::Config(format!(
                "ppo.actors = {} but {} environments were supplied",
                config.ppo.actors,
                envs.len()
            )));
        }
        config.validate(first.action_count())?;
        let observation_shape = first.observation_shape();
        let obs_dim: usize = observation_shape.iter().product();
        let n = config.levels.len();
        let mut levels = Vec::with_capacity(n);
        for (l, spec) in config.levels.levels.iter().enumerate() {
            let branches = if l + 1 == n { 1 } else { config.levels.levels[l + 1].actions };
            let mut init = seeding::rng(seed, Stream::PolicyInit, &[l as u64]);
            let model = build_policy(obs_dim, &config.policy_hidden, spec.actions, branches, &mut init)?;
            let predictor = if l == 0 {
                None
            } else {
                let mut init = seeding::rng(seed, Stream::PredictorInit, &[l as u64]);
                let model = build_predictor(obs_dim, spec.actions, &config.predictor, &mut init)?;
                Some(PredictorLearner::new(model, config.predictor.adam))
            };
            levels.push(Level {
                spec: *spec,
                policy: PolicyLearner::new(model, config.ppo.adam),
                predictor,
                update_rng: seeding::rng(seed, Stream::Update, &[l as u64]),
                updates: 0,
            });
        }
        let workers = envs
            .drain(..)
            .enumerate()
            .map(|(w, mut env)| {
                let mut episodes = seeding::rng(seed, Stream::Episodes, &[w as u64]);
                let observation = env.reset(episodes.gen()).into_data();
                Worker {
                    env,
                    observation,
                    t: 0,
                    decisions: vec![None; n],
                    rollouts: vec![Rollout::default(); n],
                    samples: vec![Vec::new(); n],
                    tallies: vec![BonusTally::default(); n],
                    sampling: (0..n)
                        .map(|l| seeding::rng(seed, Stream::Sampling, &[w as u64, l as u64]))
                        .collect(),
                    episodes,
                    episode_return: 0.0,
                }
            })
            .collect();
        Ok(Self {
            config,
            observation_shape,
            seed,
            levels,
            workers,
            steps: 0,
            meta_resets: 0,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn observation_shape(&self) -> [usize; 3] {
        self.observation_shape
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l]
    }

    pub fn level_mut(&mut self, l: usize) -> &mut Level {
        &mut self.levels[l]
    }

    pub fn workers(&self) -> &[Worker<E>] {
        &self.workers
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    /// Primitive steps taken, summed over workers.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn meta_resets(&self) -> u64 {
        self.meta_resets
    }

    /// Samples `a^l` for `observation` under the upper action `upper`.
    pub fn policy_act<R: Rng + ?Sized>(&self, l: usize, observation: &[f64], upper: usize, rng: &mut R) -> Result<usize> {
        Ok(self.levels[l].policy.act(observation, upper, rng)?.0)
    }

    /// Runs one episode of `env` from `seed` with every level sampling from
    /// its current policy. Nothing is trained or recorded.
    pub fn play_episode<F: Environment, R: Rng + ?Sized>(&self, env: &mut F, seed: u64, rng: &mut R) -> Result<EpisodeEnd> {
        let mut observation = env.reset(seed).into_data();
        let mut actions = vec![0; self.levels.len()];
        let mut end = EpisodeEnd {
            worker: 0,
            extrinsic_return: 0.0,
            length: 0,
            valid_operations: None,
        };
        while !env.is_done() {
            for l in (0..self.levels.len()).rev() {
                if end.length.is_multiple_of(self.levels[l].spec.period as u64) {
                    let upper = actions.get(l + 1).copied().unwrap_or(0);
                    actions[l] = self.policy_act(l, &observation, upper, rng)?;
                }
            }
            let outcome = env.step(actions[0])?;
            end.extrinsic_return += outcome.reward;
            end.length += 1;
            observation = env.observe().into_data();
        }
        end.valid_operations = env.valid_operations();
        Ok(end)
    }

    /// Advances every worker by one primitive step, training any level whose
    /// buffers filled up.
    pub fn step(&mut self) -> Result<TickReport> {
        let mut report = TickReport::default();
        for w in 0..self.workers.len() {
            self.schedule(w)?;
        }
        self.train_ready(&mut report.updates)?;
        for w in 0..self.workers.len() {
            if let Some(end) = self.advance(w)? {
                report.episodes.push(end);
            }
        }
        self.steps += self.workers.len() as u64;
        Ok(report)
    }

    /// Closes finished macro-steps and takes new decisions, top level first.
    fn schedule(&mut self, w: usize) -> Result<()> {
        let t = self.workers[w].t;
        for l in (0..self.levels.len()).rev() {
            if t.is_multiple_of(self.levels[l].spec.period as u64) {
                self.close(w, l, false)?;
            }
        }
        for l in (0..self.levels.len()).rev() {
            if t.is_multiple_of(self.levels[l].spec.period as u64) {
                self.decide(w, l)?;
            }
        }
        Ok(())
    }

    fn decide(&mut self, w: usize, l: usize) -> Result<()> {
        let top = self.top();
        let worker = &mut self.workers[w];
        let upper = if l == top {
            0
        } else {
            worker.decisions[l + 1]
                .as_ref()
                .map(|d| d.action)
                .ok_or(Error::Invalid(format!("level {} has no open decision", l + 1)))?
        };
        let (action, log_prob, value) = self.levels[l]
            .policy
            .act(&worker.observation, upper, &mut worker.sampling[l])?;
        worker.decisions[l] = Some(Decision {
            upper,
            action,
            log_prob,
            value,
            start: worker.observation.clone(),
            extrinsic: 0.0,
            bonus: 0.0,
        });
        Ok(())
    }

    /// Ends the open level-`l` macro-step at the current observation.
    fn close(&mut self, w: usize, l: usize, done: bool) -> Result<()> {
        let Some(d) = self.workers[w].decisions[l].take() else {
            return Ok(());
        };
        let worker = &mut self.workers[w];
        if let Some(predictor) = &self.levels[l].predictor {
            let counterfactuals = predictor.counterfactuals(&d.start, d.action)?;
            let raw = intrinsic_reward_raw(
                self.observation_shape,
                &worker.observation,
                &counterfactuals,
                self.config.distance,
            )?;
            let normalized = normalize_intrinsic(raw, predictor.expected_bonus(&d.start, d.action)?);
            let lambda = self.levels[l - 1].spec.lambda;
            if let Some(lower) = worker.decisions[l - 1].as_mut() {
                lower.bonus += lambda * normalized;
            }
            let tally = &mut worker.tallies[l - 1];
            tally.raw_sum += raw;
            tally.normalized_sum += normalized;
            tally.count += 1;
            worker.samples[l].push(PredictorSample {
                start: d.start.clone(),
                action: d.action,
                end: worker.observation.clone(),
                bonus: raw,
            });
        }
        let extrinsic = if self.config.intrinsic_only { 0.0 } else { d.extrinsic };
        worker.rollouts[l].push(d.start, d.upper, d.action, d.log_prob, d.value, extrinsic + d.bonus, done);
        Ok(())
    }

    fn advance(&mut self, w: usize) -> Result<Option<EpisodeEnd>> {
        let worker = &mut self.workers[w];
        let action = worker.decisions[0]
            .as_ref()
            .map(|d| d.action)
            .ok_or(Error::Invalid("bottom level has no open decision".into()))?;
        let outcome = worker.env.step(action)?;
        worker.observation = worker.env.observe().into_data();
        for d in worker.decisions.iter_mut().flatten() {
            d.extrinsic += outcome.reward;
        }
        worker.episode_return += outcome.reward;
        worker.t += 1;
        if !outcome.done {
            return Ok(None);
        }
        for l in (0..self.levels.len()).rev() {
            self.close(w, l, true)?;
        }
        let worker = &mut self.workers[w];
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

    /// Trains every level whose buffers hold a full horizon per actor.
    fn train_ready(&mut self, updates: &mut Vec<LevelUpdate>) -> Result<()> {
        let target = self.config.ppo.horizon * self.workers.len();
        for l in 0..self.levels.len() {
            let collected: usize = self.workers.iter().map(|w| w.rollouts[l].len()).sum();
            if collected >= target {
                updates.push(self.train_level(l)?);
            }
        }
        Ok(())
    }

    /// Updates the level-`l` policy and predictor on everything buffered.
    pub fn train_level(&mut self, l: usize) -> Result<LevelUpdate> {
        let mut segments = Vec::with_capacity(self.workers.len());
        let mut samples = Vec::new();
        let mut tally = BonusTally::default();
        for worker in &mut self.workers {
            let bootstrap = worker.decisions[l].as_ref().map_or(0.0, |d| d.value);
            segments.push((std::mem::take(&mut worker.rollouts[l]), bootstrap));
            samples.append(&mut worker.samples[l]);
            let t = std::mem::take(&mut worker.tallies[l]);
            tally.raw_sum += t.raw_sum;
            tally.normalized_sum += t.normalized_sum;
            tally.count += t.count;
        }
        let ppo = &self.config.ppo;
        let batch = Batch::from_segments(segments, ppo.gamma, ppo.gae_lambda)?;
        let level = &mut self.levels[l];
        let policy = level.policy.update(batch, ppo, &mut level.update_rng)?;
        let predictor = match level.predictor.as_mut() {
            Some(p) => Some(p.train(&samples, &self.config.predictor, &mut level.update_rng)?),
            None => None,
        };
        level.updates += 1;
        self.refresh_open_decisions(l)?;
        let mean = |s: f64| (tally.count > 0).then(|| s / tally.count as f64);
        Ok(LevelUpdate {
            level: l,
            policy,
            predictor,
            bonus_raw_mean: mean(tally.raw_sum),
            bonus_normalized_mean: mean(tally.normalized_sum),
        })
    }

    /// Re-scores open level-`l` decisions under the current parameters so the
    /// next batch starts on-policy.
    fn refresh_open_decisions(&mut self, l: usize) -> Result<()> {
        let policy = &self.levels[l].policy;
        for worker in &mut self.workers {
            if let Some(d) = worker.decisions[l].as_mut() {
                let (logits, value) = policy.evaluate(&d.start, d.upper)?;
                d.log_prob = log_softmax(&logits)[d.action];
                d.value = value;
            }
        }
        Ok(())
    }

    /// Re-initializes the top policy and its optimizer; lower levels and all
    /// predictors are left untouched.
    pub fn reset_top_level(&mut self) -> Result<()> {
        let top = self.top();
        let mut rng = seeding::rng(self.seed, Stream::MetaReset, &[self.meta_resets]);
        let level = &mut self.levels[top];
        level.policy.model.reinitialize(&mut rng);
        level.policy.optimizer = Adam::new(level.policy.model.num_params(), self.config.ppo.adam);
        for worker in &mut self.workers {
            // samples drawn from the discarded policy cannot train the new one
            worker.rollouts[top].clear();
        }
        self.refresh_open_decisions(top)?;
        self.meta_resets += 1;
        Ok(())
    }

    /// Mean policy entropy of level `l` over the workers' current observations.
    pub fn policy_entropy(&self, l: usize) -> Result<f64> {
        let mut total = 0.0;
        for worker in &self.workers {
            let upper = worker.decisions.get(l + 1).and_then(|d| d.as_ref()).map_or(0, |d| d.action);
            total += self.levels[l].policy.entropy(&worker.observation, upper)?;
        }
        Ok(total / self.workers.len() as f64)
    }
}
