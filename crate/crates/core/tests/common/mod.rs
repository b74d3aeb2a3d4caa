//! Helpers shared by the integration test targets: a scripted environment,
//! finite-difference utilities and independent oracles.
#![allow(dead_code)]

use dehrl::approx::{Activation, ConditionedModel, Conditioning, MlpShape};
use dehrl::envs::minecraft::{Block, MineCraftConfig, VoxelWorld};
use dehrl::envs::overcooked::{OverCookedConfig, RewardSetting, GoalType};
use dehrl::envs::trace;
use dehrl::envs::{EnvConfig, Environment, Observation, StepOutcome};
use dehrl::hierarchy::{distance, PredictorLearner, PredictorSample};
use dehrl::ppo::{gae, ppo_gradient, Batch, PpoConfig};
use dehrl::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic environment: the observation one-hot encodes the step
/// counter, every step pays `reward`, and the episode ends after `length`
/// steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedEnv {
    pub actions: usize,
    pub length: u64,
    pub reward: f64,
    pub t: u64,
    pub width: usize,
}

impl ScriptedEnv {
    pub fn new(actions: usize, length: u64, reward: f64) -> Self {
        Self {
            actions,
            length,
            reward,
            t: 0,
            width: 8,
        }
    }
}

impl Environment for ScriptedEnv {
    fn action_count(&self) -> usize {
        self.actions
    }

    fn observation_shape(&self) -> [usize; 3] {
        [1, 1, self.width]
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= self.actions {
            return Err(Error::OutOfRange {
                what: "scripted action",
                index: action,
                count: self.actions,
            });
        }
        if self.is_done() {
            return Err(Error::EpisodeDone);
        }
        self.t += 1;
        Ok(StepOutcome {
            reward: self.reward,
            done: self.is_done(),
        })
    }

    fn observe(&self) -> Observation {
        let mut obs = Observation::zeros(self.observation_shape());
        obs.set(0, 0, (self.t as usize) % self.width, 1.0);
        obs
    }

    fn is_done(&self) -> bool {
        self.t >= self.length
    }

    fn state_hash(&self) -> String {
        format!("t{}", self.t)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every coordinate of `params`. Coordinates whose gradients are
/// both below `floor` in magnitude are compared on the absolute scale of
/// `floor`.
pub fn fd_relative_error<F>(params: &[f64], analytic: &[f64], mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let h = 1e-5;
    let floor = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for k in 0..params.len() {
        p[k] = params[k] + h;
        let up = loss(&p);
        p[k] = params[k] - h;
        let down = loss(&p);
        p[k] = params[k];
        let numeric = (up - down) / (2.0 * h);
        let scale = numeric.abs().max(analytic[k].abs()).max(floor);
        worst = worst.max((numeric - analytic[k]).abs() / scale);
    }
    worst
}

/// A small policy network (well under 1e3 parameters).
pub fn small_policy(seed: u64, input: usize, actions: usize, branches: usize) -> ConditionedModel {
    let encoder = MlpShape::stack(input, &[], 6, Activation::LeakyRelu, Activation::LeakyRelu).unwrap();
    let logits = MlpShape::new(vec![6, actions], vec![Activation::Identity]).unwrap();
    let value = MlpShape::new(vec![6, 1], vec![Activation::Identity]).unwrap();
    ConditionedModel::new(encoder, Conditioning::Branch { branches }, vec![logits, value], &mut rng(seed)).unwrap()
}

/// A batch of `n` random rows for `model`, with log-probabilities perturbed
/// away from the model's own so the importance ratio is not one.
pub fn random_batch(model: &ConditionedModel, seed: u64, n: usize, actions: usize) -> Batch {
    let mut r = rng(seed);
    let mut batch = Batch::default();
    for _ in 0..n {
        let obs = random_vec(&mut r, model.input_dim());
        let upper = r.gen_range(0..model.condition_count());
        let heads = model.conditioned_forward(&obs, upper).unwrap();
        let lp = dehrl::ppo::log_softmax(&heads[0]);
        let a = r.gen_range(0..actions);
        batch.observations.push(obs);
        batch.uppers.push(upper);
        batch.actions.push(a);
        batch.log_probs.push(lp[a] + r.gen_range(-0.1..0.1));
        batch.advantages.push(r.gen_range(-1.0..1.0));
        batch.returns.push(r.gen_range(-1.0..1.0));
    }
    batch
}

/// Total PPO loss (as minimized) of `batch` under `params`.
pub fn ppo_loss(model: &ConditionedModel, params: &[f64], batch: &Batch, config: &PpoConfig) -> f64 {
    let mut m = model.clone();
    m.params_mut().copy_from_slice(params);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; m.num_params()];
    let parts = ppo_gradient(&m, batch, &idx, config, &mut grad).unwrap();
    parts.policy + config.value_coef * parts.value - config.entropy_coef * parts.entropy
}

/// Worst finite-difference error of the PPO gradient with the given loss weights.
pub fn ppo_fd_error(value_coef: f64, entropy_coef: f64, clip: f64) -> f64 {
    let model = small_policy(3, 5, 4, 2);
    let batch = random_batch(&model, 4, 6, 4);
    let config = PpoConfig {
        value_coef,
        entropy_coef,
        clip,
        ..PpoConfig::default()
    };
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    ppo_gradient(&model, &batch, &idx, &config, &mut grad).unwrap();
    fd_relative_error(model.params(), &grad, |p| ppo_loss(&model, p, &batch, &config))
}

/// Worst finite-difference error of the predictor gradient. `which` selects
/// the transition loss (`0`), the bounty loss (`1`) or both (`2`).
pub fn predictor_fd_error(which: usize) -> f64 {
    let config = dehrl::hierarchy::PredictorConfig {
        hidden: vec![6],
        ..Default::default()
    };
    let model = dehrl::hierarchy::build_predictor(7, 3, &config, &mut rng(9)).unwrap();
    let learner = PredictorLearner::new(model, config.adam);
    let mut r = rng(10);
    let samples: Vec<PredictorSample> = (0..4)
        .map(|_| PredictorSample {
            start: (0..7).map(|_| r.gen_range(0.0..1.0)).collect(),
            action: r.gen_range(0..3),
            end: (0..7).map(|_| r.gen_range(0.0..1.0)).collect(),
            bonus: r.gen_range(-0.5..0.5),
        })
        .collect();
    let pick = |t: f64, b: f64| match which {
        0 => t,
        1 => b,
        _ => t + b,
    };
    let loss = |p: &[f64]| {
        let mut l = learner.clone();
        l.model.params_mut().copy_from_slice(p);
        samples
            .iter()
            .map(|s| {
                let (t, b) = l.losses(s).unwrap();
                pick(t, b)
            })
            .sum::<f64>()
            / samples.len() as f64
    };
    // the combined gradient minus the other loss's share isolates one loss
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; learner.model.num_params()];
    learner.gradient(&samples, &idx, &mut grad).unwrap();
    if which == 2 {
        return fd_relative_error(learner.model.params(), &grad, loss);
    }
    let other = |p: &[f64]| {
        let mut l = learner.clone();
        l.model.params_mut().copy_from_slice(p);
        samples
            .iter()
            .map(|s| {
                let (t, b) = l.losses(s).unwrap();
                if which == 0 {
                    b
                } else {
                    t
                }
            })
            .sum::<f64>()
            / samples.len() as f64
    };
    let h = 1e-5;
    let mut p = learner.model.params().to_vec();
    let mut own = grad.clone();
    for k in 0..p.len() {
        let base = p[k];
        p[k] = base + h;
        let up = other(&p);
        p[k] = base - h;
        let down = other(&p);
        p[k] = base;
        own[k] -= (up - down) / (2.0 * h);
    }
    fd_relative_error(learner.model.params(), &own, loss)
}

/// `sum_k (gamma lambda)^(k) delta_{t+k}` evaluated term by term, with the
/// product of continuation flags cutting the sum at episode ends.
pub fn gae_brute_force(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    for t in 0..n {
        let mut weight = 1.0;
        for k in t..n {
            let next = if dones[k] { 0.0 } else { values[k + 1] };
            let delta = rewards[k] + gamma * next - values[k];
            out[t] += weight * delta;
            if dones[k] {
                break;
            }
            weight *= gamma * lambda;
        }
    }
    out
}

/// Max abs difference between [`gae`] and [`gae_brute_force`] over `cases`
/// random 10-step rollouts.
pub fn gae_max_error(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = 10;
        let rewards = random_vec(&mut r, n);
        let values = random_vec(&mut r, n + 1);
        let dones: Vec<bool> = (0..n).map(|_| r.gen_bool(0.2)).collect();
        let gamma = r.gen_range(0.5..1.0);
        let lambda = r.gen_range(0.0..=1.0);
        let (adv, ret) = gae(&rewards, &values, &dones, gamma, lambda).unwrap();
        let oracle = gae_brute_force(&rewards, &values, &dones, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - oracle[t]).abs());
            worst = worst.max((ret[t] - (oracle[t] + values[t])).abs());
        }
    }
    worst
}

/// Checks symmetry and zero-identity of the state distance on `pairs`
/// random tensor pairs; returns the number of violations.
pub fn distance_violations(pairs: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..pairs {
        let shape = [r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6)];
        let n: usize = shape.iter().product();
        let a: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen_range(0.0..1.0) }).collect();
        let b: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.3) { 0.0 } else { r.gen_range(0.0..1.0) }).collect();
        let alpha = r.gen_range(0.0..=1.0);
        let ab = distance(shape, &a, &b, alpha).unwrap();
        let ba = distance(shape, &b, &a, alpha).unwrap();
        let aa = distance(shape, &a, &a, alpha).unwrap();
        if ab != ba || aa != 0.0 || ab < 0.0 {
            bad += 1;
        }
    }
    bad
}

pub fn overcooked(level: u8, goal: GoalType) -> OverCookedConfig {
    OverCookedConfig {
        reward: RewardSetting::new(level, goal, 0).unwrap(),
        ..OverCookedConfig::default()
    }
}

/// Records `episodes` seeded random-action episodes over all six reward
/// settings and replays each against a fresh environment. Returns the
/// number of episodes whose replay diverged.
pub fn trace_replay_mismatches(episodes: usize, seed: u64) -> usize {
    let settings = RewardSetting::all();
    let mut r = rng(seed);
    let mut mismatches = 0;
    for e in 0..episodes {
        let config = OverCookedConfig {
            reward: settings[e % settings.len()],
            step_limit: 300,
            ..OverCookedConfig::default()
        };
        let env_config = EnvConfig::OverCooked(config);
        let actions: Vec<usize> = (0..300).map(|_| r.gen_range(0..16)).collect();
        let episode_seed = r.gen();
        let mut env = env_config.build().unwrap();
        let recorded = trace::record(&mut env, episode_seed, &actions).unwrap();
        let mut text = Vec::new();
        trace::write_trace(&mut text, &recorded).unwrap();
        let parsed = trace::read_trace(std::io::Cursor::new(text)).unwrap();
        let mut fresh = env_config.build().unwrap();
        if parsed != recorded || trace::replay(&mut fresh, episode_seed, &parsed).unwrap().is_some() {
            mismatches += 1;
        }
    }
    mismatches
}

/// Valid Operations recomputed from the final block grid alone: original
/// blocks no longer in place plus bricks present (the initial world holds
/// no bricks).
pub fn valid_operations_from_grid(world: &VoxelWorld) -> usize {
    let c = world.config().clone();
    let initial = VoxelWorld::new(c.clone());
    let mut count = 0;
    for x in 0..c.size_x {
        for y in 0..c.height {
            for z in 0..c.size_z {
                let before = initial.block(x, y, z);
                let now = world.block(x, y, z);
                if before.is_solid() && now != before {
                    count += 1;
                }
                if now == Block::Brick {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Runs `scripts` random action scripts and compares the tracked counter
/// with [`valid_operations_from_grid`]. Returns `(mismatches, scripts with a
/// nonzero count)`.
pub fn valid_operations_mismatches(scripts: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let mut mismatches = 0;
    let mut nonzero = 0;
    for s in 0..scripts {
        let config = MineCraftConfig {
            episode_length: 400,
            actions: if s % 2 == 0 { 10 } else { 11 },
            ..MineCraftConfig::default()
        };
        let mut world = VoxelWorld::new(config.clone());
        // bias toward break/build so scripts actually edit the world
        for _ in 0..config.episode_length {
            let a = if r.gen_bool(0.4) {
                let pick = if r.gen_bool(0.5) {
                    dehrl::envs::minecraft::Action::Break
                } else {
                    dehrl::envs::minecraft::Action::Build
                };
                config.encode(pick).unwrap()
            } else {
                r.gen_range(0..config.actions)
            };
            if world.step(a).unwrap().done {
                break;
            }
        }
        let tracked = world.valid_operations();
        if tracked > 0 {
            nonzero += 1;
        }
        if tracked != valid_operations_from_grid(&world) {
            mismatches += 1;
        }
    }
    (mismatches, nonzero)
}

/// One-step episodes; action 0 pays 1, every other action pays 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandit {
    pub arms: usize,
    pub done: bool,
}

impl Environment for Bandit {
    fn action_count(&self) -> usize {
        self.arms
    }

    fn observation_shape(&self) -> [usize; 3] {
        [1, 1, 1]
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.done = true;
        Ok(StepOutcome {
            reward: if action == 0 { 1.0 } else { 0.0 },
            done: true,
        })
    }

    fn observe(&self) -> Observation {
        Observation::from_vec([1, 1, 1], vec![1.0]).unwrap()
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn state_hash(&self) -> String {
        format!("{}", self.done)
    }
}

/// Trains a flat agent on the two-armed bandit for `steps` steps and
/// returns the final probability of the rewarded arm.
pub fn bandit_arm_zero_probability(steps: u64, seed: u64) -> f64 {
    use dehrl::baselines::{BaselineConfig, BaselineKind, FlatAgent};
    let mut config = BaselineConfig::new(BaselineKind::Ppo);
    config.policy_hidden = vec![8];
    config.ppo.actors = 1;
    config.ppo.horizon = 64;
    config.ppo.minibatch_size = 32;
    config.ppo.adam.step_size = 1e-2;
    let mut agent = FlatAgent::new(vec![Bandit { arms: 2, done: false }], config, seed).unwrap();
    while agent.steps() < steps {
        agent.step().unwrap();
    }
    let (logits, _) = agent.policy.evaluate(&[1.0], 0).unwrap();
    dehrl::ppo::log_softmax(&logits)[0].exp()
}

/// Single-actor hierarchy over a [`ScriptedEnv`] whose observation encodes
/// the episode step (up to 128), so decision start states name their tick.
pub fn scripted_hierarchy(
    actions: &[usize],
    periods: &[usize],
    length: u64,
    horizon: usize,
) -> dehrl::hierarchy::Hierarchy<ScriptedEnv> {
    use dehrl::hierarchy::{Hierarchy, HierarchyConfig, HierarchySpec};
    let mut config = HierarchyConfig::new(HierarchySpec::from_lists(actions, periods).unwrap());
    config.policy_hidden = vec![8];
    config.predictor.hidden = vec![8];
    config.ppo.actors = 1;
    config.ppo.horizon = horizon;
    config.ppo.minibatch_size = 16;
    let mut env = ScriptedEnv::new(actions[0], length, 1.0);
    env.width = 128;
    Hierarchy::new(vec![env], config, 1).unwrap()
}

/// Index of the hot cell of a one-hot observation.
pub fn hot(observation: &[f64]) -> usize {
    observation.iter().position(|&v| v == 1.0).expect("one-hot observation")
}

/// Steps a one-level hierarchy with a zero bounty weight and a flat PPO
/// agent side by side on OverCooked (reward level 1, any goal). Returns the
/// first step at which their policy parameters differ, if any, and the
/// number of updates performed.
pub fn lambda_zero_divergence(steps: u64, seed: u64) -> (Option<u64>, u64) {
    use dehrl::baselines::{BaselineConfig, BaselineKind, FlatAgent};
    use dehrl::hierarchy::{Hierarchy, HierarchyConfig, HierarchySpec, LevelSpec};
    let env = EnvConfig::OverCooked(overcooked(1, GoalType::Any));
    let actors = 2;
    let mut level = LevelSpec::new(16, 1);
    level.lambda = 0.0;
    let mut hconfig = HierarchyConfig::new(HierarchySpec::new(vec![level]));
    hconfig.policy_hidden = vec![32];
    hconfig.ppo.actors = actors;
    hconfig.ppo.horizon = 64;
    let mut bconfig = BaselineConfig::new(BaselineKind::Ppo);
    bconfig.policy_hidden = hconfig.policy_hidden.clone();
    bconfig.ppo = hconfig.ppo.clone();
    let envs = || (0..actors).map(|_| env.build().unwrap()).collect::<Vec<_>>();
    let mut h = Hierarchy::new(envs(), hconfig, seed).unwrap();
    let mut f = FlatAgent::new(envs(), bconfig, seed).unwrap();
    while h.steps() < steps {
        let hr = h.step().unwrap();
        let fr = f.step().unwrap();
        if hr.episodes != fr.episodes || h.level(0).policy != f.policy {
            return (Some(h.steps()), f.updates);
        }
    }
    (None, f.updates)
}
