//! Clipped-surrogate actor-critic updates with generalized advantage
//! estimation.
//!
//! A policy is a [`ConditionedModel`] with branch conditioning (one branch per
//! upper-level action) and two heads: head [`LOGITS`] produces one logit per
//! action and head [`VALUE`] a scalar state value.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{clip_grad_norm, Activation, Adam, AdamConfig, ConditionedModel, Conditioning, MlpShape};
use crate::error::{Error, Result};

pub const LOGITS: usize = 0;
pub const VALUE: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// Decisions collected per actor before an update.
    pub horizon: usize,
    pub epochs: usize,
    /// Samples per minibatch across all actors.
    pub minibatch_size: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub actors: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            horizon: 128,
            epochs: 4,
            minibatch_size: 32 * 8,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            actors: 8,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            adam: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("ppo.gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("ppo.gae_lambda must lie in (0, 1]");
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad("ppo.clip must be positive");
        }
        if self.epochs == 0 {
            return bad("ppo.epochs must be at least 1");
        }
        if self.horizon == 0 {
            return bad("ppo.horizon must be at least 1");
        }
        if self.minibatch_size == 0 {
            return bad("ppo.minibatch_size must be at least 1");
        }
        if self.actors == 0 {
            return bad("ppo.actors must be at least 1");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("ppo.value_coef, ppo.entropy_coef and ppo.max_grad_norm must be nonnegative");
        }
        if self.adam.step_size.is_nan() || self.adam.step_size <= 0.0 {
            return bad("ppo.adam.step_size must be positive");
        }
        Ok(())
    }
}

/// Builds a policy/value network over `input_dim` features with one branch
/// per upper-level action.
pub fn build_policy<R: Rng + ?Sized>(
    input_dim: usize,
    hidden: &[usize],
    actions: usize,
    branches: usize,
    rng: &mut R,
) -> Result<ConditionedModel> {
    let (code, encoder_hidden) = match hidden.split_last() {
        Some((&last, rest)) => (last, rest),
        None => return Err(Error::Config("policy needs at least one hidden layer".into())),
    };
    let encoder = MlpShape::stack(input_dim, encoder_hidden, code, Activation::LeakyRelu, Activation::LeakyRelu)?;
    let logits = MlpShape::new(vec![code, actions], vec![Activation::Identity])?;
    let value = MlpShape::new(vec![code, 1], vec![Activation::Identity])?;
    ConditionedModel::new(encoder, Conditioning::Branch { branches }, vec![logits, value], rng)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub observations: Vec<Vec<f64>>,
    pub uppers: Vec<usize>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Rollout {
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        observation: Vec<f64>,
        upper: usize,
        action: usize,
        log_prob: f64,
        value: f64,
        reward: f64,
        done: bool,
    ) {
        self.observations.push(observation);
        self.uppers.push(upper);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        for (context, len) in [
            ("rollout observations", self.observations.len()),
            ("rollout upper actions", self.uppers.len()),
            ("rollout log-probabilities", self.log_probs.len()),
            ("rollout values", self.values.len()),
            ("rollout rewards", self.rewards.len()),
            ("rollout done flags", self.dones.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        if self.log_probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout log-probability"));
        }
        if self.rewards.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout reward"));
        }
        Ok(())
    }
}

/// Advantages and returns for one contiguous segment.
///
/// `values` holds one estimate per step followed by the bootstrap estimate
/// of the observation after the last step. `dones[t]` means the episode
/// ended after step `t`, so nothing beyond it is credited back.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            context: "gae values (steps + bootstrap)",
            expected: n + 1,
            actual: values.len(),
        });
    }
    if dones.len() != n {
        return Err(Error::DimensionMismatch {
            context: "gae done flags",
            expected: n,
            actual: dones.len(),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    logits.iter().map(|z| z - log_z).collect()
}

pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>()
}

/// Draws an index from `softmax(logits)` and returns it with its log-probability.
pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    if logits.is_empty() {
        return Err(Error::Invalid("categorical over zero actions".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let log_p = log_softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_p.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return Ok((i, *lp));
        }
    }
    // rounding left the cumulative sum a hair below 1
    let last = log_p
        .iter()
        .rposition(|lp| *lp > f64::NEG_INFINITY)
        .unwrap_or(log_p.len() - 1);
    Ok((last, log_p[last]))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Flattened training data for one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub observations: Vec<Vec<f64>>,
    pub uppers: Vec<usize>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    /// Runs [`gae`] on each `(segment, bootstrap value)` and concatenates.
    pub fn from_segments(segments: Vec<(Rollout, f64)>, gamma: f64, lambda: f64) -> Result<Self> {
        let mut batch = Batch::default();
        for (rollout, bootstrap) in segments {
            rollout.validate()?;
            let mut values = rollout.values;
            values.push(bootstrap);
            let (adv, ret) = gae(&rollout.rewards, &values, &rollout.dones, gamma, lambda)?;
            batch.observations.extend(rollout.observations);
            batch.uppers.extend(rollout.uppers);
            batch.actions.extend(rollout.actions);
            batch.log_probs.extend(rollout.log_probs);
            batch.advantages.extend(adv);
            batch.returns.extend(ret);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Shifts and scales advantages to zero mean and unit deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt() + 1e-8;
        for a in &mut self.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// Loss components averaged over one minibatch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub ratio: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Gradient of the clipped objective (as a loss to minimize) over the batch
/// rows in `indices`, written into `grad`.
pub fn ppo_gradient(
    policy: &ConditionedModel,
    batch: &Batch,
    indices: &[usize],
    config: &PpoConfig,
    grad: &mut [f64],
) -> Result<LossParts> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut parts = LossParts::default();
    if indices.is_empty() {
        return Ok(parts);
    }
    let scale = 1.0 / indices.len() as f64;
    let mut d_logits = Vec::new();
    for &i in indices {
        let trace = policy.forward_trace(&batch.observations[i], batch.uppers[i])?;
        let logits = trace.output(LOGITS);
        let value = trace.output(VALUE)[0];
        let log_p = log_softmax(logits);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (log_p[a] - batch.log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - config.clip, 1.0 + config.clip);
        let unclipped_obj = ratio * adv;
        let clipped_obj = clipped * adv;
        let h = entropy(&log_p);
        let value_err = value - batch.returns[i];
        let loss = -unclipped_obj.min(clipped_obj) + config.value_coef * value_err * value_err - config.entropy_coef * h;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        parts.policy += -unclipped_obj.min(clipped_obj) * scale;
        parts.value += value_err * value_err * scale;
        parts.entropy += h * scale;
        parts.ratio += ratio * scale;
        parts.approx_kl += (batch.log_probs[i] - log_p[a]) * scale;
        if clipped_obj < unclipped_obj {
            parts.clip_fraction += scale;
        }

        // d(-r A)/d logp_a = -r A when the unclipped term is the active minimum
        let d_logp_a = if unclipped_obj <= clipped_obj { -ratio * adv } else { 0.0 };
        d_logits.clear();
        d_logits.extend(log_p.iter().enumerate().map(|(k, lp)| {
            let p = lp.exp();
            let onehot = if k == a { 1.0 } else { 0.0 };
            let surrogate = d_logp_a * (onehot - p);
            // d(-c2 H)/dz_k = c2 p_k (log p_k + H)
            let ent = config.entropy_coef * p * (lp + h);
            (surrogate + ent) * scale
        }));
        let d_value = [2.0 * config.value_coef * value_err * scale];
        policy.backward(&trace, &[Some(&d_logits), Some(&d_value)], grad);
    }
    Ok(parts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Several epochs of shuffled minibatch steps on `batch`.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut ConditionedModel,
    optimizer: &mut Adam,
    mut batch: Batch,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if config.normalize_advantages {
        batch.normalize_advantages();
    }
    let n = batch.len();
    let mut stats = UpdateStats::default();
    if n == 0 {
        return Ok(stats);
    }
    let size = config.minibatch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; policy.num_params()];
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(size) {
            let parts = ppo_gradient(policy, &batch, chunk, config, &mut grad)?;
            let norm = clip_grad_norm(&mut grad, config.max_grad_norm);
            optimizer.step(policy.params_mut(), &grad)?;
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.mean_ratio += parts.ratio;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.mean_ratio /= k;
    stats.approx_kl /= k;
    stats.clip_fraction /= k;
    stats.grad_norm /= k;
    Ok(stats)
}

/// A policy network with its optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLearner {
    pub model: ConditionedModel,
    pub optimizer: Adam,
}

impl PolicyLearner {
    pub fn new(model: ConditionedModel, adam: AdamConfig) -> Self {
        let optimizer = Adam::new(model.num_params(), adam);
        Self { model, optimizer }
    }

    /// Logits and value for one observation under one upper action.
    pub fn evaluate(&self, observation: &[f64], upper: usize) -> Result<(Vec<f64>, f64)> {
        let mut heads = self.model.conditioned_forward(observation, upper)?;
        let value = heads[VALUE][0];
        Ok((heads.swap_remove(LOGITS), value))
    }

    /// Samples an action; returns `(action, log-probability, value)`.
    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], upper: usize, rng: &mut R) -> Result<(usize, f64, f64)> {
        let (logits, value) = self.evaluate(observation, upper)?;
        let (action, log_prob) = categorical_sample(&logits, rng)?;
        Ok((action, log_prob, value))
    }

    pub fn greedy(&self, observation: &[f64], upper: usize) -> Result<usize> {
        let (logits, _) = self.evaluate(observation, upper)?;
        Ok(argmax(&logits))
    }

    pub fn entropy(&self, observation: &[f64], upper: usize) -> Result<f64> {
        let (logits, _) = self.evaluate(observation, upper)?;
        Ok(entropy(&log_softmax(&logits)))
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: Batch, config: &PpoConfig, rng: &mut R) -> Result<UpdateStats> {
        ppo_update(&mut self.model, &mut self.optimizer, batch, config, rng)
    }
}
