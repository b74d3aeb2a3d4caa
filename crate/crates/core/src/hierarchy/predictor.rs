//! Action-conditioned forward model: from `(s_t, a)` it predicts the
//! observation one macro-step later and the bounty the level below is
//! expected to earn.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{clip_grad_norm, Activation, Adam, AdamConfig, ConditionedModel, Conditioning, MlpShape};
use crate::error::{Error, Result};

pub const STATE: usize = 0;
pub const BONUS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// Encoder widths; the last one is the code multiplied by the action embedding.
    pub hidden: Vec<usize>,
    /// Hidden widths of the observation decoder (empty: a single sigmoid layer).
    pub decoder_hidden: Vec<usize>,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
    pub adam: AdamConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            decoder_hidden: Vec::new(),
            epochs: 4,
            minibatch_size: 256,
            max_grad_norm: 0.5,
            adam: AdamConfig {
                step_size: 7e-4,
                ..AdamConfig::default()
            },
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config(
                "predictor.hidden must be non-empty and every width in predictor.hidden and \
                 predictor.decoder_hidden positive"
                    .into(),
            ));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config("predictor.epochs and predictor.minibatch_size must be at least 1".into()));
        }
        if self.adam.step_size.is_nan() || self.adam.step_size <= 0.0 || self.max_grad_norm < 0.0 {
            return Err(Error::Config(
                "predictor.adam.step_size must be positive and predictor.max_grad_norm nonnegative".into(),
            ));
        }
        Ok(())
    }
}

pub fn build_predictor<R: Rng + ?Sized>(
    observation_dim: usize,
    actions: usize,
    config: &PredictorConfig,
    rng: &mut R,
) -> Result<ConditionedModel> {
    let (&code, encoder_hidden) = config
        .hidden
        .split_last()
        .ok_or_else(|| Error::Config("predictor.hidden must be non-empty".into()))?;
    let encoder = MlpShape::stack(observation_dim, encoder_hidden, code, Activation::LeakyRelu, Activation::LeakyRelu)?;
    let decoder = MlpShape::stack(
        code,
        &config.decoder_hidden,
        observation_dim,
        Activation::LeakyRelu,
        Activation::Sigmoid,
    )?;
    let bonus = MlpShape::new(vec![code, 1], vec![Activation::Identity])?;
    ConditionedModel::new(encoder, Conditioning::Multiplicative { actions }, vec![decoder, bonus], rng)
}

/// One closed macro-step: start observation, action taken, real end
/// observation, and the raw bounty it produced for the level below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSample {
    pub start: Vec<f64>,
    pub action: usize,
    pub end: Vec<f64>,
    pub bonus: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorStats {
    pub transition_loss: f64,
    pub bonus_loss: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorLearner {
    pub model: ConditionedModel,
    pub optimizer: Adam,
}

impl PredictorLearner {
    pub fn new(model: ConditionedModel, adam: AdamConfig) -> Self {
        let optimizer = Adam::new(model.num_params(), adam);
        Self { model, optimizer }
    }

    pub fn actions(&self) -> usize {
        self.model.condition_count()
    }

    /// Predicted end observations for every action except `taken`, in action order.
    pub fn counterfactuals(&self, start: &[f64], taken: usize) -> Result<Vec<Vec<f64>>> {
        let actions = self.actions();
        if actions < 2 {
            return Err(Error::Intrinsic("counterfactuals need at least two actions"));
        }
        if taken >= actions {
            return Err(Error::OutOfRange {
                what: "predictor action",
                index: taken,
                count: actions,
            });
        }
        let code = self.model.encode(start)?;
        (0..actions)
            .filter(|&a| a != taken)
            .map(|a| self.model.head_from_code(&code, a, STATE))
            .collect()
    }

    /// Predicted observation and expected bounty for `(start, action)`.
    pub fn predict(&self, start: &[f64], action: usize) -> Result<(Vec<f64>, f64)> {
        let mut heads = self.model.conditioned_forward(start, action)?;
        let bonus = heads[BONUS][0];
        Ok((heads.swap_remove(STATE), bonus))
    }

    pub fn expected_bonus(&self, start: &[f64], action: usize) -> Result<f64> {
        let code = self.model.encode(start)?;
        Ok(self.model.head_from_code(&code, action, BONUS)?[0])
    }

    /// `(transition MSE, bounty MSE)` for one sample.
    pub fn losses(&self, sample: &PredictorSample) -> Result<(f64, f64)> {
        let (predicted, bonus) = self.predict(&sample.start, sample.action)?;
        if predicted.len() != sample.end.len() {
            return Err(Error::DimensionMismatch {
                context: "predicted vs real end observation",
                expected: predicted.len(),
                actual: sample.end.len(),
            });
        }
        let n = predicted.len() as f64;
        let transition = predicted.iter().zip(&sample.end).map(|(p, s)| (p - s).powi(2)).sum::<f64>() / n;
        Ok((transition, (bonus - sample.bonus).powi(2)))
    }

    /// Gradient of the summed losses averaged over `indices`, written into `grad`.
    pub fn gradient(&self, samples: &[PredictorSample], indices: &[usize], grad: &mut [f64]) -> Result<PredictorStats> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut stats = PredictorStats::default();
        if indices.is_empty() {
            return Ok(stats);
        }
        let scale = 1.0 / indices.len() as f64;
        let mut d_state = Vec::new();
        for &i in indices {
            let s = &samples[i];
            let trace = self.model.forward_trace(&s.start, s.action)?;
            let predicted = trace.output(STATE);
            if predicted.len() != s.end.len() {
                return Err(Error::DimensionMismatch {
                    context: "predicted vs real end observation",
                    expected: predicted.len(),
                    actual: s.end.len(),
                });
            }
            let n = predicted.len() as f64;
            d_state.clear();
            let mut transition = 0.0;
            for (p, t) in predicted.iter().zip(&s.end) {
                transition += (p - t).powi(2);
                d_state.push(2.0 * (p - t) / n * scale);
            }
            transition /= n;
            let err = trace.output(BONUS)[0] - s.bonus;
            if !(transition + err * err).is_finite() {
                return Err(Error::NonFiniteLoss { index: i });
            }
            stats.transition_loss += transition * scale;
            stats.bonus_loss += err * err * scale;
            let d_bonus = [2.0 * err * scale];
            self.model.backward(&trace, &[Some(&d_state), Some(&d_bonus)], grad);
        }
        stats.samples = indices.len();
        Ok(stats)
    }

    /// Prediction error of `end` given `(start, action)`, followed by one
    /// optimizer step on the observation head alone. Returns the error
    /// measured before the step.
    pub fn transition_step(&mut self, start: &[f64], action: usize, end: &[f64], max_grad_norm: f64) -> Result<f64> {
        let trace = self.model.forward_trace(start, action)?;
        let predicted = trace.output(STATE);
        if predicted.len() != end.len() {
            return Err(Error::DimensionMismatch {
                context: "predicted vs real next observation",
                expected: predicted.len(),
                actual: end.len(),
            });
        }
        let n = predicted.len() as f64;
        let mut mse = 0.0;
        let mut d_state = Vec::with_capacity(predicted.len());
        for (p, t) in predicted.iter().zip(end) {
            mse += (p - t).powi(2);
            d_state.push(2.0 * (p - t) / n);
        }
        mse /= n;
        if !mse.is_finite() {
            return Err(Error::NonFiniteLoss { index: 0 });
        }
        let mut grad = vec![0.0; self.model.num_params()];
        self.model.backward(&trace, &[Some(&d_state), None], &mut grad);
        clip_grad_norm(&mut grad, max_grad_norm);
        self.optimizer.step(self.model.params_mut(), &grad)?;
        Ok(mse)
    }

    /// Minibatch passes over `samples`; returns losses averaged over steps.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        samples: &[PredictorSample],
        config: &PredictorConfig,
        rng: &mut R,
    ) -> Result<PredictorStats> {
        let mut out = PredictorStats::default();
        if samples.is_empty() {
            return Ok(out);
        }
        let size = config.minibatch_size.min(samples.len());
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut grad = vec![0.0; self.model.num_params()];
        let mut steps = 0usize;
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(size) {
                let s = self.gradient(samples, chunk, &mut grad)?;
                clip_grad_norm(&mut grad, config.max_grad_norm);
                self.optimizer.step(self.model.params_mut(), &grad)?;
                out.transition_loss += s.transition_loss;
                out.bonus_loss += s.bonus_loss;
                steps += 1;
            }
        }
        out.transition_loss /= steps as f64;
        out.bonus_loss /= steps as f64;
        out.samples = samples.len();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn learner(actions: usize) -> PredictorLearner {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = PredictorConfig {
            hidden: vec![8],
            ..PredictorConfig::default()
        };
        PredictorLearner::new(build_predictor(6, actions, &cfg, &mut rng).unwrap(), cfg.adam)
    }

    #[test]
    fn counterfactual_count_excludes_taken_action() {
        let p = learner(5);
        let s = [0.0, 1.0, 0.0, 0.5, 0.0, 0.2];
        assert_eq!(p.counterfactuals(&s, 2).unwrap().len(), 4);
        assert_eq!(learner(2).counterfactuals(&s, 0).unwrap().len(), 1);
        assert!(learner(1).counterfactuals(&s, 0).is_err());
        assert!(p.counterfactuals(&s, 5).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = learner(3);
        let samples = vec![
            PredictorSample {
                start: vec![0.0, 1.0, 0.0, 0.5, 0.0, 0.2],
                action: 1,
                end: vec![0.1, 0.9, 0.3, 0.0, 1.0, 0.5],
                bonus: 0.3,
            },
            PredictorSample {
                start: vec![1.0, 0.0, 0.0, 0.0, 0.7, 0.0],
                action: 2,
                end: vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                bonus: -0.1,
            },
        ];
        let loss = |m: &PredictorLearner| -> f64 {
            samples
                .iter()
                .map(|s| {
                    let (a, b) = m.losses(s).unwrap();
                    a + b
                })
                .sum::<f64>()
                / 2.0
        };
        let mut grad = vec![0.0; p.model.num_params()];
        p.gradient(&samples, &[0, 1], &mut grad).unwrap();
        let h = 1e-5;
        for k in 0..grad.len() {
            let mut up = p.clone();
            up.model.params_mut()[k] += h;
            let mut down = p.clone();
            down.model.params_mut()[k] -= h;
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            let scale = grad[k].abs().max(numeric.abs()).max(1e-5);
            assert!((grad[k] - numeric).abs() / scale < 1e-4, "param {k}: {} vs {numeric}", grad[k]);
        }
    }
}
