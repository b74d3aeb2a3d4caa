//! Networks whose outputs depend on a discrete conditioning index.
//!
//! Two conditioning styles are supported:
//!
//! - [`Conditioning::Multiplicative`]: the state code produced by the encoder
//!   is multiplied elementwise with a learned embedding of the index before
//!   the heads see it (action-conditioned prediction).
//! - [`Conditioning::Branch`]: the index selects one of several independent
//!   sets of heads on top of a shared encoder (one policy/value pair per
//!   upper-level action).

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpShape, MlpTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    Multiplicative { actions: usize },
    Branch { branches: usize },
}

impl Conditioning {
    pub fn count(&self) -> usize {
        match *self {
            Conditioning::Multiplicative { actions } => actions,
            Conditioning::Branch { branches } => branches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedModel {
    encoder: MlpShape,
    conditioning: Conditioning,
    heads: Vec<MlpShape>,
    params: Vec<f64>,
}

/// Forward-pass record for [`ConditionedModel::backward`].
#[derive(Debug, Clone)]
pub struct ConditionedTrace {
    condition: usize,
    encoder: MlpTrace,
    head_input: Vec<f64>,
    heads: Vec<MlpTrace>,
}

impl ConditionedTrace {
    pub fn output(&self, head: usize) -> &[f64] {
        self.heads[head].output()
    }

    pub fn condition(&self) -> usize {
        self.condition
    }
}

impl ConditionedModel {
    pub fn new<R: Rng + ?Sized>(
        encoder: MlpShape,
        conditioning: Conditioning,
        heads: Vec<MlpShape>,
        rng: &mut R,
    ) -> Result<Self> {
        if conditioning.count() == 0 {
            return Err(Error::Config("conditioning count must be positive".into()));
        }
        if heads.is_empty() {
            return Err(Error::Config("a conditioned model needs at least one head".into()));
        }
        let code = encoder.out_dim();
        for head in &heads {
            if head.in_dim() != code {
                return Err(Error::DimensionMismatch {
                    context: "head input vs encoder output",
                    expected: code,
                    actual: head.in_dim(),
                });
            }
        }
        let mut model = Self {
            encoder,
            conditioning,
            heads,
            params: Vec::new(),
        };
        model.params = vec![0.0; model.layout_len()];
        model.reinitialize(rng);
        Ok(model)
    }

    fn branches(&self) -> usize {
        match self.conditioning {
            Conditioning::Multiplicative { .. } => 1,
            Conditioning::Branch { branches } => branches,
        }
    }

    fn embedding_len(&self) -> usize {
        match self.conditioning {
            Conditioning::Multiplicative { actions } => actions * self.encoder.out_dim(),
            Conditioning::Branch { .. } => 0,
        }
    }

    fn heads_len(&self) -> usize {
        self.heads.iter().map(MlpShape::param_count).sum()
    }

    fn layout_len(&self) -> usize {
        self.encoder.param_count() + self.embedding_len() + self.branches() * self.heads_len()
    }

    /// Draws fresh parameters with the same initialization used at construction.
    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let enc = self.encoder.param_count();
        self.encoder.init(rng, &mut self.params[..enc]);
        let emb = self.embedding_range();
        if let Conditioning::Multiplicative { actions } = self.conditioning {
            // one-hot input into a dense layer: fan-in is the action count
            let limit = 1.0 / (actions as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for p in &mut self.params[emb.clone()] {
                *p = dist.sample(rng);
            }
        }
        let mut offset = emb.end;
        for _ in 0..self.branches() {
            for head in &self.heads {
                let n = head.param_count();
                head.init(rng, &mut self.params[offset..offset + n]);
                offset += n;
            }
        }
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn condition_count(&self) -> usize {
        self.conditioning.count()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self, head: usize) -> usize {
        self.heads[head].out_dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.encoder.param_count()
    }

    pub fn embedding_range(&self) -> std::ops::Range<usize> {
        let start = self.encoder.param_count();
        start..start + self.embedding_len()
    }

    fn head_range(&self, branch: usize, head: usize) -> std::ops::Range<usize> {
        let mut start = self.embedding_range().end + branch * self.heads_len();
        for h in &self.heads[..head] {
            start += h.param_count();
        }
        start..start + self.heads[head].param_count()
    }

    /// Overwrites the embedding of one conditioning action.
    pub fn set_embedding(&mut self, action: usize, values: &[f64]) -> Result<()> {
        let Conditioning::Multiplicative { actions } = self.conditioning else {
            return Err(Error::Invalid("model has no action embeddings".into()));
        };
        self.check_condition(action)?;
        let code = self.code_dim();
        if values.len() != code {
            return Err(Error::DimensionMismatch {
                context: "action embedding",
                expected: code,
                actual: values.len(),
            });
        }
        debug_assert!(action < actions);
        let start = self.embedding_range().start + action * code;
        self.params[start..start + code].copy_from_slice(values);
        Ok(())
    }

    fn check_condition(&self, condition: usize) -> Result<()> {
        let count = self.condition_count();
        if condition >= count {
            return Err(Error::OutOfRange {
                what: "conditioning action",
                index: condition,
                count,
            });
        }
        Ok(())
    }

    /// State code of the encoder (before conditioning).
    pub fn encode(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.encoder
            .forward(&self.params[self.encoder_range()], observation)
    }

    fn head_input(&self, code: &[f64], condition: usize) -> (usize, Vec<f64>) {
        match self.conditioning {
            Conditioning::Multiplicative { .. } => {
                let dim = code.len();
                let start = self.embedding_range().start + condition * dim;
                let emb = &self.params[start..start + dim];
                (0, code.iter().zip(emb).map(|(c, e)| c * e).collect())
            }
            Conditioning::Branch { .. } => (condition, code.to_vec()),
        }
    }

    /// Evaluates every head for `condition` given an encoder output.
    pub fn heads_from_code(&self, code: &[f64], condition: usize) -> Result<Vec<Vec<f64>>> {
        self.check_condition(condition)?;
        if code.len() != self.code_dim() {
            return Err(Error::DimensionMismatch {
                context: "state code",
                expected: self.code_dim(),
                actual: code.len(),
            });
        }
        let (branch, input) = self.head_input(code, condition);
        (0..self.heads.len())
            .map(|h| self.heads[h].forward(&self.params[self.head_range(branch, h)], &input))
            .collect()
    }

    /// Evaluates a single head; cheaper when the others are not needed.
    pub fn head_from_code(&self, code: &[f64], condition: usize, head: usize) -> Result<Vec<f64>> {
        self.check_condition(condition)?;
        let (branch, input) = self.head_input(code, condition);
        self.heads[head].forward(&self.params[self.head_range(branch, head)], &input)
    }

    pub fn conditioned_forward(&self, observation: &[f64], condition: usize) -> Result<Vec<Vec<f64>>> {
        self.check_condition(condition)?;
        let code = self.encode(observation)?;
        self.heads_from_code(&code, condition)
    }

    pub fn forward_trace(&self, observation: &[f64], condition: usize) -> Result<ConditionedTrace> {
        self.check_condition(condition)?;
        let encoder = self
            .encoder
            .forward_trace(&self.params[self.encoder_range()], observation)?;
        let (branch, head_input) = self.head_input(encoder.output(), condition);
        let heads = (0..self.heads.len())
            .map(|h| {
                self.heads[h].forward_trace(&self.params[self.head_range(branch, h)], &head_input)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConditionedTrace {
            condition,
            encoder,
            head_input,
            heads,
        })
    }

    /// Accumulates parameter gradients into `grad` (same length as the
    /// parameters). `d_heads[h]` is `d(loss)/d(output of head h)`; `None`
    /// marks a head that does not contribute to the loss.
    pub fn backward(&self, trace: &ConditionedTrace, d_heads: &[Option<&[f64]>], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(d_heads.len(), self.heads.len());
        let branch = match self.conditioning {
            Conditioning::Multiplicative { .. } => 0,
            Conditioning::Branch { .. } => trace.condition,
        };
        let mut d_input = vec![0.0; trace.head_input.len()];
        let mut any = false;
        for (h, d) in d_heads.iter().enumerate() {
            let Some(d) = d else { continue };
            any = true;
            let range = self.head_range(branch, h);
            let di = self.heads[h]
                .backward(
                    &self.params[range.clone()],
                    &trace.heads[h],
                    d,
                    &mut grad[range],
                    true,
                )
                .expect("input gradient requested");
            for (acc, v) in d_input.iter_mut().zip(di) {
                *acc += v;
            }
        }
        if !any {
            return;
        }
        let d_code = match self.conditioning {
            Conditioning::Multiplicative { .. } => {
                let dim = self.code_dim();
                let start = self.embedding_range().start + trace.condition * dim;
                let code = trace.encoder.output();
                let mut d_code = vec![0.0; dim];
                for k in 0..dim {
                    d_code[k] = d_input[k] * self.params[start + k];
                    grad[start + k] += d_input[k] * code[k];
                }
                d_code
            }
            Conditioning::Branch { .. } => d_input,
        };
        let enc = self.encoder_range();
        self.encoder
            .backward(&self.params[enc.clone()], &trace.encoder, &d_code, &mut grad[enc], false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn predictor(rng: &mut ChaCha8Rng) -> ConditionedModel {
        let encoder = MlpShape::stack(6, &[8], 5, Activation::LeakyRelu, Activation::LeakyRelu).unwrap();
        let state = MlpShape::stack(5, &[7], 6, Activation::LeakyRelu, Activation::Sigmoid).unwrap();
        let scalar = MlpShape::stack(5, &[], 1, Activation::LeakyRelu, Activation::Identity).unwrap();
        ConditionedModel::new(encoder, Conditioning::Multiplicative { actions: 4 }, vec![state, scalar], rng)
            .unwrap()
    }

    fn obs() -> Vec<f64> {
        vec![0.2, 0.0, 1.0, -0.4, 0.9, 0.3]
    }

    #[test]
    fn embedding_length_matches_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = predictor(&mut rng);
        assert_eq!(m.embedding_range().len(), 4 * m.code_dim());
        assert!(m.set_embedding(0, &[1.0; 3]).is_err());
    }

    #[test]
    fn unit_embedding_reduces_to_unconditioned_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = predictor(&mut rng);
        m.set_embedding(1, &vec![1.0; m.code_dim()]).unwrap();
        let code = m.encode(&obs()).unwrap();
        let out = m.conditioned_forward(&obs(), 1).unwrap();
        for h in 0..2 {
            let direct = m.heads[h].forward(&m.params[m.head_range(0, h)], &code).unwrap();
            assert_eq!(out[h], direct);
        }
    }

    #[test]
    fn zero_embedding_hides_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = predictor(&mut rng);
        m.set_embedding(2, &vec![0.0; m.code_dim()]).unwrap();
        let a = m.conditioned_forward(&obs(), 2).unwrap();
        let b = m.conditioned_forward(&[5.0, -1.0, 0.0, 0.0, 2.0, 1.0], 2).unwrap();
        assert_eq!(a, b);
        let zero = m.heads_from_code(&vec![0.0; m.code_dim()], 0).unwrap();
        let mut m0 = m.clone();
        m0.set_embedding(0, &vec![1.0; m.code_dim()]).unwrap();
        assert_eq!(a, m0.heads_from_code(&vec![0.0; m.code_dim()], 0).unwrap());
        assert_eq!(zero.len(), 2);
    }

    #[test]
    fn distinct_actions_give_distinct_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = predictor(&mut rng);
        let a = m.conditioned_forward(&obs(), 0).unwrap();
        let b = m.conditioned_forward(&obs(), 3).unwrap();
        assert_ne!(a[0], b[0]);
    }

    #[test]
    fn out_of_range_condition_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = predictor(&mut rng);
        assert!(matches!(
            m.conditioned_forward(&obs(), 4),
            Err(Error::OutOfRange { index: 4, count: 4, .. })
        ));
    }

    fn check_gradient(m: &ConditionedModel, condition: usize) {
        let target = [0.1, 0.9, 0.4, 0.0, 1.0, 0.5];
        let loss = |params: &[f64]| -> f64 {
            let mut mm = m.clone();
            mm.params_mut().copy_from_slice(params);
            let out = mm.conditioned_forward(&obs(), condition).unwrap();
            let mut l: f64 = out[0].iter().zip(&target).map(|(o, t)| (o - t).powi(2)).sum();
            for (k, v) in out.iter().skip(1).flatten().enumerate() {
                l += (k as f64 + 0.5) * v * v;
            }
            l
        };
        let trace = m.forward_trace(&obs(), condition).unwrap();
        let d0: Vec<f64> = trace.output(0).iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let d_rest: Vec<Vec<f64>> = (1..m.head_count())
            .map(|h| {
                trace
                    .output(h)
                    .iter()
                    .enumerate()
                    .map(|(k, v)| 2.0 * (k as f64 + 0.5) * v)
                    .collect()
            })
            .collect();
        let mut d_heads: Vec<Option<&[f64]>> = vec![Some(&d0)];
        d_heads.extend(d_rest.iter().map(|d| Some(d.as_slice())));
        let mut grad = vec![0.0; m.num_params()];
        m.backward(&trace, &d_heads, &mut grad);
        let mut p = m.params().to_vec();
        let h = 1e-5;
        for k in 0..p.len() {
            let orig = p[k];
            p[k] = orig + h;
            let up = loss(&p);
            p[k] = orig - h;
            let down = loss(&p);
            p[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = grad[k].abs().max(numeric.abs()).max(1e-5);
            assert!((grad[k] - numeric).abs() / scale < 1e-4, "param {k}: {} vs {numeric}", grad[k]);
        }
    }

    #[test]
    fn multiplicative_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = predictor(&mut rng);
        check_gradient(&m, 2);
    }

    #[test]
    fn branch_gradient_matches_finite_differences_and_isolates_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let encoder = MlpShape::stack(6, &[5], 4, Activation::LeakyRelu, Activation::LeakyRelu).unwrap();
        let logits = MlpShape::stack(4, &[], 6, Activation::LeakyRelu, Activation::Identity).unwrap();
        let value = MlpShape::stack(4, &[], 1, Activation::LeakyRelu, Activation::Identity).unwrap();
        let m = ConditionedModel::new(encoder, Conditioning::Branch { branches: 3 }, vec![logits, value], &mut rng)
            .unwrap();
        check_gradient(&m, 1);
        let trace = m.forward_trace(&obs(), 1).unwrap();
        let mut grad = vec![0.0; m.num_params()];
        m.backward(&trace, &[Some(&[1.0; 6]), Some(&[1.0])], &mut grad);
        for branch in [0, 2] {
            for h in 0..2 {
                assert!(grad[m.head_range(branch, h)].iter().all(|&g| g == 0.0));
            }
        }
    }
}
