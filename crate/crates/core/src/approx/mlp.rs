//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat `f64` slice per network. Each layer is laid out
//! as an `in_dim x out_dim` weight block (row `i` holds the fan-out of input
//! `i`) followed by `out_dim` biases. Row-per-input storage lets the forward
//! pass skip zero inputs, which matters for the sparse grid encodings the
//! environments produce.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Layer dimensions and activations of a dense network, without parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    dims: Vec<usize>,
    activations: Vec<Activation>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl MlpShape {
    /// `dims` lists every width from input to output; `activations` has one
    /// entry per layer.
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output width".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::DimensionMismatch {
                context: "activations per layer",
                expected: dims.len() - 1,
                actual: activations.len(),
            });
        }
        Ok(Self { dims, activations })
    }

    /// Hidden layers use `hidden_act`, the final layer `output_act`.
    pub fn stack(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut activations = vec![hidden_act; hidden.len()];
        activations.push(output_act);
        Self::new(dims, activations)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().expect("validated non-empty")
    }

    pub fn layers(&self) -> usize {
        self.activations.len()
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        debug_assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for w in self.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for p in &mut params[offset..offset + fan_in * fan_out] {
                *p = dist.sample(rng);
            }
            offset += fan_in * fan_out;
            params[offset..offset + fan_out].fill(0.0);
            offset += fan_out;
        }
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if input.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.in_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn affine(weights: &[f64], biases: &[f64], x: &[f64], z: &mut Vec<f64>) {
        let fan_out = biases.len();
        z.clear();
        z.extend_from_slice(biases);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &weights[i * fan_out..(i + 1) * fan_out];
            for (zj, &wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check(params, input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        let mut offset = 0;
        for (w, act) in self.dims.windows(2).zip(&self.activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let biases = &params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            Self::affine(weights, biases, &x, &mut z);
            x.clear();
            x.extend(z.iter().map(|&v| act.apply(v)));
        }
        Ok(x)
    }

    pub fn forward_trace(&self, params: &[f64], input: &[f64]) -> Result<MlpTrace> {
        self.check(params, input)?;
        let mut inputs = Vec::with_capacity(self.layers());
        let mut pre = Vec::with_capacity(self.layers());
        let mut x = input.to_vec();
        let mut offset = 0;
        for (w, act) in self.dims.windows(2).zip(&self.activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let biases = &params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let mut z = Vec::with_capacity(fan_out);
            Self::affine(weights, biases, &x, &mut z);
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut x, y));
            pre.push(z);
        }
        Ok(MlpTrace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
    /// Returns the gradient with respect to the network input when requested.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &MlpTrace,
        d_output: &[f64],
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        debug_assert_eq!(d_output.len(), self.out_dim());
        debug_assert_eq!(grad.len(), self.param_count());
        let mut offsets = Vec::with_capacity(self.layers());
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += (w[0] + 1) * w[1];
        }

        let mut delta = d_output.to_vec();
        for layer in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
            let act = self.activations[layer];
            let z = &trace.pre[layer];
            let y: &[f64] = if layer + 1 == self.layers() {
                &trace.output
            } else {
                &trace.inputs[layer + 1]
            };
            for j in 0..fan_out {
                delta[j] *= act.derivative(z[j], y[j]);
            }

            let base = offsets[layer];
            let x = &trace.inputs[layer];
            let (gw, gb) = grad[base..base + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            for (gbj, &dj) in gb.iter_mut().zip(&delta) {
                *gbj += dj;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (g, &dj) in gw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(&delta) {
                    *g += xi * dj;
                }
            }

            if layer == 0 && !want_input_grad {
                return None;
            }
            let weights = &params[base..base + fan_in * fan_out];
            let prev: Vec<f64> = (0..fan_in)
                .map(|i| {
                    weights[i * fan_out..(i + 1) * fan_out]
                        .iter()
                        .zip(&delta)
                        .map(|(w, d)| w * d)
                        .sum()
                })
                .collect();
            delta = prev;
        }
        Some(delta)
    }
}

/// A dense network that owns its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Self {
        let mut params = vec![0.0; shape.param_count()];
        shape.init(rng, &mut params);
        Self { shape, params }
    }

    pub fn zeros(shape: MlpShape) -> Self {
        let params = vec![0.0; shape.param_count()];
        Self { shape, params }
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                expected: shape.param_count(),
                actual: params.len(),
            });
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.shape.forward(&self.params, input)
    }

    /// Gradient of `sum_i loss(i, f(inputs[i]))`.
    ///
    /// `loss` returns the scalar loss of sample `i` and its derivative with
    /// respect to the network output. Returns the summed loss and gradient.
    pub fn grad<F>(&self, inputs: &[Vec<f64>], mut loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(usize, &[f64]) -> (f64, Vec<f64>),
    {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for (index, input) in inputs.iter().enumerate() {
            let trace = self.shape.forward_trace(&self.params, input)?;
            let (value, d_out) = loss(index, trace.output());
            if !value.is_finite() || d_out.iter().any(|d| !d.is_finite()) {
                return Err(Error::NonFiniteLoss { index });
            }
            if d_out.len() != self.shape.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "loss derivative",
                    expected: self.shape.out_dim(),
                    actual: d_out.len(),
                });
            }
            total += value;
            self.shape
                .backward(&self.params, &trace, &d_out, &mut grad, false);
        }
        Ok((total, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(dims: &[usize]) -> MlpShape {
        MlpShape::stack(
            dims[0],
            &dims[1..dims.len() - 1],
            dims[dims.len() - 1],
            Activation::LeakyRelu,
            Activation::Identity,
        )
        .unwrap()
    }

    /// Straight-line re-evaluation with the textbook `W x + b` loop order.
    fn oracle_forward(shape: &MlpShape, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, act) in shape.activations().iter().enumerate() {
            let (n_in, n_out) = (shape.dims()[l], shape.dims()[l + 1]);
            let mut y = vec![0.0; n_out];
            for (j, yj) in y.iter_mut().enumerate() {
                let mut s = params[offset + n_in * n_out + j];
                for (i, xi) in x.iter().enumerate() {
                    s += params[offset + i * n_out + j] * xi;
                }
                *yj = match act {
                    Activation::LeakyRelu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.01 * s
                        }
                    }
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                    Activation::Identity => s,
                };
            }
            offset += (n_in + 1) * n_out;
            x = y;
        }
        x
    }

    #[test]
    fn param_count_matches_layer_sum() {
        let s = shape(&[7, 5, 3, 2]);
        assert_eq!(s.param_count(), 8 * 5 + 6 * 3 + 4 * 2);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(shape(&[4, 6, 3]));
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let s = MlpShape::new(vec![3, 3], vec![Activation::Identity]).unwrap();
        let mut params = vec![0.0; s.param_count()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = Mlp::from_params(s, params).unwrap();
        let x = [0.25, -1.5, 4.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(shape(&[5, 8, 3]), &mut rng);
        let x = [0.3, -0.7, 0.0, 1.2, 0.05];
        let got = net.forward(&x).unwrap();
        let want = oracle_forward(net.shape(), net.params(), &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = Mlp::zeros(shape(&[4, 2]));
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("expected 4, got 2"), "{err}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(shape(&[3, 4, 2]), &mut rng);
        let (_, g) = net
            .grad(&[vec![1.0, 2.0, 3.0]], |_, _| (5.0, vec![0.0, 0.0]))
            .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_loss_reports_batch_index() {
        let net = Mlp::zeros(shape(&[2, 1]));
        let batch = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let err = net
            .grad(&batch, |i, _| {
                if i == 2 {
                    (f64::NAN, vec![0.0])
                } else {
                    (0.0, vec![0.0])
                }
            })
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { index: 2 }));
    }

    #[test]
    fn mse_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = MlpShape::stack(4, &[6, 5], 3, Activation::LeakyRelu, Activation::Sigmoid).unwrap();
        let net = Mlp::new(s, &mut rng);
        let batch: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..4).map(|i| ((k * 4 + i) as f64 * 0.37).sin()).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..3).map(|i| ((k + i) as f64 * 0.21).cos().abs()).collect())
            .collect();
        let mse = |out: &[f64], t: &[f64]| -> f64 {
            out.iter().zip(t).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / t.len() as f64
        };
        let (_, analytic) = net
            .grad(&batch, |i, out| {
                let t = &targets[i];
                let d = out
                    .iter()
                    .zip(t)
                    .map(|(o, tv)| 2.0 * (o - tv) / t.len() as f64)
                    .collect();
                (mse(out, t), d)
            })
            .unwrap();
        let total = |p: &[f64]| -> f64 {
            batch
                .iter()
                .zip(&targets)
                .map(|(x, t)| mse(&net.shape().forward(p, x).unwrap(), t))
                .sum()
        };
        let h = 1e-6;
        let mut p = net.params().to_vec();
        for k in 0..p.len() {
            let orig = p[k];
            p[k] = orig + h;
            let up = total(&p);
            p[k] = orig - h;
            let down = total(&p);
            p[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic[k] - numeric).abs() / scale < 1e-4,
                "param {k}: analytic {} numeric {numeric}",
                analytic[k]
            );
        }
    }
}
