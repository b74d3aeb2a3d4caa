//! Function approximation: dense networks, action-conditioned models, Adam.

mod adam;
mod conditioned;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use conditioned::{ConditionedModel, ConditionedTrace, Conditioning};
pub use mlp::{Activation, Mlp, MlpShape, MlpTrace, LEAKY_SLOPE};

/// Scales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
