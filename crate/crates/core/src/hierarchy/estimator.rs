//! State distance and the diversity bounty computed from it.

use serde::{Deserialize, Serialize};

use crate::envs::Observation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Distance to the closest counterfactual.
    Min,
    /// Sum of distances to every counterfactual.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceConfig {
    /// Weight of the mean absolute difference; the center-of-mass term gets `1 - alpha`.
    pub alpha: f64,
    pub mode: DistanceMode,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            mode: DistanceMode::Min,
        }
    }
}

impl DistanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "distance.alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Intensity-weighted mean (row, col) over all channels; the grid center
/// when the tensor carries no mass.
pub fn center_of_mass(shape: [usize; 3], data: &[f64]) -> (f64, f64) {
    let [_, h, w] = shape;
    let (mut mass, mut r, mut c) = (0.0, 0.0, 0.0);
    for plane in data.chunks_exact(h * w) {
        for (i, &v) in plane.iter().enumerate() {
            if v != 0.0 {
                mass += v;
                r += v * (i / w) as f64;
                c += v * (i % w) as f64;
            }
        }
    }
    if mass == 0.0 {
        ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0)
    } else {
        (r / mass, c / mass)
    }
}

/// Distance between two tensors of `shape` given as flat slices.
pub fn distance(shape: [usize; 3], a: &[f64], b: &[f64], alpha: f64) -> Result<f64> {
    let n: usize = shape.iter().product();
    for s in [a, b] {
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                context: "state distance operand",
                expected: n,
                actual: s.len(),
            });
        }
    }
    let l1 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    let (ra, ca) = center_of_mass(shape, a);
    let (rb, cb) = center_of_mass(shape, b);
    let diag = (((shape[1] - 1).pow(2) + (shape[2] - 1).pow(2)) as f64).sqrt();
    let com = if diag > 0.0 {
        ((ra - rb).powi(2) + (ca - cb).powi(2)).sqrt() / diag
    } else {
        0.0
    };
    Ok(alpha * l1 + (1.0 - alpha) * com)
}

pub fn state_distance(a: &Observation, b: &Observation, alpha: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Invalid(format!(
            "state distance between shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    distance(a.shape(), a.data(), b.data(), alpha)
}

/// Raw bounty: how far the real outcome lies from what the other actions
/// were predicted to produce.
pub fn intrinsic_reward_raw(
    shape: [usize; 3],
    real: &[f64],
    counterfactuals: &[Vec<f64>],
    config: DistanceConfig,
) -> Result<f64> {
    if counterfactuals.is_empty() {
        return Err(Error::Intrinsic("no counterfactual predictions to compare against"));
    }
    let mut out = match config.mode {
        DistanceMode::Min => f64::INFINITY,
        DistanceMode::Sum => 0.0,
    };
    for cf in counterfactuals {
        let d = distance(shape, real, cf, config.alpha)?;
        out = match config.mode {
            DistanceMode::Min => out.min(d),
            DistanceMode::Sum => out + d,
        };
    }
    Ok(out)
}

/// Centers a raw bounty on its predicted expectation.
pub fn normalize_intrinsic(raw: f64, expected: f64) -> f64 {
    raw - expected
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_intrinsic(0.7, 0.0), 0.7);
        assert_eq!(normalize_intrinsic(0.4, 0.4), 0.0);
        assert!((normalize_intrinsic(0.25, 0.40) + 0.15).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Observation::zeros([1, 2, 2]);
        let b = Observation::zeros([1, 2, 3]);
        assert!(state_distance(&a, &b, 0.5).is_err());
        assert!(distance([1, 2, 2], &[0.0; 4], &[0.0; 3], 0.5).is_err());
    }

    #[test]
    fn empty_counterfactual_set_is_an_error() {
        assert!(matches!(
            intrinsic_reward_raw([1, 1, 1], &[0.0], &[], DistanceConfig::default()),
            Err(Error::Intrinsic(_))
        ));
    }
}
