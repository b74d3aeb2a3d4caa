use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    /// Size of this level's action space.
    pub actions: usize,
    /// Primitive steps between two decisions of this level.
    pub period: usize,
    /// Weight of the bounty this level receives from the level above.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl LevelSpec {
    pub fn new(actions: usize, period: usize) -> Self {
        Self {
            actions,
            period,
            lambda: 1.0,
        }
    }
}

/// Levels ordered bottom (environment actions) to top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HierarchySpec {
    pub levels: Vec<LevelSpec>,
}

impl HierarchySpec {
    pub fn new(levels: Vec<LevelSpec>) -> Self {
        Self { levels }
    }

    /// Builds a spec from parallel action-count and period lists.
    pub fn from_lists(actions: &[usize], periods: &[usize]) -> Result<Self> {
        if actions.len() != periods.len() {
            return Err(Error::Config(format!(
                "hierarchy has {} action counts but {} periods",
                actions.len(),
                periods.len()
            )));
        }
        Ok(Self::new(
            actions.iter().zip(periods).map(|(&a, &t)| LevelSpec::new(a, t)).collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn validate(&self, env_actions: usize) -> Result<()> {
        let Some(bottom) = self.levels.first() else {
            return Err(Error::Config("hierarchy.levels must contain at least one level".into()));
        };
        if bottom.period != 1 {
            return Err(Error::Config(format!(
                "hierarchy.levels[0].period must be 1, got {}",
                bottom.period
            )));
        }
        if bottom.actions != env_actions {
            return Err(Error::Config(format!(
                "hierarchy.levels[0].actions = {} but the environment has {} actions",
                bottom.actions, env_actions
            )));
        }
        for (l, level) in self.levels.iter().enumerate() {
            if level.actions == 0 {
                return Err(Error::Config(format!("hierarchy.levels[{l}].actions must be positive")));
            }
            if !level.lambda.is_finite() || level.lambda < 0.0 {
                return Err(Error::Config(format!(
                    "hierarchy.levels[{l}].lambda must be finite and nonnegative"
                )));
            }
            if l == 0 {
                continue;
            }
            let below = self.levels[l - 1].period;
            if level.period == 0 || level.period % below != 0 {
                return Err(Error::Config(format!(
                    "hierarchy.levels[{l}].period = {} must be a positive integer multiple of \
                     hierarchy.levels[{}].period = {below}",
                    level.period,
                    l - 1
                )));
            }
            if level.actions < 2 {
                return Err(Error::Config(format!(
                    "hierarchy.levels[{l}].actions must be at least 2 so the level above the \
                     bottom can produce counterfactual predictions"
                )));
            }
        }
        Ok(())
    }
}
