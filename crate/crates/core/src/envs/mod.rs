//! Seedable environments behind one step/reset/render interface.

pub mod minecraft;
pub mod overcooked;
pub mod trace;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use minecraft::{MineCraftConfig, VoxelWorld};
use overcooked::{OverCookedConfig, OverCookedState};

/// Nonnegative `channels x height x width` tensor with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Observation {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::DimensionMismatch {
                context: "observation data",
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn index(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.shape[1] + r) * self.shape[2] + col
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[self.index(c, r, col)]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, value: f64) {
        let i = self.index(c, r, col);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    /// First (row, col) holding the channel maximum.
    pub fn channel_argmax(&self, c: usize) -> (usize, usize) {
        let plane = self.channel(c);
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        (best / self.shape[2], best % self.shape[2])
    }

    /// Intensity-weighted mean (row, col) of one channel.
    pub fn channel_center_of_mass(&self, c: usize) -> (f64, f64) {
        let w = self.shape[2];
        let (mut mass, mut r, mut col) = (0.0, 0.0, 0.0);
        for (i, &v) in self.channel(c).iter().enumerate() {
            mass += v;
            r += v * (i / w) as f64;
            col += v * (i % w) as f64;
        }
        if mass == 0.0 {
            ((self.shape[1] - 1) as f64 / 2.0, (w - 1) as f64 / 2.0)
        } else {
            (r / mass, col / mass)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    fn action_count(&self) -> usize;
    fn observation_shape(&self) -> [usize; 3];
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    fn observe(&self) -> Observation;
    fn is_done(&self) -> bool;
    /// Stable digest of the full environment state.
    fn state_hash(&self) -> String;
    /// Valid Operations so far, for environments that define it.
    fn valid_operations(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    OverCooked(OverCookedConfig),
    MineCraft(MineCraftConfig),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::OverCooked(c) => c.validate(),
            EnvConfig::MineCraft(c) => c.validate(),
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvConfig::OverCooked(_) => overcooked::ACTIONS,
            EnvConfig::MineCraft(c) => c.actions,
        }
    }

    pub fn observation_shape(&self) -> [usize; 3] {
        match self {
            EnvConfig::OverCooked(c) => c.observation_shape(),
            EnvConfig::MineCraft(c) => c.observation_shape(),
        }
    }

    pub fn build(&self) -> Result<Env> {
        self.validate()?;
        Ok(match self {
            EnvConfig::OverCooked(c) => Env::OverCooked(OverCooked {
                state: overcooked::overcooked_reset(c, 0),
                config: c.clone(),
            }),
            EnvConfig::MineCraft(c) => Env::MineCraft(MineCraft {
                world: VoxelWorld::new(c.clone()),
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverCooked {
    pub config: OverCookedConfig,
    pub state: OverCookedState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineCraft {
    pub world: VoxelWorld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Env {
    OverCooked(OverCooked),
    MineCraft(MineCraft),
}

impl Env {
    pub fn as_overcooked(&self) -> Option<&OverCooked> {
        match self {
            Env::OverCooked(o) => Some(o),
            Env::MineCraft(_) => None,
        }
    }

    pub fn as_overcooked_mut(&mut self) -> Option<&mut OverCooked> {
        match self {
            Env::OverCooked(o) => Some(o),
            Env::MineCraft(_) => None,
        }
    }

    pub fn as_minecraft(&self) -> Option<&MineCraft> {
        match self {
            Env::MineCraft(m) => Some(m),
            Env::OverCooked(_) => None,
        }
    }
}

pub(crate) fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("state serializes");
    let hash = Sha256::digest(&bytes);
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl Environment for Env {
    fn action_count(&self) -> usize {
        match self {
            Env::OverCooked(_) => overcooked::ACTIONS,
            Env::MineCraft(m) => m.world.config().actions,
        }
    }

    fn observation_shape(&self) -> [usize; 3] {
        match self {
            Env::OverCooked(o) => o.config.observation_shape(),
            Env::MineCraft(m) => m.world.config().observation_shape(),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        match self {
            Env::OverCooked(o) => {
                o.state = overcooked::overcooked_reset(&o.config, seed);
            }
            Env::MineCraft(m) => m.world.reset(),
        }
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        match self {
            Env::OverCooked(o) => overcooked::overcooked_step(&o.config, &mut o.state, action),
            Env::MineCraft(m) => m.world.step(action),
        }
    }

    fn observe(&self) -> Observation {
        match self {
            Env::OverCooked(o) => overcooked::overcooked_render(&o.state, o.config.encoding),
            Env::MineCraft(m) => m.world.render(),
        }
    }

    fn is_done(&self) -> bool {
        match self {
            Env::OverCooked(o) => o.state.is_done(),
            Env::MineCraft(m) => m.world.is_done(),
        }
    }

    fn state_hash(&self) -> String {
        match self {
            Env::OverCooked(o) => digest(&o.state),
            Env::MineCraft(m) => digest(&m.world),
        }
    }

    fn valid_operations(&self) -> Option<usize> {
        self.as_minecraft().map(|m| m.world.valid_operations())
    }
}
