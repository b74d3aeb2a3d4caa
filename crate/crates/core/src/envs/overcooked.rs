//! OverCooked: a chef with four legs fetching ingredients from the corners.
//!
//! Each primitive action commands one leg towards one direction. The body
//! only moves once all four legs point the same way, after which every leg
//! returns to rest. Ingredients are picked up by walking onto them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, StepOutcome};
use crate::error::{Error, Result};

pub const LEGS: usize = 4;
pub const INGREDIENTS: usize = 4;
pub const ACTIONS: usize = LEGS * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// (row, column) displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

/// `None` is a leg at rest.
pub type Leg = Option<Direction>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalType {
    Any,
    Fix,
    Random,
}

/// One of the six extrinsic reward settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRewardSetting", into = "RawRewardSetting")]
pub struct RewardSetting {
    level: u8,
    goal: GoalType,
    fixed_goal: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRewardSetting {
    reward_level: u8,
    goal_type: GoalType,
    #[serde(default)]
    fixed_goal: usize,
}

impl TryFrom<RawRewardSetting> for RewardSetting {
    type Error = Error;

    fn try_from(raw: RawRewardSetting) -> Result<Self> {
        RewardSetting::new(raw.reward_level, raw.goal_type, raw.fixed_goal)
    }
}

impl From<RewardSetting> for RawRewardSetting {
    fn from(s: RewardSetting) -> Self {
        RawRewardSetting {
            reward_level: s.level,
            goal_type: s.goal,
            fixed_goal: s.fixed_goal,
        }
    }
}

impl RewardSetting {
    pub fn new(reward_level: u8, goal: GoalType, fixed_goal: usize) -> Result<Self> {
        if !(1..=2).contains(&reward_level) {
            return Err(Error::Config(format!(
                "reward_level must be 1 or 2, got {reward_level}"
            )));
        }
        if fixed_goal >= INGREDIENTS {
            return Err(Error::Config(format!(
                "fixed_goal must be an ingredient id below {INGREDIENTS}, got {fixed_goal}"
            )));
        }
        Ok(Self {
            level: reward_level,
            goal,
            fixed_goal,
        })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn goal(&self) -> GoalType {
        self.goal
    }

    pub fn fixed_goal(&self) -> usize {
        self.fixed_goal
    }

    /// Every constructible setting.
    pub fn all() -> Vec<RewardSetting> {
        let mut out = Vec::new();
        for level in 1..=2 {
            for goal in [GoalType::Any, GoalType::Fix, GoalType::Random] {
                out.push(RewardSetting::new(level, goal, 0).expect("valid"));
            }
        }
        out
    }

    /// Ingredient order the episode asks for; `None` when any order works.
    fn ordered_goal(&self, to_pick: &[usize; INGREDIENTS]) -> Option<[usize; INGREDIENTS]> {
        match self.goal {
            GoalType::Any => None,
            GoalType::Fix => {
                let mut order = [0; INGREDIENTS];
                for (k, slot) in order.iter_mut().enumerate() {
                    *slot = (self.fixed_goal + k) % INGREDIENTS;
                }
                Some(order)
            }
            GoalType::Random => Some(*to_pick),
        }
    }
}

impl Default for RewardSetting {
    fn default() -> Self {
        RewardSetting::new(1, GoalType::Any, 0).expect("valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Channel planes: body, leg-by-direction, uncollected ingredients,
    /// next target. All values in {0, 1}.
    Compact,
    /// Single grayscale raster at three pixels per cell.
    Pixel,
}

pub const PIXELS_PER_CELL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverCookedConfig {
    pub grid_size: usize,
    pub step_limit: u32,
    pub encoding: Encoding,
    pub reward: RewardSetting,
}

impl Default for OverCookedConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            step_limit: 1000,
            encoding: Encoding::Compact,
            reward: RewardSetting::default(),
        }
    }
}

impl OverCookedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 3 {
            return Err(Error::Config(format!(
                "env.grid_size must be at least 3, got {}",
                self.grid_size
            )));
        }
        if self.step_limit == 0 {
            return Err(Error::Config("env.step_limit must be positive".into()));
        }
        Ok(())
    }

    pub fn observation_shape(&self) -> [usize; 3] {
        let n = self.grid_size;
        match self.encoding {
            Encoding::Compact => [compact::CHANNELS, n, n],
            Encoding::Pixel => [1, n * PIXELS_PER_CELL, n * PIXELS_PER_CELL],
        }
    }
}

mod compact {
    pub const BODY: usize = 0;
    pub const LEGS: usize = 1;
    pub const INGREDIENTS: usize = 17;
    pub const TARGET: usize = 18;
    pub const CHANNELS: usize = 19;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverCookedState {
    grid_size: usize,
    body: (usize, usize),
    legs: [Leg; LEGS],
    collected: [bool; INGREDIENTS],
    to_pick: [usize; INGREDIENTS],
    picked: Vec<usize>,
    steps: u32,
    done: bool,
    setting: RewardSetting,
}

impl OverCookedState {
    pub fn body(&self) -> (usize, usize) {
        self.body
    }

    pub fn legs(&self) -> [Leg; LEGS] {
        self.legs
    }

    pub fn collected(&self) -> [bool; INGREDIENTS] {
        self.collected
    }

    pub fn to_pick(&self) -> [usize; INGREDIENTS] {
        self.to_pick
    }

    pub fn picked(&self) -> &[usize] {
        &self.picked
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn setting(&self) -> RewardSetting {
        self.setting
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Cell of ingredient `id`; ingredients sit in the four corners.
    pub fn ingredient_cell(&self, id: usize) -> (usize, usize) {
        ingredient_cell(self.grid_size, id)
    }

    /// Ingredients whose pickup would currently advance the goal.
    pub fn next_targets(&self) -> Vec<usize> {
        let uncollected = (0..INGREDIENTS).filter(|&i| !self.collected[i]);
        match self.setting.ordered_goal(&self.to_pick) {
            None => uncollected.collect(),
            Some(order) => {
                let next = if self.setting.level == 1 {
                    order.first()
                } else {
                    order.get(self.picked.len())
                };
                next.copied().into_iter().collect()
            }
        }
    }

    /// Places the body directly; for scripted tests and probes.
    pub fn with_body(mut self, body: (usize, usize)) -> Result<Self> {
        if body.0 >= self.grid_size || body.1 >= self.grid_size {
            return Err(Error::OutOfRange {
                what: "body cell",
                index: body.0.max(body.1),
                count: self.grid_size,
            });
        }
        self.body = body;
        Ok(self)
    }

    /// Sets leg states directly; for scripted tests and probes.
    pub fn with_legs(mut self, legs: [Leg; LEGS]) -> Self {
        self.legs = legs;
        self
    }
}

fn ingredient_cell(n: usize, id: usize) -> (usize, usize) {
    match id {
        0 => (0, 0),
        1 => (0, n - 1),
        2 => (n - 1, 0),
        _ => (n - 1, n - 1),
    }
}

pub fn decode_action(action: usize) -> Result<(usize, Direction)> {
    if action >= ACTIONS {
        return Err(Error::OutOfRange {
            what: "OverCooked action",
            index: action,
            count: ACTIONS,
        });
    }
    Ok((action / 4, Direction::ALL[action % 4]))
}

pub fn encode_action(leg: usize, direction: Direction) -> usize {
    leg * 4 + direction.index()
}

pub fn overcooked_reset(config: &OverCookedConfig, seed: u64) -> OverCookedState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_pick = [0, 1, 2, 3];
    to_pick.shuffle(&mut rng);
    let c = config.grid_size / 2;
    OverCookedState {
        grid_size: config.grid_size,
        body: (c, c),
        legs: [None; LEGS],
        collected: [false; INGREDIENTS],
        to_pick,
        picked: Vec::new(),
        steps: 0,
        done: false,
        setting: config.reward,
    }
}

/// Advances the state in place by one primitive action.
pub fn overcooked_step(
    config: &OverCookedConfig,
    state: &mut OverCookedState,
    action: usize,
) -> Result<StepOutcome> {
    let (leg, direction) = decode_action(action)?;
    if state.done {
        return Err(Error::EpisodeDone);
    }
    state.steps += 1;
    state.legs[leg] = Some(direction);

    let mut reward = 0.0;
    if state.legs.iter().all(|&l| l == Some(direction)) {
        let (dr, dc) = direction.delta();
        let n = state.grid_size as isize;
        let r = (state.body.0 as isize + dr).clamp(0, n - 1);
        let c = (state.body.1 as isize + dc).clamp(0, n - 1);
        state.body = (r as usize, c as usize);
        state.legs = [None; LEGS];

        let hit = (0..INGREDIENTS)
            .find(|&i| !state.collected[i] && ingredient_cell(state.grid_size, i) == state.body);
        if let Some(id) = hit {
            let qualifies = state.next_targets().contains(&id);
            state.collected[id] = true;
            state.picked.push(id);
            match state.setting.level {
                1 => {
                    state.done = true;
                    if qualifies {
                        reward = 1.0;
                    }
                }
                _ => {
                    if !qualifies {
                        state.done = true;
                    } else if state.picked.len() == INGREDIENTS {
                        state.done = true;
                        reward = 1.0;
                    }
                }
            }
        }
    }
    if state.steps >= config.step_limit {
        state.done = true;
    }
    Ok(StepOutcome {
        reward,
        done: state.done,
    })
}

pub fn overcooked_render(state: &OverCookedState, encoding: Encoding) -> Observation {
    let n = state.grid_size;
    match encoding {
        Encoding::Compact => {
            let mut obs = Observation::zeros([compact::CHANNELS, n, n]);
            let (br, bc) = state.body;
            obs.set(compact::BODY, br, bc, 1.0);
            for (k, leg) in state.legs.iter().enumerate() {
                if let Some(d) = leg {
                    obs.set(compact::LEGS + k * 4 + d.index(), br, bc, 1.0);
                }
            }
            for id in 0..INGREDIENTS {
                if !state.collected[id] {
                    let (r, c) = ingredient_cell(n, id);
                    obs.set(compact::INGREDIENTS, r, c, 1.0);
                }
            }
            for id in state.next_targets() {
                let (r, c) = ingredient_cell(n, id);
                obs.set(compact::TARGET, r, c, 1.0);
            }
            obs
        }
        Encoding::Pixel => {
            let p = PIXELS_PER_CELL;
            let mut obs = Observation::zeros([1, n * p, n * p]);
            let targets = state.next_targets();
            for id in 0..INGREDIENTS {
                if state.collected[id] {
                    continue;
                }
                let (r, c) = ingredient_cell(n, id);
                obs.set(0, r * p + 1, c * p + 1, 0.5);
                if targets.contains(&id) {
                    for (dr, dc) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
                        obs.set(0, r * p + dr, c * p + dc, 0.3);
                    }
                }
            }
            let (br, bc) = state.body;
            obs.set(0, br * p + 1, bc * p + 1, 1.0);
            // a leg is drawn on the cell edge it points to, so every direction
            // looks alike; weights 0.05 * 2^k keep shared edges decodable
            for (k, leg) in state.legs.iter().enumerate() {
                if let Some(d) = leg {
                    let (dr, dc) = d.delta();
                    let r = (br * p + 1) as isize + dr;
                    let c = (bc * p + 1) as isize + dc;
                    let (r, c) = (r as usize, c as usize);
                    obs.set(0, r, c, obs.get(0, r, c) + 0.05 * (1 << k) as f64);
                }
            }
            obs
        }
    }
}
