//! MineCraft-lite: a small voxel world where the agent walks, turns, breaks,
//! builds and jumps.
//!
//! The world starts as a STONE floor under one layer of GRASS. The agent is
//! one block tall and is always pulled down onto the highest solid block
//! below it. The view is an egocentric `K x K` slab of forward rays with two
//! channels: proximity of the first block hit and its kind code, both fading
//! with distance.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Observation, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Air,
    Grass,
    Brick,
    Stone,
}

impl Block {
    pub fn is_solid(self) -> bool {
        self != Block::Air
    }

    fn code(self) -> f64 {
        match self {
            Block::Air => 0.0,
            Block::Grass => 1.0 / 3.0,
            Block::Brick => 2.0 / 3.0,
            Block::Stone => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Forward,
    Backward,
    StrafeLeft,
    StrafeRight,
    TurnLeft,
    TurnRight,
    /// Toggles between level and downward pitch (ten-action layout).
    Tilt,
    LookUp,
    LookDown,
    Break,
    Build,
    Jump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MineCraftConfig {
    pub size_x: usize,
    pub size_z: usize,
    pub height: usize,
    pub episode_length: u32,
    pub view: usize,
    /// 10 merges look-up/look-down into one tilt toggle; 11 keeps them apart.
    pub actions: usize,
}

impl Default for MineCraftConfig {
    fn default() -> Self {
        Self {
            size_x: 12,
            size_z: 12,
            height: 6,
            episode_length: 1000,
            view: 9,
            actions: 10,
        }
    }
}

impl MineCraftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size_x < 3 || self.size_z < 3 {
            return Err(Error::Config("env.size_x and env.size_z must be at least 3".into()));
        }
        if self.height < 4 {
            return Err(Error::Config("env.height must be at least 4".into()));
        }
        if self.view < 3 || self.view.is_multiple_of(2) {
            return Err(Error::Config("env.view must be an odd number >= 3".into()));
        }
        if self.actions != 10 && self.actions != 11 {
            return Err(Error::Config(format!(
                "env.actions must be 10 or 11, got {}",
                self.actions
            )));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("env.episode_length must be positive".into()));
        }
        Ok(())
    }

    pub fn observation_shape(&self) -> [usize; 3] {
        [2, self.view, self.view]
    }

    pub fn decode(&self, action: usize) -> Result<Action> {
        use Action::*;
        let table: &[Action] = if self.actions == 11 {
            &[
                Forward, Backward, StrafeLeft, StrafeRight, TurnLeft, TurnRight, LookUp, LookDown, Break,
                Build, Jump,
            ]
        } else {
            &[
                Forward, Backward, StrafeLeft, StrafeRight, TurnLeft, TurnRight, Tilt, Break, Build, Jump,
            ]
        };
        table.get(action).copied().ok_or(Error::OutOfRange {
            what: "MineCraft action",
            index: action,
            count: table.len(),
        })
    }

    pub fn encode(&self, action: Action) -> Option<usize> {
        (0..self.actions).find(|&a| self.decode(a).ok() == Some(action))
    }
}

/// Horizontal heading; `yaw` counts clockwise quarter turns from +z.
fn heading(yaw: u8) -> (isize, isize) {
    match yaw % 4 {
        0 => (0, 1),
        1 => (1, 0),
        2 => (0, -1),
        _ => (-1, 0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelWorld {
    config: MineCraftConfig,
    blocks: Vec<Block>,
    /// Cells holding a block when the episode began.
    original: Vec<bool>,
    agent: (usize, usize, usize),
    yaw: u8,
    pitch_down: bool,
    steps: u32,
    broken_original: BTreeSet<usize>,
    built: BTreeSet<usize>,
    done: bool,
}

impl VoxelWorld {
    pub fn new(config: MineCraftConfig) -> Self {
        let n = config.size_x * config.size_z * config.height;
        let mut world = Self {
            config,
            blocks: vec![Block::Air; n],
            original: vec![false; n],
            agent: (0, 0, 0),
            yaw: 0,
            pitch_down: false,
            steps: 0,
            broken_original: BTreeSet::new(),
            built: BTreeSet::new(),
            done: false,
        };
        world.reset();
        world
    }

    pub fn reset(&mut self) {
        let c = &self.config;
        for x in 0..c.size_x {
            for z in 0..c.size_z {
                for y in 0..c.height {
                    let block = match y {
                        0 => Block::Stone,
                        1 => Block::Grass,
                        _ => Block::Air,
                    };
                    let i = self.index(x, y, z);
                    self.blocks[i] = block;
                    self.original[i] = block.is_solid();
                }
            }
        }
        self.agent = (self.config.size_x / 2, 2, self.config.size_z / 2);
        self.yaw = 0;
        self.pitch_down = false;
        self.steps = 0;
        self.broken_original.clear();
        self.built.clear();
        self.done = false;
    }

    pub fn config(&self) -> &MineCraftConfig {
        &self.config
    }

    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (y * self.config.size_z + z) * self.config.size_x + x
    }

    fn cell(&self, x: isize, y: isize, z: isize) -> Option<usize> {
        let c = &self.config;
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= c.size_x || y >= c.height || z >= c.size_z {
            return None;
        }
        Some(self.index(x, y, z))
    }

    pub fn block(&self, x: usize, y: usize, z: usize) -> Block {
        self.blocks[self.index(x, y, z)]
    }

    pub fn agent(&self) -> (usize, usize, usize) {
        self.agent
    }

    pub fn yaw(&self) -> u8 {
        self.yaw
    }

    pub fn pitch_down(&self) -> bool {
        self.pitch_down
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn built_count(&self) -> usize {
        self.built.len()
    }

    pub fn broken_original_count(&self) -> usize {
        self.broken_original.len()
    }

    /// Places the agent and view directly; for scripted tests.
    pub fn set_pose(&mut self, agent: (usize, usize, usize), yaw: u8, pitch_down: bool) -> Result<()> {
        let Some(i) = self.cell(agent.0 as isize, agent.1 as isize, agent.2 as isize) else {
            return Err(Error::Invalid(format!("agent position {agent:?} outside the world")));
        };
        if self.blocks[i].is_solid() {
            return Err(Error::Invalid(format!("agent position {agent:?} is solid")));
        }
        self.agent = agent;
        self.yaw = yaw % 4;
        self.pitch_down = pitch_down;
        Ok(())
    }

    /// Cell the agent is looking at: straight ahead, or one below when pitched down.
    pub fn faced_cell(&self) -> Option<(usize, usize, usize)> {
        let (dx, dz) = heading(self.yaw);
        let (x, y, z) = self.agent;
        let ty = y as isize - isize::from(self.pitch_down);
        self.cell(x as isize + dx, ty, z as isize + dz)?;
        Some(((x as isize + dx) as usize, ty as usize, (z as isize + dz) as usize))
    }

    fn solid_at(&self, x: isize, y: isize, z: isize) -> bool {
        self.cell(x, y, z).is_some_and(|i| self.blocks[i].is_solid())
    }

    fn settle(&mut self) {
        let (x, mut y, z) = self.agent;
        while y > 0 && !self.solid_at(x as isize, y as isize - 1, z as isize) {
            y -= 1;
        }
        self.agent.1 = y;
    }

    fn try_move(&mut self, dx: isize, dz: isize) {
        let (x, y, z) = self.agent;
        let (nx, nz) = (x as isize + dx, z as isize + dz);
        if self.cell(nx, y as isize, nz).is_none() || self.solid_at(nx, y as isize, nz) {
            return;
        }
        self.agent = (nx as usize, y, nz as usize);
        self.settle();
    }

    fn jump(&mut self) {
        let (dx, dz) = heading(self.yaw);
        let (x, y, z) = self.agent;
        let (y, nx, nz) = (y as isize, x as isize + dx, z as isize + dz);
        let step_up = self.solid_at(nx, y, nz)
            && self.cell(nx, y + 1, nz).is_some()
            && !self.solid_at(nx, y + 1, nz)
            && self.cell(x as isize, y + 1, z as isize).is_some()
            && !self.solid_at(x as isize, y + 1, z as isize);
        if step_up {
            self.agent = (nx as usize, (y + 1) as usize, nz as usize);
        }
    }

    fn break_block(&mut self) {
        let Some((x, y, z)) = self.faced_cell() else { return };
        let i = self.index(x, y, z);
        match self.blocks[i] {
            Block::Air | Block::Stone => {}
            Block::Grass | Block::Brick => {
                self.blocks[i] = Block::Air;
                if !self.built.remove(&i) && self.original[i] {
                    self.broken_original.insert(i);
                }
            }
        }
    }

    fn build_block(&mut self) {
        let Some((x, y, z)) = self.faced_cell() else { return };
        let i = self.index(x, y, z);
        if self.blocks[i] == Block::Air {
            self.blocks[i] = Block::Brick;
            self.built.insert(i);
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let action = self.config.decode(action)?;
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let (fx, fz) = heading(self.yaw);
        let (rx, rz) = heading(self.yaw + 1);
        match action {
            Action::Forward => self.try_move(fx, fz),
            Action::Backward => self.try_move(-fx, -fz),
            Action::StrafeLeft => self.try_move(-rx, -rz),
            Action::StrafeRight => self.try_move(rx, rz),
            Action::TurnLeft => self.yaw = (self.yaw + 3) % 4,
            Action::TurnRight => self.yaw = (self.yaw + 1) % 4,
            Action::Tilt => self.pitch_down = !self.pitch_down,
            Action::LookUp => self.pitch_down = false,
            Action::LookDown => self.pitch_down = true,
            Action::Break => self.break_block(),
            Action::Build => self.build_block(),
            Action::Jump => self.jump(),
        }
        self.steps += 1;
        if self.steps >= self.config.episode_length {
            self.done = true;
        }
        Ok(StepOutcome {
            reward: 0.0,
            done: self.done,
        })
    }

    pub fn render(&self) -> Observation {
        let k = self.config.view;
        let half = (k / 2) as isize;
        let max_depth = (k - 1) as isize;
        let mut obs = Observation::zeros([2, k, k]);
        let (fx, fz) = heading(self.yaw);
        let (rx, rz) = heading(self.yaw + 1);
        let (ax, ay, az) = (self.agent.0 as isize, self.agent.1 as isize, self.agent.2 as isize);
        let pitch_shift = if self.pitch_down { half / 2 + 1 } else { 0 };
        for row in 0..k {
            let y = ay + half - row as isize - pitch_shift;
            for col in 0..k {
                let lateral = col as isize - half;
                for d in 1..=max_depth {
                    let x = ax + fx * d + rx * lateral;
                    let z = az + fz * d + rz * lateral;
                    let outside = x < 0
                        || z < 0
                        || y < 0
                        || x >= self.config.size_x as isize
                        || z >= self.config.size_z as isize;
                    let kind = if outside {
                        // world boundary and bedrock read as stone
                        Block::Stone
                    } else if y >= self.config.height as isize {
                        break;
                    } else {
                        self.blocks[self.index(x as usize, y as usize, z as usize)]
                    };
                    if kind.is_solid() {
                        let proximity = 1.0 - (d - 1) as f64 / max_depth as f64;
                        obs.set(0, row, col, proximity);
                        obs.set(1, row, col, kind.code() * proximity);
                        break;
                    }
                }
            }
        }
        obs
    }

    /// Original blocks broken plus built blocks still standing.
    pub fn valid_operations(&self) -> usize {
        self.broken_original.len() + self.built.len()
    }
}

pub fn valid_operations(world: &VoxelWorld) -> usize {
    world.valid_operations()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> VoxelWorld {
        VoxelWorld::new(MineCraftConfig::default())
    }

    fn act(w: &mut VoxelWorld, a: Action) {
        let idx = w.config().encode(a).unwrap();
        w.step(idx).unwrap();
    }

    #[test]
    fn fresh_world_has_grass_over_stone() {
        let w = world();
        assert_eq!(w.block(0, 0, 0), Block::Stone);
        assert_eq!(w.block(5, 1, 5), Block::Grass);
        assert_eq!(w.block(5, 2, 5), Block::Air);
        assert_eq!(w.agent(), (6, 2, 6));
        assert_eq!(w.valid_operations(), 0);
    }

    #[test]
    fn break_grass_counts_once() {
        let mut w = world();
        act(&mut w, Action::Tilt);
        act(&mut w, Action::Break);
        assert_eq!(w.block(6, 1, 7), Block::Air);
        assert_eq!(w.broken_original_count(), 1);
        // stepping into the hole drops the agent; looking down now faces stone
        act(&mut w, Action::Forward);
        assert_eq!(w.agent(), (6, 1, 7));
        act(&mut w, Action::Break);
        assert_eq!(w.block(6, 0, 8), Block::Stone);
        assert_eq!(w.broken_original_count(), 1);
        act(&mut w, Action::Tilt);
        act(&mut w, Action::Break);
        assert_eq!(w.block(6, 1, 8), Block::Air);
        assert_eq!(w.broken_original_count(), 2);
    }

    #[test]
    fn build_into_occupied_cell_is_noop() {
        let mut w = world();
        act(&mut w, Action::Tilt);
        act(&mut w, Action::Build);
        assert_eq!(w.built_count(), 0);
        assert_eq!(w.block(6, 1, 7), Block::Grass);
    }

    #[test]
    fn build_then_break_restores_built_count() {
        let mut w = world();
        act(&mut w, Action::Build);
        assert_eq!(w.block(6, 2, 7), Block::Brick);
        assert_eq!(w.built_count(), 1);
        act(&mut w, Action::Break);
        assert_eq!(w.built_count(), 0);
        assert_eq!(w.broken_original_count(), 0);
    }

    #[test]
    fn movement_blocked_by_solid_and_jump_climbs() {
        let mut w = world();
        act(&mut w, Action::Build);
        act(&mut w, Action::Forward);
        assert_eq!(w.agent(), (6, 2, 6));
        act(&mut w, Action::Jump);
        assert_eq!(w.agent(), (6, 3, 7));
        act(&mut w, Action::Forward);
        assert_eq!(w.agent(), (6, 2, 8));
    }

    #[test]
    fn mixed_script_counts_valid_operations() {
        let mut w = world();
        // three grass breaks in three different columns
        act(&mut w, Action::Tilt);
        for _ in 0..3 {
            act(&mut w, Action::Break);
            act(&mut w, Action::TurnRight);
        }
        assert_eq!(w.broken_original_count(), 3);
        act(&mut w, Action::Tilt);
        act(&mut w, Action::Build);
        act(&mut w, Action::TurnRight);
        act(&mut w, Action::Build);
        act(&mut w, Action::Break);
        assert_eq!(w.valid_operations(), 4);
    }

    #[test]
    fn episode_ends_after_configured_length() {
        let mut w = VoxelWorld::new(MineCraftConfig {
            episode_length: 5,
            ..MineCraftConfig::default()
        });
        for i in 0..5 {
            let out = w.step(4).unwrap();
            assert_eq!(out.done, i == 4);
            assert_eq!(out.reward, 0.0);
        }
        assert!(matches!(w.step(4), Err(Error::EpisodeDone)));
        let mut w = world();
        assert!(w.step(10).is_err());
    }

    #[test]
    fn render_depends_on_yaw_and_stays_in_unit_range() {
        let mut w = world();
        let a = w.render();
        act(&mut w, Action::TurnRight);
        act(&mut w, Action::TurnRight);
        let b = w.render();
        assert_ne!(a, b);
        for obs in [&a, &b] {
            assert!(obs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(obs.shape(), [2, 9, 9]);
        }
    }

    #[test]
    fn block_in_front_changes_center_column() {
        let mut w = world();
        let before = w.render();
        act(&mut w, Action::Build);
        let after = w.render();
        let k = 9;
        let mut changed_cols = BTreeSet::new();
        for c in 0..2 {
            for r in 0..k {
                for col in 0..k {
                    if before.get(c, r, col) != after.get(c, r, col) {
                        changed_cols.insert(col);
                    }
                }
            }
        }
        assert_eq!(changed_cols.into_iter().collect::<Vec<_>>(), vec![4]);
        assert_eq!(after.get(0, 4, 4), 1.0);
    }
}
