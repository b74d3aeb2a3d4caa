//! Run configuration: what to train, on which environment, for how long and
//! with which seeds. Parsed from TOML; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyConfig;

/// Environment variable naming the directory under which runs are created.
pub const OUTPUT_ROOT_VAR: &str = "DEHRL_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name of the run directory under the output root.
    pub name: String,
    pub env: EnvConfig,
    /// Primitive environment steps per seed, summed over actors.
    pub budget: u64,
    pub seeds: Vec<u64>,
    /// Steps between checkpoints; a final checkpoint is always written.
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    /// Steps between re-initializations of the top level (0 disables).
    #[serde(default)]
    pub meta_reset_interval: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<HierarchyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
    /// Explicit run directory; overrides the output root and name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_checkpoint_interval() -> u64 {
    100_000
}

fn scoped(section: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("[{section}] {msg}")),
        other => other,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(format!("cannot serialize run config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return Err(Error::Config(format!(
                "name must be a non-empty directory name, got {:?}",
                self.name
            )));
        }
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        self.env.validate().map_err(|e| scoped("env", e))?;
        match (&self.hierarchy, &self.baseline) {
            (Some(h), None) => h.validate(self.env.action_count()).map_err(|e| scoped("hierarchy", e))?,
            (None, Some(b)) => {
                b.validate().map_err(|e| scoped("baseline", e))?;
                if self.meta_reset_interval > 0 {
                    return Err(Error::Config(
                        "meta_reset_interval applies to hierarchies only; set it to 0 for a baseline".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::Config(
                    "exactly one of [hierarchy] and [baseline] must be present".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn actors(&self) -> usize {
        match (&self.hierarchy, &self.baseline) {
            (Some(h), _) => h.ppo.actors,
            (None, Some(b)) => b.ppo.actors,
            (None, None) => 0,
        }
    }

    /// `output` if set, else `<root>/<name>` with the root taken from
    /// [`OUTPUT_ROOT_VAR`].
    pub fn run_dir(&self) -> PathBuf {
        match &self.output {
            Some(dir) => dir.clone(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_VAR)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
                root.join(&self.name)
            }
        }
    }
}

/// Shipped configurations, by name.
pub mod presets {
    use super::RunConfig;
    use crate::error::{Error, Result};

    pub const ALL: &[(&str, &str)] = &[
        ("overcooked-1-any", include_str!("../presets/overcooked-1-any.toml")),
        ("overcooked-1-fix", include_str!("../presets/overcooked-1-fix.toml")),
        ("overcooked-1-random", include_str!("../presets/overcooked-1-random.toml")),
        ("overcooked-2-any", include_str!("../presets/overcooked-2-any.toml")),
        ("overcooked-2-fix", include_str!("../presets/overcooked-2-fix.toml")),
        ("overcooked-2-random", include_str!("../presets/overcooked-2-random.toml")),
        ("overcooked-discovery", include_str!("../presets/overcooked-discovery.toml")),
        ("overcooked-ppo-1-any", include_str!("../presets/overcooked-ppo-1-any.toml")),
        ("minecraft", include_str!("../presets/minecraft.toml")),
    ];

    pub fn text(name: &str) -> Result<&'static str> {
        ALL.iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = ALL.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown preset {name:?}; known: {}", names.join(", ")))
            })
    }

    pub fn load(name: &str) -> Result<RunConfig> {
        RunConfig::parse(text(name)?)
    }
}
