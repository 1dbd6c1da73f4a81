//! The sectioned TOML run configuration shared by all commands.
//!
//! One file drives a whole experiment: `[env]`, `[learner]`, and
//! `[evolution]` mirror the corresponding config structs, `[signals]` names
//! the signal sets the grid and baseline commands train, and `[output]`
//! says where files go. Every key has a default, so an empty file is a
//! valid desk-scale configuration; the bundled `configs/desk.toml` spells
//! all of them out.
//!
//! Validation failures name the section and key they come from, either via
//! the TOML parser's own key paths or the section-prefixed semantic errors
//! here.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvConfigError};
use crate::evolution::{EvoConfig, EvoConfigError};
use crate::learner::{LearnerConfig, LearnerConfigError};
use crate::signals::RewardSignal;

/// The config format version this build reads.
pub const CONFIG_VERSION: u32 = 1;

/// Which command a config file is meant for, when it cares to say.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Evolve,
    Grid,
    Baseline,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Evolve => "evolve",
            RunMode::Grid => "grid",
            RunMode::Baseline => "baseline",
        })
    }
}

/// The signal sets trained by the exhaustive-grid and baseline commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsConfig {
    /// Signals the grid command trains from step 0 with no elimination.
    pub grid: Vec<String>,
    /// Signals the baseline command trains and tests.
    pub baseline: Vec<String>,
}

impl Default for SignalsConfig {
    fn default() -> SignalsConfig {
        SignalsConfig {
            grid: ["000", "001", "010", "011", "100", "101", "110", "111", "b100", "b010",
                "b001", "rand"]
                .map(String::from)
                .into(),
            baseline: ["b100", "b010", "b001", "rand"].map(String::from).into(),
        }
    }
}

/// Where commands write their files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, created if missing.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> OutputConfig {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// The full run configuration. The master seed lives in
/// `[evolution] master_seed` and seeds every derived stream of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Config format version; must be [`CONFIG_VERSION`].
    pub version: Version,
    /// Optional declared purpose; when set, only that command accepts the
    /// file.
    pub mode: Option<RunMode>,
    /// Worker threads for independent train/test units; 0 means all
    /// available cores.
    pub parallelism: usize,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub evolution: EvoConfig,
    pub signals: SignalsConfig,
    pub output: OutputConfig,
}

/// Newtype so an omitted `version` key defaults to the current version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Version(pub u32);

impl Default for Version {
    fn default() -> Version {
        Version(CONFIG_VERSION)
    }
}

/// Anything wrong with a run configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// TOML syntax or type errors; the message carries the offending key
    /// path and line.
    #[error("{0}")]
    Syntax(String),
    #[error("config version {0} is unsupported (this build reads version {CONFIG_VERSION})")]
    Version(u32),
    #[error("[env] {0}")]
    Env(#[from] EnvConfigError),
    #[error("[learner] {0}")]
    Learner(#[from] LearnerConfigError),
    #[error("[evolution] {0}")]
    Evolution(#[from] EvoConfigError),
    #[error("[signals] {list}: unknown signal id `{id}`")]
    UnknownSignal { list: &'static str, id: String },
    #[error("config declares mode `{declared}` but this command is `{required}`")]
    ModeMismatch { declared: RunMode, required: RunMode },
}

impl RunConfig {
    /// Parse and validate a TOML run configuration.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Semantic validation of every section.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version.0 != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version.0));
        }
        self.env.validate()?;
        self.learner.validate()?;
        self.evolution.validate()?;
        for (list, ids) in
            [("grid", &self.signals.grid), ("baseline", &self.signals.baseline)]
        {
            for id in ids {
                if RewardSignal::from_id(id).is_none() {
                    return Err(ConfigError::UnknownSignal { list, id: id.clone() });
                }
            }
        }
        Ok(())
    }

    /// Enforce a declared mode, if the file declares one.
    pub fn require_mode(&self, required: RunMode) -> Result<(), ConfigError> {
        match self.mode {
            Some(declared) if declared != required => {
                Err(ConfigError::ModeMismatch { declared, required })
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_scale_default() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.version.0, CONFIG_VERSION);
        assert_eq!(cfg.mode, None);
        assert_eq!(cfg.parallelism, 0);
        assert_eq!(cfg.evolution.burn_in, 50_000);
        assert_eq!(cfg.signals.grid.len(), 12);
        assert_eq!(cfg.signals.baseline.len(), 4);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn sections_override_their_struct_fields() {
        let cfg = RunConfig::parse(
            "mode = \"grid\"\nparallelism = 2\n\n[env]\nfield_width = 48\n\n[learner]\n\
             gamma = 0.9\n\n[evolution]\nburn_in = 1000\ntest_len = 500\nmaster_seed = 42\n\n\
             [output]\ndir = \"results\"\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Some(RunMode::Grid));
        assert_eq!(cfg.parallelism, 2);
        assert_eq!(cfg.env.field_width, 48);
        assert_eq!(cfg.learner.gamma, 0.9);
        assert_eq!(cfg.evolution.master_seed, 42);
        assert_eq!(cfg.output.dir, PathBuf::from("results"));
    }

    #[test]
    fn syntax_errors_carry_the_key_path() {
        let err = RunConfig::parse("[env]\nfield_width = \"wide\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("field_width"), "message was: {msg}");
        // Unknown keys are rejected, naming the key.
        let err = RunConfig::parse("[env]\nfield_depth = 3\n").unwrap_err();
        assert!(err.to_string().contains("field_depth"));
    }

    #[test]
    fn semantic_errors_name_their_section() {
        let err = RunConfig::parse("[learner]\ngamma = 1.5\n").unwrap_err();
        assert!(err.to_string().starts_with("[learner]"), "got: {err}");
        let err = RunConfig::parse("[evolution]\nburn_in = 10\ntest_len = 20\n").unwrap_err();
        assert!(err.to_string().starts_with("[evolution]"), "got: {err}");
        let err = RunConfig::parse("[env]\nball_speed = 0\n").unwrap_err();
        assert!(err.to_string().starts_with("[env]"), "got: {err}");
        let err = RunConfig::parse("[signals]\ngrid = [\"999\"]\n").unwrap_err();
        assert!(err.to_string().contains("[signals] grid"), "got: {err}");
        assert!(err.to_string().contains("999"));
    }

    #[test]
    fn version_and_mode_gates() {
        assert!(matches!(
            RunConfig::parse("version = 2\n").unwrap_err(),
            ConfigError::Version(2)
        ));
        let cfg = RunConfig::parse("mode = \"evolve\"\n").unwrap();
        assert!(cfg.require_mode(RunMode::Evolve).is_ok());
        let err = cfg.require_mode(RunMode::Grid).unwrap_err();
        assert!(err.to_string().contains("`evolve`"));
        assert!(err.to_string().contains("`grid`"));
        // A file with no declared mode serves any command.
        let open = RunConfig::parse("").unwrap();
        assert!(open.require_mode(RunMode::Baseline).is_ok());
    }
}
