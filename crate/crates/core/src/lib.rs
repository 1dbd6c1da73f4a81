//! Reward-signal evolution for a deterministic grid Pong environment.
//!
//! The crate answers one question end to end: which instantaneous reward
//! signals make a Q-learning agent achieve a high-level goal — winning,
//! losing, or cooperating — that the reward itself never encodes?
//! A population of candidate signals is trained, scored against each goal at
//! periodic checkpoints, thinned by per-goal elimination of the worst
//! candidate, and refilled with unseen mutations until one signal per goal
//! survives.
//!
//! Module layout:
//! - [`env`] — the seedable grid Pong simulator and observation binning
//! - [`signals`] — reward-signal genomes, reward emission, and mutation
//! - [`learner`] — tabular Q-learning and a compact TD-loss approximator
//! - [`goals`] — the three goal fitness functions over test statistics
//! - [`evolution`] — the elimination/mutation loop and its replay tools
//! - [`formats`] — versioned text formats for curves, reports, histories,
//!   recorded draws, and expectations
//! - [`config`] — the TOML run configuration
//! - [`harness`] — command entry points (evolve / grid / replay / baseline)
//! - [`rng`] — named deterministic seed streams

pub mod config;
pub mod env;
pub mod evolution;
pub mod formats;
pub mod goals;
pub mod harness;
pub mod learner;
pub mod rng;
pub mod signals;
