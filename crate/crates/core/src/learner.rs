//! The learning algorithm driven by a reward signal.
//!
//! Default backend: tabular Q-learning over discretized observations with an
//! ε-greedy behavior policy and a linearly annealed ε. The one-step update is
//!
//! ```text
//! Q(s,a) ← Q(s,a) + α · (r + γ·max_a' Q(s',a') − Q(s,a))
//! ```
//!
//! An alternative compact function-approximator backend (see [`approx`])
//! trains a small network on the squared TD error with an experience-replay
//! buffer and a periodically synchronized target copy.
//!
//! Training interleaves action selection, the simulator step, reward
//! emission, and the value update in a single loop, so a learner together
//! with its environment forms one self-contained, fully seeded unit.

pub mod approx;

use crate::env::{features, observe, AgentAction, Env, EnvConfig, EnvState, ObsScheme, PointEvent};
use crate::signals::RewardSignal;
use approx::{td_loss, Mlp, ReplayBuffer};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which value-function representation a learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tabular,
    Approximator,
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Step size of the tabular update, in [0, 1]. Anneals linearly down to
    /// `alpha_end` over the first `alpha_decay_steps` training steps, so a
    /// converged policy stops churning under long training runs.
    pub alpha: f64,
    pub alpha_end: f64,
    pub alpha_decay_steps: u64,
    /// Discount factor, in [0, 1).
    pub gamma: f64,
    /// Exploration schedule: linear from `epsilon_start` down to
    /// `epsilon_end` over the first `epsilon_decay_steps` training steps.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    /// Exploration used by evaluation runs. Strictly greedy evaluation can
    /// trap a tabular policy in an unvisited-state loop; a small ε keeps
    /// evaluation moving without meaningfully changing the measured policy.
    pub eval_epsilon: f64,
    pub backend: Backend,
    /// Hidden-layer widths of the approximator (input and the 3-way output
    /// are fixed by the environment).
    pub approximator_widths: Vec<usize>,
    /// SGD step size of the approximator backend.
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Training steps between target-network synchronizations.
    pub target_sync_period: u64,
    /// Training steps between gradient updates (transitions are still
    /// recorded every step).
    pub train_period: u64,
    /// Base RNG seed; runs derive per-learner seeds from their master seed.
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            alpha: 0.2,
            alpha_end: 0.05,
            alpha_decay_steps: 300_000,
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            eval_epsilon: 0.02,
            backend: Backend::Tabular,
            approximator_widths: vec![16],
            learning_rate: 0.01,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync_period: 500,
            train_period: 4,
            seed: 0,
        }
    }
}

/// Configuration rejection reasons for [`LearnerConfig::validate`].
#[derive(Debug, thiserror::Error)]
pub enum LearnerConfigError {
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("gamma must lie in [0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("epsilon schedule must satisfy 0 ≤ end ≤ start ≤ 1, got start {start}, end {end}")]
    EpsilonOrder { start: f64, end: f64 },
    #[error("eval_epsilon must lie in [0, 1], got {0}")]
    EvalEpsilonOutOfRange(f64),
    #[error("batch_size ({batch}) must not exceed replay_capacity ({capacity})")]
    BatchExceedsCapacity { batch: usize, capacity: usize },
    #[error("approximator needs at least one hidden layer width")]
    NoHiddenLayers,
    #[error("learning_rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
}

impl LearnerConfig {
    /// Check the hyperparameter invariants.
    pub fn validate(&self) -> Result<(), LearnerConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LearnerConfigError::AlphaOutOfRange(self.alpha));
        }
        if !(0.0..=self.alpha).contains(&self.alpha_end) {
            return Err(LearnerConfigError::AlphaOutOfRange(self.alpha_end));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(LearnerConfigError::GammaOutOfRange(self.gamma));
        }
        if !(0.0 <= self.epsilon_end
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err(LearnerConfigError::EpsilonOrder {
                start: self.epsilon_start,
                end: self.epsilon_end,
            });
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(LearnerConfigError::EvalEpsilonOutOfRange(self.eval_epsilon));
        }
        if self.backend == Backend::Approximator {
            if self.batch_size > self.replay_capacity {
                return Err(LearnerConfigError::BatchExceedsCapacity {
                    batch: self.batch_size,
                    capacity: self.replay_capacity,
                });
            }
            if self.approximator_widths.is_empty() {
                return Err(LearnerConfigError::NoHiddenLayers);
            }
            if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
                return Err(LearnerConfigError::BadLearningRate(self.learning_rate));
            }
        }
        Ok(())
    }

    /// Exploration probability after `steps` training steps.
    pub fn epsilon_at(&self, steps: u64) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        let frac = (steps as f64 / self.epsilon_decay_steps as f64).min(1.0);
        self.epsilon_start - (self.epsilon_start - self.epsilon_end) * frac
    }

    /// Tabular step size after `steps` training steps.
    pub fn alpha_at(&self, steps: u64) -> f64 {
        if self.alpha_decay_steps == 0 {
            return self.alpha_end;
        }
        let frac = (steps as f64 / self.alpha_decay_steps as f64).min(1.0);
        self.alpha - (self.alpha - self.alpha_end) * frac
    }
}

/// Action-value table over observation keys. Missing keys read as all-zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable(BTreeMap<u64, [f64; 3]>);

impl QTable {
    pub fn new() -> QTable {
        QTable::default()
    }

    /// Values for all three actions at `key` (zeros when never visited).
    pub fn get(&self, key: u64) -> [f64; 3] {
        self.0.get(&key).copied().unwrap_or([0.0; 3])
    }

    pub fn set(&mut self, key: u64, values: [f64; 3]) {
        self.0.insert(key, values);
    }

    /// Stored entries in ascending key order.
    pub fn entries(&self) -> impl Iterator<Item = (u64, [f64; 3])> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every stored value is exactly zero (or nothing is stored).
    pub fn is_identically_zero(&self) -> bool {
        self.0.values().all(|v| v.iter().all(|&q| q == 0.0))
    }
}

/// One recorded step for value updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<O> {
    pub obs_before: O,
    pub action: AgentAction,
    pub reward: f64,
    pub obs_after: O,
    pub step_index: u64,
}

/// Apply the one-step Q-learning update for a single transition. Only the
/// `(obs_before, action)` entry changes.
pub fn q_update(table: &mut QTable, t: &Transition<u64>, alpha: f64, gamma: f64) {
    let mut values = table.get(t.obs_before);
    let next_max = table.get(t.obs_after).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let q = values[t.action.index()];
    values[t.action.index()] = q + alpha * (t.reward + gamma * next_max - q);
    table.set(t.obs_before, values);
}

/// ε-greedy draw over one state's action values: with probability `epsilon`
/// a uniform action, otherwise an argmax with uniform tie-breaking.
pub fn choose_action(q: [f64; 3], epsilon: f64, rng: &mut ChaCha8Rng) -> AgentAction {
    if rng.random::<f64>() < epsilon {
        return AgentAction::from_index(rng.random_range(0..3));
    }
    let best = q.into_iter().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..3).filter(|&i| q[i] == best).collect();
    AgentAction::from_index(tied[rng.random_range(0..tied.len())])
}

/// Counters accumulated over a training call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLog {
    pub steps: u64,
    pub reward_sum: f64,
    pub won: u64,
    pub lost: u64,
}

/// Statistics of an evaluation window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryStats {
    /// Window length in steps.
    pub steps: u64,
    /// Points scored by the agent.
    pub won: u64,
    /// Points conceded by the agent.
    pub lost: u64,
    /// Steps elapsed up to and including each point event, rally by rally.
    pub intervals: Vec<u64>,
    /// Steps of the unfinished rally at the window end.
    pub residual: u64,
}

enum BackendState {
    Tabular(QTable),
    Approximator {
        online: Mlp,
        target: Mlp,
        replay: ReplayBuffer,
    },
}

/// A reward-driven learner: value state, exploration schedule, and the
/// training/evaluation drivers.
pub struct Learner {
    cfg: LearnerConfig,
    env_cfg: EnvConfig,
    scheme: ObsScheme,
    state: BackendState,
    steps_trained: u64,
    rng: ChaCha8Rng,
}

impl Learner {
    /// Build a learner with zero-initialized table (tabular) or small random
    /// weights (approximator).
    pub fn new(
        cfg: &LearnerConfig,
        env_cfg: &EnvConfig,
        scheme: &ObsScheme,
        seed: u64,
    ) -> Result<Learner, LearnerConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = match cfg.backend {
            Backend::Tabular => BackendState::Tabular(QTable::new()),
            Backend::Approximator => {
                let mut widths = vec![features(env_cfg, &dummy_state()).len()];
                widths.extend_from_slice(&cfg.approximator_widths);
                widths.push(3);
                let online = Mlp::new(&widths, &mut rng);
                let target = online.clone();
                BackendState::Approximator {
                    online,
                    target,
                    replay: ReplayBuffer::new(cfg.replay_capacity),
                }
            }
        };
        Ok(Learner {
            cfg: cfg.clone(),
            env_cfg: env_cfg.clone(),
            scheme: scheme.clone(),
            state,
            steps_trained: 0,
            rng,
        })
    }

    /// Total training steps accumulated so far.
    pub fn steps_trained(&self) -> u64 {
        self.steps_trained
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    /// The Q-table when the backend is tabular.
    pub fn table(&self) -> Option<&QTable> {
        match &self.state {
            BackendState::Tabular(t) => Some(t),
            BackendState::Approximator { .. } => None,
        }
    }

    /// Action values for a state under the current value function.
    pub fn q_values(&self, state: &EnvState) -> [f64; 3] {
        match &self.state {
            BackendState::Tabular(t) => t.get(observe(&self.env_cfg, &self.scheme, state)),
            BackendState::Approximator { online, .. } => {
                let out = online.forward(&features(&self.env_cfg, state));
                [out[0], out[1], out[2]]
            }
        }
    }

    /// Behavior-policy action under the training ε schedule.
    pub fn select_action(&mut self, state: &EnvState) -> AgentAction {
        let eps = self.cfg.epsilon_at(self.steps_trained);
        choose_action(self.q_values(state), eps, &mut self.rng)
    }

    /// Run `n_steps` of ε-greedy training in `env` with rewards from
    /// `signal`. Deterministic given the learner seed, the environment seed,
    /// and the call sequence.
    pub fn train_steps(&mut self, env: &mut Env, signal: &RewardSignal, n_steps: u64) -> StepLog {
        let mut log = StepLog::default();
        for _ in 0..n_steps {
            let before = *env.state();
            let action = self.select_action(&before);
            let after = *env.step(action);
            let reward = signal.emit_reward(&self.env_cfg, &before, &after);
            log.steps += 1;
            log.reward_sum += reward;
            match after.last_event {
                PointEvent::AgentScored => log.won += 1,
                PointEvent::AgentConceded => log.lost += 1,
                PointEvent::None => {}
            }
            match &mut self.state {
                BackendState::Tabular(table) => {
                    let t = Transition {
                        obs_before: observe(&self.env_cfg, &self.scheme, &before),
                        action,
                        reward,
                        obs_after: observe(&self.env_cfg, &self.scheme, &after),
                        step_index: self.steps_trained,
                    };
                    q_update(table, &t, self.cfg.alpha_at(self.steps_trained), self.cfg.gamma);
                }
                BackendState::Approximator { online, target, replay } => {
                    replay.push(Transition {
                        obs_before: features(&self.env_cfg, &before),
                        action,
                        reward,
                        obs_after: features(&self.env_cfg, &after),
                        step_index: self.steps_trained,
                    });
                    let due = self.steps_trained % self.cfg.train_period == 0;
                    if due && replay.len() >= self.cfg.batch_size {
                        let batch = replay.sample(self.cfg.batch_size, &mut self.rng);
                        let (_, grad) = td_loss(online, target, &batch, self.cfg.gamma)
                            .expect("TD loss diverged; lower the learning rate");
                        online.apply_gradient(&grad, self.cfg.learning_rate);
                    }
                    if self.steps_trained % self.cfg.target_sync_period == 0 {
                        *target = online.clone();
                    }
                }
            }
            self.steps_trained += 1;
        }
        log
    }

    /// Evaluate the current policy for `n_steps` without learning: near-
    /// greedy actions (`eval_epsilon`), external randomness, learner state
    /// untouched.
    pub fn test_run(&self, env: &mut Env, n_steps: u64, rng: &mut ChaCha8Rng) -> TrajectoryStats {
        let mut stats = TrajectoryStats { steps: n_steps, ..Default::default() };
        let mut rally: u64 = 0;
        for _ in 0..n_steps {
            let action = choose_action(self.q_values(env.state()), self.cfg.eval_epsilon, rng);
            let after = env.step(action);
            rally += 1;
            match after.last_event {
                PointEvent::AgentScored => {
                    stats.won += 1;
                    stats.intervals.push(rally);
                    rally = 0;
                }
                PointEvent::AgentConceded => {
                    stats.lost += 1;
                    stats.intervals.push(rally);
                    rally = 0;
                }
                PointEvent::None => {}
            }
        }
        stats.residual = rally;
        stats
    }
}

fn dummy_state() -> EnvState {
    EnvState {
        ball_x: 0,
        ball_y: 0,
        ball_vx: 1,
        ball_vy: 0,
        left_paddle_y: 0,
        right_paddle_y: 0,
        step_count: 0,
        last_event: PointEvent::None,
    }
}
