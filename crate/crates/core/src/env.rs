//! Deterministic grid Pong with a scripted opponent.
//!
//! The field is a `field_width × field_height` cell grid. The learning agent
//! drives the right paddle; the left paddle is a built-in ball tracker with a
//! reaction lag and a speed cap, which makes it beatable by sharp shots but
//! solid against straight ones. Physics uses integer cells and a unit
//! timestep, so trajectories replay exactly: same config, seed, and action
//! sequence — same states, bit for bit.
//!
//! Horizontal motion runs in unit substeps (`ball_speed` per step) so the
//! ball can never tunnel through a paddle column. Vertical motion applies
//! `ball_vy` once per substep; a deflected ball therefore out-paces the
//! opponent's 1-cell-per-step tracking, which is what makes aimed shots
//! score. A ball that gets past a paddle dwells in the goal mouth (the strip
//! behind the beaten paddle) for `serve_delay` steps; then the point event
//! fires and the next ball serves from the field center in the same step —
//! play is one continuous stream of steps, not episodes. The dwell is what
//! gives every point a real cost or payoff in region-occupancy terms: after
//! a concede the ball sits behind the agent's paddle, after a score behind
//! the opponent's.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Distance of each paddle column from its boundary. Columns `0..INSET` on
/// the left (and the mirror on the right) lie strictly behind the paddle.
pub const PADDLE_INSET: i32 = 2;

/// Geometry and opponent parameters of the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Field width in cells; must be ≥ 8 so the three regions are non-empty.
    pub field_width: i32,
    /// Field height in cells.
    pub field_height: i32,
    /// Paddle height in cells (both paddles).
    pub paddle_height: i32,
    /// Horizontal ball speed in cells per step (unit substeps).
    pub ball_speed: i32,
    /// Maximum cells the opponent paddle moves per step.
    pub opponent_max_speed: i32,
    /// Steps of delay in the opponent's view of the ball position.
    pub opponent_reaction_lag: usize,
    /// Steps the ball lies in the goal mouth after beating a paddle before
    /// the point is awarded and the next ball is served. With 0 the point and
    /// the serve happen on the contact step itself.
    pub serve_delay: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            field_width: 32,
            field_height: 21,
            paddle_height: 5,
            ball_speed: 2,
            opponent_max_speed: 1,
            opponent_reaction_lag: 2,
            serve_delay: 20,
        }
    }
}

/// Configuration rejection reasons for [`EnvConfig::validate`].
#[derive(Debug, thiserror::Error)]
pub enum EnvConfigError {
    #[error("field_width must be at least 8, got {0}")]
    FieldTooNarrow(i32),
    #[error("field_height ({height}) must be at least paddle_height ({paddle})")]
    FieldTooShort { height: i32, paddle: i32 },
    #[error("paddle_height must be at least 1, got {0}")]
    PaddleTooShort(i32),
    #[error("ball_speed must be at least 1, got {0}")]
    BallTooSlow(i32),
    #[error("opponent_max_speed must not be negative, got {0}")]
    NegativeOpponentSpeed(i32),
}

impl EnvConfig {
    /// Check the configuration invariants.
    pub fn validate(&self) -> Result<(), EnvConfigError> {
        if self.field_width < 8 {
            return Err(EnvConfigError::FieldTooNarrow(self.field_width));
        }
        if self.paddle_height < 1 {
            return Err(EnvConfigError::PaddleTooShort(self.paddle_height));
        }
        if self.field_height < self.paddle_height {
            return Err(EnvConfigError::FieldTooShort {
                height: self.field_height,
                paddle: self.paddle_height,
            });
        }
        if self.ball_speed < 1 {
            return Err(EnvConfigError::BallTooSlow(self.ball_speed));
        }
        if self.opponent_max_speed < 0 {
            return Err(EnvConfigError::NegativeOpponentSpeed(self.opponent_max_speed));
        }
        Ok(())
    }

    /// Column of the opponent (left) paddle.
    pub fn left_paddle_x(&self) -> i32 {
        PADDLE_INSET
    }

    /// Column of the agent (right) paddle.
    pub fn right_paddle_x(&self) -> i32 {
        self.field_width - 1 - PADDLE_INSET
    }

    /// Topmost admissible paddle row (always 0; for symmetry with
    /// [`EnvConfig::max_paddle_y`]).
    pub fn min_paddle_y(&self) -> i32 {
        0
    }

    /// Bottommost admissible paddle row.
    pub fn max_paddle_y(&self) -> i32 {
        self.field_height - self.paddle_height
    }

    fn center_x(&self) -> i32 {
        self.field_width / 2
    }

    fn center_y(&self) -> i32 {
        self.field_height / 2
    }

    fn centered_paddle_y(&self) -> i32 {
        (self.field_height - self.paddle_height) / 2
    }
}

/// What happened on the most recent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointEvent {
    /// No point was decided.
    None,
    /// The ball crossed the left boundary: the agent won the point.
    AgentScored,
    /// The ball crossed the right boundary: the agent lost the point.
    AgentConceded,
}

/// One of the three vertical strips of the field.
///
/// `A1` lies strictly behind the opponent paddle's column, `A3` strictly
/// behind the agent paddle's column, and `A2` spans everything between, the
/// paddle columns themselves included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    A1,
    A2,
    A3,
}

/// The agent's move for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentAction {
    Up,
    Down,
    Stay,
}

impl AgentAction {
    /// All actions, in index order.
    pub const ALL: [AgentAction; 3] = [AgentAction::Up, AgentAction::Down, AgentAction::Stay];

    /// Stable index of this action in `0..3`.
    pub fn index(self) -> usize {
        match self {
            AgentAction::Up => 0,
            AgentAction::Down => 1,
            AgentAction::Stay => 2,
        }
    }

    /// Inverse of [`AgentAction::index`]; panics on out-of-range input.
    pub fn from_index(i: usize) -> AgentAction {
        AgentAction::ALL[i]
    }

    fn dy(self) -> i32 {
        match self {
            AgentAction::Up => -1,
            AgentAction::Down => 1,
            AgentAction::Stay => 0,
        }
    }
}

/// Full observable simulator state after a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub ball_x: i32,
    pub ball_y: i32,
    /// Horizontal direction, −1 or +1 (speed comes from the config).
    pub ball_vx: i32,
    /// Vertical motion per substep, in {−1, 0, +1}.
    pub ball_vy: i32,
    /// Top row of the opponent paddle.
    pub left_paddle_y: i32,
    /// Top row of the agent paddle.
    pub right_paddle_y: i32,
    pub step_count: u64,
    pub last_event: PointEvent,
}

/// The simulator: config, serve randomness, and current state.
pub struct Env {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    state: EnvState,
    /// Ball rows from recent steps; front = the row the opponent reacts to.
    ball_y_history: VecDeque<i32>,
    /// Steps left of the ball lying in a goal mouth; 0 means open play.
    dwell_remaining: usize,
    /// The point to award when the dwell runs out.
    pending_event: PointEvent,
}

impl Env {
    /// Build a simulator and serve the first ball.
    pub fn new(cfg: &EnvConfig, seed: u64) -> Result<Env, EnvConfigError> {
        cfg.validate()?;
        let mut env = Env {
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: EnvState {
                ball_x: 0,
                ball_y: 0,
                ball_vx: 1,
                ball_vy: 0,
                left_paddle_y: cfg.centered_paddle_y(),
                right_paddle_y: cfg.centered_paddle_y(),
                step_count: 0,
                last_event: PointEvent::None,
            },
            ball_y_history: VecDeque::new(),
            dwell_remaining: 0,
            pending_event: PointEvent::None,
        };
        env.serve();
        Ok(env)
    }

    /// Current state.
    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Simulator configuration.
    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Re-center the paddles, zero the step counter, and serve.
    pub fn reset(&mut self) {
        self.state.left_paddle_y = self.cfg.centered_paddle_y();
        self.state.right_paddle_y = self.cfg.centered_paddle_y();
        self.state.step_count = 0;
        self.state.last_event = PointEvent::None;
        self.dwell_remaining = 0;
        self.pending_event = PointEvent::None;
        self.serve();
    }

    /// Place the ball at the field center with a random horizontal direction
    /// and no vertical motion. Paddles are left where they are.
    fn serve(&mut self) {
        self.state.ball_x = self.cfg.center_x();
        self.state.ball_y = self.cfg.center_y();
        self.state.ball_vx = if self.rng.random::<bool>() { 1 } else { -1 };
        self.state.ball_vy = 0;
        self.ball_y_history.clear();
        for _ in 0..=self.cfg.opponent_reaction_lag {
            self.ball_y_history.push_back(self.state.ball_y);
        }
    }

    /// Advance one step: move the agent paddle, then the opponent, then the
    /// ball. A ball that gets past a paddle parks on the back column for
    /// `serve_delay` steps; the point event is then recorded and the next
    /// ball served within the same step, so an event always coincides with a
    /// fresh serve.
    pub fn step(&mut self, action: AgentAction) -> &EnvState {
        let cfg = self.cfg.clone();
        let mut st = self.state;

        st.right_paddle_y =
            (st.right_paddle_y + action.dy()).clamp(cfg.min_paddle_y(), cfg.max_paddle_y());

        // The opponent chases a stale view of the ball row.
        let seen_y = *self.ball_y_history.front().expect("history is pre-filled");
        let target = (seen_y - (cfg.paddle_height - 1) / 2)
            .clamp(cfg.min_paddle_y(), cfg.max_paddle_y());
        let delta =
            (target - st.left_paddle_y).clamp(-cfg.opponent_max_speed, cfg.opponent_max_speed);
        st.left_paddle_y += delta;

        st.last_event = PointEvent::None;
        // The point to award — and the serve to make — before this step ends.
        let mut point_now = PointEvent::None;
        if self.dwell_remaining > 0 {
            // The ball lies in a goal mouth; only the clock moves it.
            self.dwell_remaining -= 1;
            if self.dwell_remaining == 0 {
                point_now = self.pending_event;
                self.pending_event = PointEvent::None;
            }
        } else {
            for _ in 0..cfg.ball_speed {
                // Vertical motion with mirror reflection off the walls.
                let mut ny = st.ball_y + st.ball_vy;
                if ny < 0 {
                    ny = -ny;
                    st.ball_vy = -st.ball_vy;
                } else if ny > cfg.field_height - 1 {
                    ny = 2 * (cfg.field_height - 1) - ny;
                    st.ball_vy = -st.ball_vy;
                }
                let nx = st.ball_x + st.ball_vx;

                // A paddle returns the ball when it covers the arrival row of
                // its column; the contact point sets the outgoing vertical
                // direction.
                if st.ball_vx < 0 && nx == cfg.left_paddle_x() && covers(st.left_paddle_y, &cfg, ny)
                {
                    st.ball_x = nx;
                    st.ball_y = ny;
                    st.ball_vx = 1;
                    st.ball_vy = deflect(ny, st.left_paddle_y, &cfg);
                } else if st.ball_vx > 0
                    && nx == cfg.right_paddle_x()
                    && covers(st.right_paddle_y, &cfg, ny)
                {
                    st.ball_x = nx;
                    st.ball_y = ny;
                    st.ball_vx = -1;
                    st.ball_vy = deflect(ny, st.right_paddle_y, &cfg);
                } else if st.ball_vx < 0 && nx <= 0 {
                    // Past the opponent: the ball comes to rest on the back
                    // column; the agent's point is pending.
                    st.ball_x = 0;
                    st.ball_y = ny;
                    st.ball_vy = 0;
                    if cfg.serve_delay == 0 {
                        point_now = PointEvent::AgentScored;
                    } else {
                        self.dwell_remaining = cfg.serve_delay;
                        self.pending_event = PointEvent::AgentScored;
                    }
                    break;
                } else if st.ball_vx > 0 && nx >= cfg.field_width - 1 {
                    st.ball_x = cfg.field_width - 1;
                    st.ball_y = ny;
                    st.ball_vy = 0;
                    if cfg.serve_delay == 0 {
                        point_now = PointEvent::AgentConceded;
                    } else {
                        self.dwell_remaining = cfg.serve_delay;
                        self.pending_event = PointEvent::AgentConceded;
                    }
                    break;
                } else {
                    st.ball_x = nx;
                    st.ball_y = ny;
                }
            }
        }

        if point_now != PointEvent::None {
            st.last_event = point_now;
            self.state = st;
            // serve() also refills the opponent's view for the new ball.
            self.serve();
        } else {
            self.state = st;
            // During a dwell the opponent pre-positions for the incoming
            // serve instead of staring at the dead ball.
            let tracked = if self.dwell_remaining > 0 { cfg.center_y() } else { st.ball_y };
            self.ball_y_history.push_back(tracked);
            while self.ball_y_history.len() > self.cfg.opponent_reaction_lag + 1 {
                self.ball_y_history.pop_front();
            }
        }
        self.state.step_count += 1;
        &self.state
    }
}

fn covers(paddle_y: i32, cfg: &EnvConfig, row: i32) -> bool {
    row >= paddle_y && row < paddle_y + cfg.paddle_height
}

/// Outgoing vertical direction after a paddle contact. The flat face of the
/// paddle returns the ball straight; only the outermost row at either end
/// sends it diagonally, so aimed shots take deliberate edge contact.
fn deflect(ball_y: i32, paddle_y: i32, cfg: &EnvConfig) -> i32 {
    let rel = ball_y - paddle_y;
    if rel == 0 && cfg.paddle_height > 1 {
        -1
    } else if rel == cfg.paddle_height - 1 && cfg.paddle_height > 1 {
        1
    } else {
        0
    }
}

/// The strip containing the ball.
pub fn region_of(cfg: &EnvConfig, state: &EnvState) -> Region {
    if state.ball_x < cfg.left_paddle_x() {
        Region::A1
    } else if state.ball_x > cfg.right_paddle_x() {
        Region::A3
    } else {
        Region::A2
    }
}

/// Binning scheme turning an [`EnvState`] into a small discrete key for
/// tabular lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsScheme {
    pub ball_x_bins: u32,
    pub ball_y_bins: u32,
    pub paddle_bins: u32,
    /// Also bin the opponent paddle row (off by default: the agent does not
    /// need it and the table stays smaller).
    pub include_opponent: bool,
}

impl Default for ObsScheme {
    fn default() -> Self {
        ObsScheme {
            ball_x_bins: 8,
            ball_y_bins: 7,
            paddle_bins: 7,
            include_opponent: false,
        }
    }
}

impl ObsScheme {
    /// Upper bound on the number of distinct observation keys.
    pub fn key_space(&self, _cfg: &EnvConfig) -> u64 {
        let opp = if self.include_opponent { self.paddle_bins as u64 } else { 1 };
        self.ball_x_bins as u64 * self.ball_y_bins as u64 * 2 * 3 * self.paddle_bins as u64 * opp
    }
}

fn bin(value: i32, range: i32, bins: u32) -> u64 {
    debug_assert!(value >= 0 && value < range);
    (value as u64 * bins as u64) / range as u64
}

/// Discretize a state: binned ball position, velocity signs, and binned
/// agent-paddle row, packed into one integer key. Identical states always
/// produce identical keys.
pub fn observe(cfg: &EnvConfig, scheme: &ObsScheme, state: &EnvState) -> u64 {
    let bx = bin(state.ball_x, cfg.field_width, scheme.ball_x_bins);
    let by = bin(state.ball_y, cfg.field_height, scheme.ball_y_bins);
    let vx = if state.ball_vx > 0 { 1u64 } else { 0 };
    let vy = (state.ball_vy + 1) as u64;
    let paddle_range = cfg.max_paddle_y() + 1;
    let pb = bin(state.right_paddle_y, paddle_range, scheme.paddle_bins);
    let mut key = bx;
    key = key * scheme.ball_y_bins as u64 + by;
    key = key * 2 + vx;
    key = key * 3 + vy;
    key = key * scheme.paddle_bins as u64 + pb;
    if scheme.include_opponent {
        let ob = bin(state.left_paddle_y, paddle_range, scheme.paddle_bins);
        key = key * scheme.paddle_bins as u64 + ob;
    }
    key
}

/// Normalized feature vector for the function-approximator backend:
/// ball position and velocity plus the agent paddle row, all scaled to
/// order-one ranges.
pub fn features(cfg: &EnvConfig, state: &EnvState) -> Vec<f64> {
    vec![
        state.ball_x as f64 / (cfg.field_width - 1) as f64,
        state.ball_y as f64 / (cfg.field_height - 1) as f64,
        state.ball_vx as f64,
        state.ball_vy as f64,
        state.right_paddle_y as f64 / cfg.max_paddle_y().max(1) as f64,
    ]
}
