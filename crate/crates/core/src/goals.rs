//! Goal functions: scoring test trajectories by what the designer wants,
//! not by what the learner was paid.
//!
//! A goal function never reaches the learner as reward. It ranks finished
//! test windows: winning counts points scored, losing counts points
//! conceded, and cooperation measures the mean rally length — steps elapsed
//! until either side concedes. Higher is always fitter, so elimination can
//! uniformly strike the minimum.

use std::fmt;

use crate::learner::TrajectoryStats;

/// One of the three selection pressures applied to reward signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GoalFn {
    Winning,
    Losing,
    Cooperation,
}

impl GoalFn {
    /// All goals, in canonical order.
    pub const ALL: [GoalFn; 3] = [GoalFn::Winning, GoalFn::Losing, GoalFn::Cooperation];

    /// Stable lowercase name, used in history and draw files.
    pub fn name(self) -> &'static str {
        match self {
            GoalFn::Winning => "winning",
            GoalFn::Losing => "losing",
            GoalFn::Cooperation => "cooperation",
        }
    }

    /// Inverse of [`GoalFn::name`].
    pub fn from_name(name: &str) -> Option<GoalFn> {
        GoalFn::ALL.into_iter().find(|g| g.name() == name)
    }
}

impl fmt::Display for GoalFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The three per-signal statistics reported for every test window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalScores {
    /// Points scored by the agent.
    pub won: u64,
    /// Points conceded by the agent.
    pub lost: u64,
    /// Mean completed rally length in steps; the window length when the
    /// window contained no point at all.
    pub coop: f64,
}

/// Fitness of one test window under one goal. Higher is fitter for every
/// goal. Cooperation is the mean over completed rallies only — the trailing
/// unfinished rally is excluded — and saturates at the window length when no
/// point occurred.
pub fn evaluate(stats: &TrajectoryStats, goal: GoalFn) -> f64 {
    match goal {
        GoalFn::Winning => stats.won as f64,
        GoalFn::Losing => stats.lost as f64,
        GoalFn::Cooperation => {
            if stats.intervals.is_empty() {
                stats.steps as f64
            } else {
                stats.intervals.iter().sum::<u64>() as f64 / stats.intervals.len() as f64
            }
        }
    }
}

/// All three goal statistics of one test window.
pub fn scores_of(stats: &TrajectoryStats) -> GoalScores {
    GoalScores {
        won: stats.won,
        lost: stats.lost,
        coop: evaluate(stats, GoalFn::Cooperation),
    }
}

/// Sort key placing signal ids in report order: region bitstrings
/// lexicographically, then the event baselines in score/no-score/concede
/// order, then the random baseline, then anything else lexicographically.
pub fn canonical_rank(id: &str) -> (u8, String) {
    let class = match id {
        _ if id.len() == 3 && id.bytes().all(|b| b == b'0' || b == b'1') => 0,
        "b100" => 1,
        "b010" => 2,
        "b001" => 3,
        "rand" => 4,
        _ => 5,
    };
    (class, id.to_string())
}

/// Mean of a score column across checkpoints; fractional because point
/// counts rarely average to integers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanScores {
    pub won: f64,
    pub lost: f64,
    pub coop: f64,
}

/// One signal's test results across the checkpoint series.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub id: String,
    /// (cumulative training steps at the checkpoint, test statistics).
    pub tests: Vec<(u64, TrajectoryStats)>,
}

/// Scores for one signal at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub checkpoint: u64,
    pub id: String,
    pub scores: GoalScores,
}

/// The full scores-by-checkpoint table plus the per-signal averages block.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalTable {
    /// Length of every test window, in steps.
    pub test_len: u64,
    /// Sorted by checkpoint, then canonical signal order.
    pub entries: Vec<TableEntry>,
    /// Per-signal column means in canonical signal order.
    pub averages: Vec<(String, MeanScores)>,
}

/// Table construction rejections.
#[derive(Debug, thiserror::Error)]
pub enum GoalTableError {
    #[error(
        "signal {id} at checkpoint {checkpoint} has a {got}-step test window, expected {expected}"
    )]
    MixedWindowLengths { id: String, checkpoint: u64, got: u64, expected: u64 },
    #[error("signal {id} appears twice at checkpoint {checkpoint}")]
    DuplicateEntry { id: String, checkpoint: u64 },
}

/// Assemble the per-checkpoint score table and averages block from raw test
/// statistics. Input order is irrelevant; the result is canonically sorted.
pub fn goal_table(test_len: u64, series: &[SignalSeries]) -> Result<GoalTable, GoalTableError> {
    let mut entries = Vec::new();
    for s in series {
        for (checkpoint, stats) in &s.tests {
            if stats.steps != test_len {
                return Err(GoalTableError::MixedWindowLengths {
                    id: s.id.clone(),
                    checkpoint: *checkpoint,
                    got: stats.steps,
                    expected: test_len,
                });
            }
            entries.push(TableEntry {
                checkpoint: *checkpoint,
                id: s.id.clone(),
                scores: scores_of(stats),
            });
        }
    }
    entries.sort_by(|a, b| {
        (a.checkpoint, canonical_rank(&a.id)).cmp(&(b.checkpoint, canonical_rank(&b.id)))
    });
    for w in entries.windows(2) {
        if w[0].checkpoint == w[1].checkpoint && w[0].id == w[1].id {
            return Err(GoalTableError::DuplicateEntry {
                id: w[0].id.clone(),
                checkpoint: w[0].checkpoint,
            });
        }
    }

    let mut ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
    ids.sort_by_key(|id| canonical_rank(id));
    ids.dedup();
    let averages = ids
        .into_iter()
        .map(|id| {
            let rows: Vec<&GoalScores> =
                entries.iter().filter(|e| e.id == id).map(|e| &e.scores).collect();
            let n = rows.len() as f64;
            let mean = MeanScores {
                won: rows.iter().map(|r| r.won as f64).sum::<f64>() / n,
                lost: rows.iter().map(|r| r.lost as f64).sum::<f64>() / n,
                coop: rows.iter().map(|r| r.coop).sum::<f64>() / n,
            };
            (id, mean)
        })
        .collect();

    Ok(GoalTable { test_len, entries, averages })
}
