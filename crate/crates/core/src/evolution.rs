//! Population-based selection over reward signals: train, test, eliminate,
//! mutate, repeat.
//!
//! Each reward signal owns exactly one learner, and that learner's test
//! trajectory is scored under every goal at once. Per round, every goal
//! strikes its least-fit active signal (ties broken by a uniform draw from a
//! dedicated seed stream), fresh mutant signals join every goal's list, and
//! the shared training budget advances. A struck signal stays struck for
//! that goal forever; the run converges when each goal is down to a single
//! survivor.
//!
//! [`replay_elimination`] re-executes the bookkeeping half of that loop from
//! a finished score table — either following recorded draws exactly or
//! re-randomizing them — so elimination outcomes can be audited or
//! resampled without retraining anything.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, EnvConfigError, ObsScheme};
use crate::goals::{self, GoalFn, GoalScores, GoalTable};
use crate::learner::{Learner, LearnerConfig, LearnerConfigError, TrajectoryStats};
use crate::rng;
use crate::signals::{PoolExhausted, RewardSignal, SignalArchive};

/// How the cumulative training budget grows between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementMode {
    /// Add the burn-in length every round: M, 2M, 3M, ...
    Additive,
    /// Double the budget every round: M, 2M, 4M, ...
    Doubling,
}

impl IncrementMode {
    /// The budget after one more round, given the burn-in length `base`.
    pub fn advance(self, budget: u64, base: u64) -> u64 {
        match self {
            IncrementMode::Additive => budget + base,
            IncrementMode::Doubling => budget * 2,
        }
    }
}

/// Knobs of the selection loop itself (the environment and learner have
/// their own configs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    /// How many goals apply selection pressure, taken in canonical order
    /// (winning, losing, cooperation). At most three.
    pub n_goals: usize,
    /// Size of the initial signal population shared by all goals.
    pub initial_signals: usize,
    /// Burn-in training length M, also the additive budget increment.
    pub burn_in: u64,
    /// Length of each greedy test window, in steps.
    pub test_len: u64,
    /// Fresh mutant signals injected into every goal's list per round.
    pub mutations_per_round: usize,
    /// Budget growth rule between rounds.
    pub increment_mode: IncrementMode,
    /// Hard cap on rounds if convergence does not happen first.
    pub max_rounds: usize,
    /// Master seed; every stream used by the run is derived from it by name.
    pub master_seed: u64,
}

impl Default for EvoConfig {
    fn default() -> EvoConfig {
        EvoConfig {
            n_goals: 3,
            initial_signals: 3,
            burn_in: 50_000,
            test_len: 10_000,
            mutations_per_round: 2,
            increment_mode: IncrementMode::Additive,
            max_rounds: 7,
            master_seed: 1,
        }
    }
}

/// Rejected [`EvoConfig`] values.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvoConfigError {
    #[error("n_goals must be between 1 and 3, got {0}")]
    NGoalsOutOfRange(usize),
    #[error("initial_signals must be at least 1")]
    NoInitialSignals,
    #[error("burn_in must be at least 1 step")]
    ZeroBurnIn,
    #[error("test_len must be at least 1 step")]
    ZeroTestLen,
    #[error("test_len ({test_len}) must not exceed burn_in ({burn_in})")]
    TestLongerThanBurnIn { test_len: u64, burn_in: u64 },
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
}

impl EvoConfig {
    /// Reject configurations the loop cannot run.
    pub fn validate(&self) -> Result<(), EvoConfigError> {
        if self.n_goals == 0 || self.n_goals > GoalFn::ALL.len() {
            return Err(EvoConfigError::NGoalsOutOfRange(self.n_goals));
        }
        if self.initial_signals == 0 {
            return Err(EvoConfigError::NoInitialSignals);
        }
        if self.burn_in == 0 {
            return Err(EvoConfigError::ZeroBurnIn);
        }
        if self.test_len == 0 {
            return Err(EvoConfigError::ZeroTestLen);
        }
        if self.test_len > self.burn_in {
            return Err(EvoConfigError::TestLongerThanBurnIn {
                test_len: self.test_len,
                burn_in: self.burn_in,
            });
        }
        if self.max_rounds == 0 {
            return Err(EvoConfigError::ZeroRounds);
        }
        Ok(())
    }

    /// The goals this run selects under, in canonical order.
    pub fn goals(&self) -> &'static [GoalFn] {
        &GoalFn::ALL[..self.n_goals]
    }
}

/// A signal struck from one goal's active list, with the fitness that
/// condemned it.
#[derive(Debug, Clone, PartialEq)]
pub struct Elimination {
    pub id: String,
    pub round: usize,
    pub fitness: f64,
}

/// Per-goal active and eliminated signal lists, plus the global registry of
/// every signal that ever entered the run.
///
/// The lists enforce the no-re-entry rule: once a signal is struck for a
/// goal it can never rejoin that goal's active list.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMatrix {
    goals: Vec<GoalFn>,
    active: Vec<Vec<String>>,
    eliminated: Vec<Vec<Elimination>>,
    registry: Vec<String>,
}

/// Attempt to add a signal to a lane that already holds or already struck it.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("signal {id} cannot re-enter the {goal} lane")]
pub struct ReentryError {
    pub goal: GoalFn,
    pub id: String,
}

impl PopulationMatrix {
    /// A matrix where every goal starts with the same initial signals.
    pub fn new(goals: &[GoalFn], initial: &[String]) -> PopulationMatrix {
        let mut ids = initial.to_vec();
        canonical_sort(&mut ids);
        PopulationMatrix {
            goals: goals.to_vec(),
            active: vec![ids.clone(); goals.len()],
            eliminated: vec![Vec::new(); goals.len()],
            registry: ids,
        }
    }

    fn lane(&self, goal: GoalFn) -> usize {
        self.goals
            .iter()
            .position(|g| *g == goal)
            .unwrap_or_else(|| panic!("goal {goal} is not part of this matrix"))
    }

    /// The goals this matrix tracks, in canonical order.
    pub fn goals(&self) -> &[GoalFn] {
        &self.goals
    }

    /// Signals currently competing under `goal`, in canonical order.
    pub fn active(&self, goal: GoalFn) -> &[String] {
        &self.active[self.lane(goal)]
    }

    /// Signals struck from `goal`, in strike order.
    pub fn eliminated(&self, goal: GoalFn) -> &[Elimination] {
        &self.eliminated[self.lane(goal)]
    }

    /// Every signal that ever entered the run, in order of first appearance.
    pub fn registry(&self) -> &[String] {
        &self.registry
    }

    /// Union of all goals' active lists, in canonical order.
    pub fn union_active(&self) -> Vec<String> {
        let mut ids: Vec<String> =
            self.active.iter().flatten().collect::<BTreeSet<_>>().into_iter().cloned().collect();
        canonical_sort(&mut ids);
        ids
    }

    /// Move `id` from `goal`'s active list to its eliminated list.
    ///
    /// Panics if `id` is not active for `goal`; callers always strike an id
    /// they just selected from that list.
    pub fn strike(&mut self, goal: GoalFn, id: &str, round: usize, fitness: f64) {
        let lane = self.lane(goal);
        let pos = self.active[lane]
            .iter()
            .position(|a| a == id)
            .unwrap_or_else(|| panic!("signal {id} is not active for {goal}"));
        self.active[lane].remove(pos);
        self.eliminated[lane].push(Elimination { id: id.to_string(), round, fitness });
    }

    /// Add `ids` to every goal's active list and to the registry, in
    /// canonical order.
    ///
    /// Fails without partial effect if any id is already active or already
    /// struck in any lane.
    pub fn inject(&mut self, ids: &[String]) -> Result<(), ReentryError> {
        let mut ids = ids.to_vec();
        canonical_sort(&mut ids);
        let ids = &ids;
        for (lane, goal) in self.goals.iter().enumerate() {
            for id in ids {
                if self.active[lane].iter().any(|a| a == id)
                    || self.eliminated[lane].iter().any(|e| e.id == *id)
                {
                    return Err(ReentryError { goal: *goal, id: id.clone() });
                }
            }
        }
        for lane in &mut self.active {
            lane.extend(ids.iter().cloned());
            canonical_sort(lane);
        }
        for id in ids {
            if !self.registry.iter().any(|r| r == id) {
                self.registry.push(id.clone());
            }
        }
        Ok(())
    }

    /// True once every goal is down to a single active signal.
    pub fn is_converged(&self) -> bool {
        self.active.iter().all(|lane| lane.len() == 1)
    }

    /// The surviving signal per goal, once converged.
    pub fn winners(&self) -> Option<Vec<(GoalFn, String)>> {
        if !self.is_converged() {
            return None;
        }
        Some(
            self.goals
                .iter()
                .zip(&self.active)
                .map(|(g, lane)| (*g, lane[0].clone()))
                .collect(),
        )
    }
}

/// Sort signal ids in canonical display order.
pub fn canonical_sort(ids: &mut [String]) {
    ids.sort_by_key(|id| goals::canonical_rank(id));
}

/// A tie at the fitness minimum, resolved by a uniform draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TieDraw {
    pub goal: GoalFn,
    pub round: usize,
    /// Every signal tied at the minimum, in canonical order.
    pub tied: Vec<String>,
    /// The one the draw struck.
    pub chosen: String,
}

/// Everything that happened in one round, sufficient to audit it later.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// Cumulative training steps at which this round's tests ran.
    pub checkpoint: u64,
    /// Test scores for every signal active under any goal this round, in
    /// canonical order.
    pub scores: Vec<(String, GoalScores)>,
    /// Struck signal and its fitness, per goal.
    pub removed: Vec<(GoalFn, String, f64)>,
    /// Fitness ties that required a draw.
    pub ties: Vec<TieDraw>,
    /// Mutant signals injected after the strikes, in canonical order.
    pub added: Vec<String>,
}

/// Result of selecting the least-fit signal in one lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Struck {
    pub id: String,
    pub fitness: f64,
    /// All signals that shared the minimum (length 1 when there was no tie).
    pub tied: Vec<String>,
}

/// Failures of a single elimination step.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EliminationError {
    #[error("cannot eliminate from an empty active list")]
    EmptyActive,
    #[error("no fitness value for active signal {0}")]
    MissingFitness(String),
}

/// Pick the signal with minimal fitness from `active`, drawing uniformly
/// from `rng` when several share the minimum.
pub fn eliminate(
    active: &[String],
    fitness: &BTreeMap<String, f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Struck, EliminationError> {
    if active.is_empty() {
        return Err(EliminationError::EmptyActive);
    }
    let mut min = f64::INFINITY;
    for id in active {
        let f = *fitness.get(id).ok_or_else(|| EliminationError::MissingFitness(id.clone()))?;
        if f < min {
            min = f;
        }
    }
    let tied: Vec<String> = active.iter().filter(|id| fitness[*id] == min).cloned().collect();
    let chosen = if tied.len() == 1 {
        tied[0].clone()
    } else {
        tied[rng.random_range(0..tied.len())].clone()
    };
    Ok(Struck { id: chosen, fitness: min, tied })
}

/// Anything that can stop a selection run before it finishes.
#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Config(#[from] EvoConfigError),
    #[error(transparent)]
    Env(#[from] EnvConfigError),
    #[error(transparent)]
    Learner(#[from] LearnerConfigError),
    #[error(transparent)]
    Pool(#[from] PoolExhausted),
    #[error(transparent)]
    Elimination(#[from] EliminationError),
    #[error(transparent)]
    Reentry(#[from] ReentryError),
}

/// Final state of a finished (or round-capped) selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionRun {
    pub matrix: PopulationMatrix,
    pub records: Vec<RoundRecord>,
}

struct SignalRun {
    signal: RewardSignal,
    learner: Learner,
    env: Env,
}

fn make_run(
    id: &str,
    signal: RewardSignal,
    env_cfg: &EnvConfig,
    learner_cfg: &LearnerConfig,
    scheme: &ObsScheme,
    master: u64,
) -> Result<SignalRun, EvolutionError> {
    let learner =
        Learner::new(learner_cfg, env_cfg, scheme, rng::derive_seed(master, &format!("learner/{id}")))?;
    let env = Env::new(env_cfg, rng::derive_seed(master, &format!("env/{id}")))?;
    Ok(SignalRun { signal, learner, env })
}

/// Train every listed signal's learner up to `target` cumulative steps.
///
/// Learners created this round start from zero and catch up to the same
/// budget here. Signals whose reward never responds to anything (the
/// untrained baseline) are skipped; their learners stay blank.
fn train_to(runs: &mut BTreeMap<String, SignalRun>, ids: &[String], target: u64) {
    let mut batch: Vec<&mut SignalRun> = runs
        .iter_mut()
        .filter(|(id, _)| ids.iter().any(|i| i == *id))
        .map(|(_, r)| r)
        .collect();
    batch.par_iter_mut().for_each(|r| {
        if !r.signal.is_learnable() {
            return;
        }
        let need = target.saturating_sub(r.learner.steps_trained());
        if need > 0 {
            r.learner.train_steps(&mut r.env, &r.signal, need);
        }
    });
}

/// Run each listed signal's greedy test window at the `target` checkpoint.
fn test_all(
    runs: &BTreeMap<String, SignalRun>,
    ids: &[String],
    target: u64,
    test_len: u64,
    env_cfg: &EnvConfig,
    master: u64,
) -> BTreeMap<String, TrajectoryStats> {
    let results: Vec<(String, TrajectoryStats)> = ids
        .par_iter()
        .map(|id| {
            let r = &runs[id];
            let mut env =
                Env::new(env_cfg, rng::derive_seed(master, &format!("test-env/{id}/{target}")))
                    .expect("the training env was built from the same config");
            let mut test_rng = rng::stream(master, &format!("test/{id}/{target}"));
            (id.clone(), r.learner.test_run(&mut env, test_len, &mut test_rng))
        })
        .collect();
    results.into_iter().collect()
}

/// Execute the full selection loop.
///
/// `on_round` fires after every completed round with the updated matrix and
/// that round's record, so callers can persist progress incrementally; a
/// later failure then still leaves every finished round on disk.
///
/// Convergence is checked after each round: the run stops as soon as every
/// goal holds a single signal, or after `max_rounds`. A lane already down
/// to one signal is never struck below one.
pub fn run(
    cfg: &EvoConfig,
    env_cfg: &EnvConfig,
    learner_cfg: &LearnerConfig,
    scheme: &ObsScheme,
    mut on_round: impl FnMut(&PopulationMatrix, &RoundRecord),
) -> Result<EvolutionRun, EvolutionError> {
    cfg.validate()?;
    let master = cfg.master_seed;
    let goals = cfg.goals();

    let mut archive = SignalArchive::new(rng::derive_seed(master, "mutation"));
    let initial = archive.initial_population(cfg.initial_signals)?;
    let mut runs: BTreeMap<String, SignalRun> = BTreeMap::new();
    let mut ids = Vec::new();
    for signal in initial {
        let id = signal.canonical_id();
        runs.insert(id.clone(), make_run(&id, signal, env_cfg, learner_cfg, scheme, master)?);
        ids.push(id);
    }
    let mut matrix = PopulationMatrix::new(goals, &ids);

    let mut target = cfg.burn_in;
    train_to(&mut runs, &matrix.union_active(), target);

    let mut records = Vec::new();
    for round in 1..=cfg.max_rounds {
        target = cfg.increment_mode.advance(target, cfg.burn_in);
        let union = matrix.union_active();
        train_to(&mut runs, &union, target);
        let stats = test_all(&runs, &union, target, cfg.test_len, env_cfg, master);

        let scores: Vec<(String, GoalScores)> =
            union.iter().map(|id| (id.clone(), goals::scores_of(&stats[id]))).collect();

        let mut removed = Vec::new();
        let mut ties = Vec::new();
        for goal in goals {
            let active = matrix.active(*goal).to_vec();
            if active.len() <= 1 {
                continue;
            }
            let fitness: BTreeMap<String, f64> = active
                .iter()
                .map(|id| (id.clone(), goals::evaluate(&stats[id], *goal)))
                .collect();
            let mut tie_rng = rng::stream(master, &format!("tie/{}/{round}", goal.name()));
            let struck = eliminate(&active, &fitness, &mut tie_rng)?;
            if struck.tied.len() > 1 {
                ties.push(TieDraw {
                    goal: *goal,
                    round,
                    tied: struck.tied.clone(),
                    chosen: struck.id.clone(),
                });
            }
            matrix.strike(*goal, &struck.id, round, struck.fitness);
            removed.push((*goal, struck.id, struck.fitness));
        }

        let mut added = Vec::new();
        for signal in archive.mutate(cfg.mutations_per_round) {
            let id = signal.canonical_id();
            runs.insert(id.clone(), make_run(&id, signal, env_cfg, learner_cfg, scheme, master)?);
            added.push(id);
        }
        canonical_sort(&mut added);
        matrix.inject(&added)?;

        let record = RoundRecord { round, checkpoint: target, scores, removed, ties, added };
        on_round(&matrix, &record);
        records.push(record);
        if matrix.is_converged() {
            break;
        }
    }

    Ok(EvolutionRun { matrix, records })
}

/// Recorded randomness of one selection run: the initial population, the
/// per-round additions, and every tie draw that was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawScript {
    pub init: Vec<String>,
    /// (round, ids added that round).
    pub adds: Vec<(usize, Vec<String>)>,
    /// (goal, round, struck id) for each tie that needed a draw.
    pub ties: Vec<(GoalFn, usize, String)>,
}

/// Where a replay gets its randomness from.
pub enum ReplayPolicy {
    /// Follow a recorded script exactly: its initial population, additions,
    /// and tie choices.
    Scripted(DrawScript),
    /// Re-randomize the draws: additions are sampled without replacement
    /// from `pool` (after any `forced` entries), ties are drawn uniformly.
    Randomized {
        init: Vec<String>,
        /// Candidate ids additions may be drawn from.
        pool: Vec<String>,
        /// (round, id) additions injected before the random picks.
        forced: Vec<(usize, String)>,
        /// Total additions per round, forced entries included.
        adds_per_round: usize,
        seed: u64,
    },
}

/// One replayed round; mirrors [`RoundRecord`] minus the raw scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRound {
    pub round: usize,
    pub checkpoint: u64,
    pub removed: Vec<(GoalFn, String, f64)>,
    pub ties: Vec<TieDraw>,
    pub added: Vec<String>,
    /// Active lists after this round's strikes and additions.
    pub active_after: Vec<(GoalFn, Vec<String>)>,
}

/// A finished replay: the per-round progression and the final matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub rounds: Vec<ReplayRound>,
    pub matrix: PopulationMatrix,
}

/// Failures while replaying eliminations from a score table.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("the score table has no checkpoints")]
    EmptyTable,
    #[error("no score for signal {id} at checkpoint {checkpoint}")]
    MissingEntry { checkpoint: u64, id: String },
    #[error("a tie in round {round} under {goal} has no recorded draw")]
    MissingDraw { goal: GoalFn, round: usize },
    #[error("recorded draw {chosen} (round {round}, {goal}) is not in the tied set")]
    DrawOutsideTie { goal: GoalFn, round: usize, chosen: String },
    #[error(transparent)]
    Reentry(#[from] ReentryError),
    #[error(transparent)]
    Elimination(#[from] EliminationError),
}

/// Re-run the elimination bookkeeping against an existing score table.
///
/// Checkpoints are taken from the table in ascending order, one per round.
/// The replay stops when every goal has one active signal left or the
/// checkpoints run out. Fitness lookups that miss the table are errors, as
/// are scripted draws that fall outside the tied set — a recorded run that
/// disagrees with its own scores is corrupt.
pub fn replay_elimination(
    table: &GoalTable,
    goal_list: &[GoalFn],
    policy: ReplayPolicy,
) -> Result<ReplayOutcome, ReplayError> {
    let mut checkpoints: Vec<u64> = table.entries.iter().map(|e| e.checkpoint).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if checkpoints.is_empty() {
        return Err(ReplayError::EmptyTable);
    }
    let scores: BTreeMap<(u64, &str), GoalScores> =
        table.entries.iter().map(|e| ((e.checkpoint, e.id.as_str()), e.scores)).collect();

    let (init, script, mut random) = match policy {
        ReplayPolicy::Scripted(s) => (s.init.clone(), Some(s), None),
        ReplayPolicy::Randomized { init, pool, forced, adds_per_round, seed } => {
            let mut seen: BTreeSet<String> = init.iter().cloned().collect();
            seen.extend(forced.iter().map(|(_, id)| id.clone()));
            (
                init,
                None,
                Some((pool, forced, adds_per_round, rng::stream(seed, "replay-draws"), seen)),
            )
        }
    };

    let mut matrix = PopulationMatrix::new(goal_list, &init);
    let mut rounds = Vec::new();
    for (i, &checkpoint) in checkpoints.iter().enumerate() {
        if matrix.is_converged() {
            break;
        }
        let round = i + 1;
        let mut removed = Vec::new();
        let mut ties = Vec::new();
        for goal in goal_list {
            let active = matrix.active(*goal).to_vec();
            if active.len() <= 1 {
                continue;
            }
            let mut fitness = BTreeMap::new();
            for id in &active {
                let s = scores.get(&(checkpoint, id.as_str())).ok_or_else(|| {
                    ReplayError::MissingEntry { checkpoint, id: id.clone() }
                })?;
                fitness.insert(id.clone(), goal_scores_fitness(s, *goal));
            }
            let min = fitness.values().fold(f64::INFINITY, |a, &b| a.min(b));
            let tied: Vec<String> =
                active.iter().filter(|id| fitness[*id] == min).cloned().collect();
            let chosen = if tied.len() == 1 {
                tied[0].clone()
            } else {
                match (&script, &mut random) {
                    (Some(s), _) => {
                        let rec = s
                            .ties
                            .iter()
                            .find(|(g, r, _)| *g == *goal && *r == round)
                            .ok_or(ReplayError::MissingDraw { goal: *goal, round })?;
                        if !tied.contains(&rec.2) {
                            return Err(ReplayError::DrawOutsideTie {
                                goal: *goal,
                                round,
                                chosen: rec.2.clone(),
                            });
                        }
                        rec.2.clone()
                    }
                    (None, Some((_, _, _, rng, _))) => {
                        tied[rng.random_range(0..tied.len())].clone()
                    }
                    (None, None) => unreachable!("policy is scripted or randomized"),
                }
            };
            if tied.len() > 1 {
                ties.push(TieDraw { goal: *goal, round, tied: tied.clone(), chosen: chosen.clone() });
            }
            matrix.strike(*goal, &chosen, round, min);
            removed.push((*goal, chosen, min));
        }

        let mut added = match (&script, &mut random) {
            (Some(s), _) => s
                .adds
                .iter()
                .filter(|(r, _)| *r == round)
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect::<Vec<_>>(),
            (None, Some((pool, forced, per_round, rng, seen))) => {
                let mut ids: Vec<String> = forced
                    .iter()
                    .filter(|(r, _)| *r == round)
                    .map(|(_, id)| id.clone())
                    .collect();
                let mut unseen: Vec<&String> =
                    pool.iter().filter(|id| !seen.contains(*id)).collect();
                while ids.len() < *per_round && !unseen.is_empty() {
                    let pick = unseen.remove(rng.random_range(0..unseen.len()));
                    ids.push(pick.clone());
                }
                for id in &ids {
                    seen.insert(id.clone());
                }
                ids
            }
            (None, None) => unreachable!("policy is scripted or randomized"),
        };
        canonical_sort(&mut added);
        matrix.inject(&added)?;

        rounds.push(ReplayRound {
            round,
            checkpoint,
            removed,
            ties,
            added,
            active_after: goal_list
                .iter()
                .map(|g| (*g, matrix.active(*g).to_vec()))
                .collect(),
        });
    }

    Ok(ReplayOutcome { rounds, matrix })
}

/// Project a score triple onto one goal's fitness axis.
fn goal_scores_fitness(s: &GoalScores, goal: GoalFn) -> f64 {
    match goal {
        GoalFn::Winning => s.won as f64,
        GoalFn::Losing => s.lost as f64,
        GoalFn::Cooperation => s.coop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goals::TableEntry;

    fn entry(checkpoint: u64, id: &str, won: u64, lost: u64, coop: f64) -> TableEntry {
        TableEntry { checkpoint, id: id.to_string(), scores: GoalScores { won, lost, coop } }
    }

    fn table_of(entries: Vec<TableEntry>) -> GoalTable {
        GoalTable { test_len: 100, entries, averages: Vec::new() }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn strikes_move_signals_to_the_eliminated_list() {
        let goals = [GoalFn::Winning, GoalFn::Losing];
        let mut m = PopulationMatrix::new(&goals, &ids(&["000", "011"]));
        m.strike(GoalFn::Winning, "011", 1, 2.0);
        assert_eq!(m.active(GoalFn::Winning), &ids(&["000"]));
        assert_eq!(m.active(GoalFn::Losing), &ids(&["000", "011"]));
        assert_eq!(
            m.eliminated(GoalFn::Winning),
            &[Elimination { id: "011".into(), round: 1, fitness: 2.0 }]
        );
        assert!(m.eliminated(GoalFn::Losing).is_empty());
    }

    #[test]
    fn struck_signals_never_re_enter_a_lane() {
        let goals = [GoalFn::Winning];
        let mut m = PopulationMatrix::new(&goals, &ids(&["000", "011"]));
        m.strike(GoalFn::Winning, "011", 1, 0.0);
        let err = m.inject(&ids(&["011"])).unwrap_err();
        assert_eq!(err, ReentryError { goal: GoalFn::Winning, id: "011".into() });
        // A currently active id is rejected the same way.
        assert!(m.inject(&ids(&["000"])).is_err());
        // The failed injection left nothing behind.
        assert_eq!(m.active(GoalFn::Winning), &ids(&["000"]));
    }

    #[test]
    fn injection_keeps_lists_in_canonical_order() {
        let goals = [GoalFn::Winning];
        let mut m = PopulationMatrix::new(&goals, &ids(&["011"]));
        m.inject(&ids(&["b100", "000"])).unwrap();
        assert_eq!(m.active(GoalFn::Winning), &ids(&["000", "011", "b100"]));
        assert_eq!(m.registry(), &ids(&["011", "000", "b100"]));
    }

    #[test]
    fn eliminate_strikes_the_minimum_fitness() {
        let active = ids(&["000", "001", "010"]);
        let fitness: BTreeMap<String, f64> =
            [("000".into(), 5.0), ("001".into(), 1.0), ("010".into(), 3.0)].into();
        let mut r = rng::stream(0, "tie");
        let struck = eliminate(&active, &fitness, &mut r).unwrap();
        assert_eq!(struck.id, "001");
        assert_eq!(struck.fitness, 1.0);
        assert_eq!(struck.tied, ids(&["001"]));
    }

    #[test]
    fn eliminate_breaks_ties_uniformly_from_the_given_stream() {
        let active = ids(&["000", "001", "010"]);
        let fitness: BTreeMap<String, f64> =
            [("000".into(), 2.0), ("001".into(), 2.0), ("010".into(), 7.0)].into();
        let mut counts = BTreeMap::new();
        for k in 0..400u64 {
            let mut r = rng::stream(k, "tie");
            let struck = eliminate(&active, &fitness, &mut r).unwrap();
            assert_eq!(struck.tied, ids(&["000", "001"]));
            *counts.entry(struck.id).or_insert(0u32) += 1;
        }
        assert!(counts["000"] > 140 && counts["001"] > 140, "skewed draw: {counts:?}");
        // The same stream always gives the same draw.
        let mut a = rng::stream(3, "tie");
        let mut b = rng::stream(3, "tie");
        assert_eq!(eliminate(&active, &fitness, &mut a), eliminate(&active, &fitness, &mut b));
    }

    #[test]
    fn eliminate_rejects_empty_and_unscored_lists() {
        let mut r = rng::stream(0, "tie");
        assert_eq!(eliminate(&[], &BTreeMap::new(), &mut r), Err(EliminationError::EmptyActive));
        let active = ids(&["000"]);
        assert_eq!(
            eliminate(&active, &BTreeMap::new(), &mut r),
            Err(EliminationError::MissingFitness("000".into()))
        );
    }

    #[test]
    fn budget_advance_is_additive_or_doubling() {
        let m = 50_000;
        assert_eq!(IncrementMode::Additive.advance(m, m), 100_000);
        assert_eq!(IncrementMode::Additive.advance(100_000, m), 150_000);
        assert_eq!(IncrementMode::Doubling.advance(m, m), 100_000);
        assert_eq!(IncrementMode::Doubling.advance(100_000, m), 200_000);
    }

    #[test]
    fn config_rejects_impossible_values() {
        let ok = EvoConfig::default();
        assert!(ok.validate().is_ok());
        assert!(matches!(
            EvoConfig { n_goals: 0, ..ok.clone() }.validate(),
            Err(EvoConfigError::NGoalsOutOfRange(0))
        ));
        assert!(matches!(
            EvoConfig { n_goals: 4, ..ok.clone() }.validate(),
            Err(EvoConfigError::NGoalsOutOfRange(4))
        ));
        assert!(EvoConfig { initial_signals: 0, ..ok.clone() }.validate().is_err());
        assert!(EvoConfig { burn_in: 0, ..ok.clone() }.validate().is_err());
        assert!(EvoConfig { test_len: 0, ..ok.clone() }.validate().is_err());
        assert!(matches!(
            EvoConfig { burn_in: 10, test_len: 11, ..ok.clone() }.validate(),
            Err(EvoConfigError::TestLongerThanBurnIn { test_len: 11, burn_in: 10 })
        ));
        assert!(EvoConfig { max_rounds: 0, ..ok }.validate().is_err());
    }

    fn tiny_cfg() -> EvoConfig {
        EvoConfig {
            n_goals: 3,
            initial_signals: 3,
            burn_in: 400,
            test_len: 200,
            mutations_per_round: 2,
            increment_mode: IncrementMode::Additive,
            max_rounds: 7,
            master_seed: 5,
        }
    }

    fn tiny_run(cfg: &EvoConfig) -> EvolutionRun {
        run(cfg, &EnvConfig::default(), &LearnerConfig::default(), &ObsScheme::default(), |_, _| {})
            .unwrap()
    }

    #[test]
    fn tiny_run_converges_with_auditable_bookkeeping() {
        let cfg = tiny_cfg();
        let out = tiny_run(&cfg);
        // Population arithmetic: 3 initial + 2 + 2 + 1 mutants fills the
        // 8-signal pool; one strike per goal per round reaches a single
        // survivor in exactly 7 rounds.
        assert_eq!(out.records.len(), 7);
        assert!(out.matrix.is_converged());
        assert_eq!(out.matrix.registry().len(), 8);
        let winners = out.matrix.winners().unwrap();
        assert_eq!(winners.len(), 3);

        // Replay the records against a fresh matrix and audit every strike:
        // the struck fitness is the active minimum, tie sets lie in the
        // argmin set, and additions never resurrect a struck signal.
        let init = out.matrix.registry()[..cfg.initial_signals].to_vec();
        let mut m = PopulationMatrix::new(cfg.goals(), &init);
        for (i, rec) in out.records.iter().enumerate() {
            assert_eq!(rec.round, i + 1);
            assert_eq!(rec.checkpoint, cfg.burn_in * (i as u64 + 2));
            let union = m.union_active();
            let score_ids: Vec<String> = rec.scores.iter().map(|(id, _)| id.clone()).collect();
            assert_eq!(score_ids, union, "round {} scored exactly the active union", rec.round);
            let lookup: BTreeMap<&str, GoalScores> =
                rec.scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();
            for goal in cfg.goals() {
                let active = m.active(*goal).to_vec();
                match rec.removed.iter().find(|(g, _, _)| g == goal) {
                    Some((_, id, fit)) => {
                        let min = active
                            .iter()
                            .map(|a| goal_scores_fitness(&lookup[a.as_str()], *goal))
                            .fold(f64::INFINITY, f64::min);
                        assert_eq!(*fit, min, "round {} {goal} struck the minimum", rec.round);
                        assert_eq!(goal_scores_fitness(&lookup[id.as_str()], *goal), min);
                        for tie in rec.ties.iter().filter(|t| t.goal == *goal) {
                            assert_eq!(tie.chosen, *id);
                            for t in &tie.tied {
                                assert_eq!(goal_scores_fitness(&lookup[t.as_str()], *goal), min);
                            }
                        }
                        m.strike(*goal, id, rec.round, *fit);
                    }
                    None => assert_eq!(active.len(), 1, "only a settled lane skips its strike"),
                }
            }
            m.inject(&rec.added).unwrap();
        }
        assert_eq!(m, out.matrix);
    }

    #[test]
    fn runs_are_deterministic_across_invocations() {
        let cfg = EvoConfig { max_rounds: 3, ..tiny_cfg() };
        let a = tiny_run(&cfg);
        let b = tiny_run(&cfg);
        assert_eq!(a.records, b.records);
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn single_signal_run_converges_after_one_round() {
        let cfg = EvoConfig {
            initial_signals: 1,
            mutations_per_round: 0,
            ..tiny_cfg()
        };
        let out = tiny_run(&cfg);
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].removed.is_empty());
        let sole = out.matrix.registry()[0].clone();
        let winners = out.matrix.winners().unwrap();
        assert!(winners.iter().all(|(_, id)| *id == sole));
    }

    #[test]
    fn doubling_mode_doubles_the_checkpoints() {
        let cfg = EvoConfig {
            increment_mode: IncrementMode::Doubling,
            initial_signals: 4,
            max_rounds: 3,
            mutations_per_round: 0,
            ..tiny_cfg()
        };
        let out = tiny_run(&cfg);
        let cps: Vec<u64> = out.records.iter().map(|r| r.checkpoint).collect();
        assert_eq!(cps, [800, 1600, 3200]);
    }

    #[test]
    fn round_callback_sees_every_record_in_order() {
        let cfg = EvoConfig { max_rounds: 2, ..tiny_cfg() };
        let mut seen = Vec::new();
        let out = run(
            &cfg,
            &EnvConfig::default(),
            &LearnerConfig::default(),
            &ObsScheme::default(),
            |m, rec| seen.push((m.union_active(), rec.clone())),
        )
        .unwrap();
        assert_eq!(seen.len(), out.records.len());
        for (s, rec) in seen.iter().zip(&out.records) {
            assert_eq!(&s.1, rec);
        }
        assert_eq!(seen.last().unwrap().0, out.matrix.union_active());
    }

    #[test]
    fn scripted_replay_reproduces_a_recorded_run() {
        let cfg = tiny_cfg();
        let out = tiny_run(&cfg);
        let entries: Vec<TableEntry> = out
            .records
            .iter()
            .flat_map(|rec| {
                rec.scores.iter().map(|(id, s)| TableEntry {
                    checkpoint: rec.checkpoint,
                    id: id.clone(),
                    scores: *s,
                })
            })
            .collect();
        let table = GoalTable { test_len: cfg.test_len, entries, averages: Vec::new() };
        let script = DrawScript {
            init: out.matrix.registry()[..cfg.initial_signals].to_vec(),
            adds: out.records.iter().map(|r| (r.round, r.added.clone())).collect(),
            ties: out
                .records
                .iter()
                .flat_map(|r| r.ties.iter().map(|t| (t.goal, t.round, t.chosen.clone())))
                .collect(),
        };
        let replay =
            replay_elimination(&table, cfg.goals(), ReplayPolicy::Scripted(script)).unwrap();
        assert_eq!(replay.rounds.len(), out.records.len());
        for (rr, rec) in replay.rounds.iter().zip(&out.records) {
            assert_eq!(rr.round, rec.round);
            assert_eq!(rr.checkpoint, rec.checkpoint);
            assert_eq!(rr.removed, rec.removed);
            assert_eq!(rr.ties, rec.ties);
            assert_eq!(rr.added, rec.added);
        }
        assert_eq!(replay.matrix, out.matrix);
    }

    #[test]
    fn randomized_replay_is_seed_deterministic() {
        // Scores for every id at every checkpoint, so whichever way the
        // round-1 tie falls the later lookups succeed.
        let mut entries = Vec::new();
        for cp in [100, 200, 300] {
            entries.push(entry(cp, "000", 3, 0, 10.0));
            entries.push(entry(cp, "001", 3, 0, 10.0));
            entries.push(entry(cp, "011", 5, 0, 10.0));
            entries.push(entry(cp, "010", 4, 0, 10.0));
        }
        let table = table_of(entries);
        let policy = |seed| ReplayPolicy::Randomized {
            init: ids(&["000", "001", "011"]),
            pool: ids(&["000", "001", "010", "011"]),
            forced: vec![],
            adds_per_round: 1,
            seed,
        };
        let a = replay_elimination(&table, &[GoalFn::Winning], policy(9)).unwrap();
        let b = replay_elimination(&table, &[GoalFn::Winning], policy(9)).unwrap();
        assert_eq!(a, b);
        // Round 1 ties 000 with 001 and adds the only unseen pool signal;
        // the lane converges within the three checkpoints.
        assert!(a.rounds[0].ties[0].tied == ids(&["000", "001"]));
        assert_eq!(a.rounds[0].added, ids(&["010"]));
        assert!(a.matrix.is_converged());
    }

    #[test]
    fn forced_additions_enter_on_their_round() {
        let entries = vec![
            entry(100, "000", 3, 0, 10.0),
            entry(100, "001", 4, 0, 10.0),
            entry(200, "001", 1, 0, 10.0),
            entry(200, "b100", 6, 0, 10.0),
        ];
        let table = table_of(entries);
        let out = replay_elimination(
            &table,
            &[GoalFn::Winning],
            ReplayPolicy::Randomized {
                init: ids(&["000", "001"]),
                pool: vec![],
                forced: vec![(1, "b100".into())],
                adds_per_round: 1,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(out.rounds[0].added, ids(&["b100"]));
        assert_eq!(out.matrix.winners().unwrap(), vec![(GoalFn::Winning, "b100".to_string())]);
    }

    #[test]
    fn replay_rejects_gaps_and_corrupt_scripts() {
        let goals = [GoalFn::Winning];
        // Missing score for an active signal.
        let table = table_of(vec![entry(100, "000", 3, 0, 10.0)]);
        let script = DrawScript { init: ids(&["000", "001"]), adds: vec![], ties: vec![] };
        assert_eq!(
            replay_elimination(&table, &goals, ReplayPolicy::Scripted(script)).unwrap_err(),
            ReplayError::MissingEntry { checkpoint: 100, id: "001".into() }
        );
        // A tie with no recorded draw.
        let tied = table_of(vec![entry(100, "000", 3, 0, 10.0), entry(100, "001", 3, 0, 10.0)]);
        let script = DrawScript { init: ids(&["000", "001"]), adds: vec![], ties: vec![] };
        assert_eq!(
            replay_elimination(&tied, &goals, ReplayPolicy::Scripted(script)).unwrap_err(),
            ReplayError::MissingDraw { goal: GoalFn::Winning, round: 1 }
        );
        // A recorded draw outside the tied set.
        let uneven = table_of(vec![
            entry(100, "000", 3, 0, 10.0),
            entry(100, "001", 3, 0, 10.0),
            entry(100, "011", 9, 0, 10.0),
        ]);
        let script = DrawScript {
            init: ids(&["000", "001", "011"]),
            adds: vec![],
            ties: vec![(GoalFn::Winning, 1, "011".into())],
        };
        assert_eq!(
            replay_elimination(&uneven, &goals, ReplayPolicy::Scripted(script)).unwrap_err(),
            ReplayError::DrawOutsideTie { goal: GoalFn::Winning, round: 1, chosen: "011".into() }
        );
        // A scripted addition that resurrects a struck signal.
        let two = table_of(vec![
            entry(100, "000", 1, 0, 10.0),
            entry(100, "001", 3, 0, 10.0),
            entry(200, "000", 1, 0, 10.0),
            entry(200, "001", 3, 0, 10.0),
        ]);
        let script = DrawScript {
            init: ids(&["000", "001"]),
            adds: vec![(1, ids(&["000"]))],
            ties: vec![],
        };
        let err =
            replay_elimination(&two, &goals, ReplayPolicy::Scripted(script)).unwrap_err();
        assert_eq!(err, ReplayError::Reentry(ReentryError { goal: GoalFn::Winning, id: "000".into() }));
        // An empty table cannot seed any rounds.
        assert_eq!(
            replay_elimination(
                &table_of(vec![]),
                &goals,
                ReplayPolicy::Scripted(DrawScript { init: ids(&["000"]), adds: vec![], ties: vec![] })
            )
            .unwrap_err(),
            ReplayError::EmptyTable
        );
    }
}
