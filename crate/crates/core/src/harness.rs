//! Command entry points behind the CLI: run selection, run the exhaustive
//! grid, run baselines, and replay recorded eliminations.
//!
//! Each command is a plain function over a validated [`RunConfig`] (or
//! input file paths, for replay) returning a structured output the CLI
//! prints. All file writing happens here; the history file is appended
//! round by round while selection runs, so an aborted run still leaves
//! every finished round on disk.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig, RunMode};
use crate::env::{Env, ObsScheme};
use crate::evolution::{
    self, canonical_sort, replay_elimination, EvolutionError, EvolutionRun, ReplayError,
    ReplayOutcome, ReplayPolicy, RoundRecord,
};
use crate::formats::{
    emit_history_round, emit_report, expect_mismatches, parse_draws, parse_expect, parse_report,
    CurveFile, ParseError,
};
use crate::goals::{goal_table, GoalFn, GoalTable, GoalTableError, SignalSeries};
use crate::learner::Learner;
use crate::rng;
use crate::signals::RewardSignal;

/// Anything that can stop a command.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    ParseAt {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Table(#[from] GoalTableError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn parse_at(path: &Path) -> impl FnOnce(ParseError) -> HarnessError + '_ {
    move |source| HarnessError::ParseAt { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    fs::write(path, content).map_err(io_at(path))
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(io_at(path))
}

/// A worker pool sized by the config's parallelism key (0 = all cores).
fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

// --- evolve ---------------------------------------------------------------

/// Files and results of one selection run.
#[derive(Debug)]
pub struct EvolveOutput {
    pub history_path: PathBuf,
    /// Won, lost, and co-op curves, in that order.
    pub curve_paths: [PathBuf; 3],
    /// One winner per goal once converged; empty if the round cap hit first.
    pub winners: Vec<(GoalFn, String)>,
    pub run: EvolutionRun,
}

/// Run selection end to end: train/test/eliminate/mutate until one signal
/// per goal survives, appending the round history as rounds finish, then
/// write the three fitness curves.
pub fn cmd_evolve(
    cfg: &RunConfig,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> Result<EvolveOutput, HarnessError> {
    cfg.require_mode(RunMode::Evolve)?;
    let mut evo = cfg.evolution.clone();
    if let Some(seed) = seed_override {
        evo.master_seed = seed;
    }
    let out_dir = out_override.unwrap_or(&cfg.output.dir);
    fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;

    let history_path = out_dir.join("history");
    let mut history = File::create(&history_path).map_err(io_at(&history_path))?;
    history.write_all(b"# history v1\n").map_err(io_at(&history_path))?;
    let mut history_err: Option<std::io::Error> = None;

    let pool = thread_pool(cfg.parallelism)?;
    let scheme = ObsScheme::default();
    let run = pool.install(|| {
        evolution::run(&evo, &cfg.env, &cfg.learner, &scheme, |_, record| {
            if history_err.is_none() {
                let block = emit_history_round(record);
                if let Err(e) =
                    history.write_all(block.as_bytes()).and_then(|_| history.flush())
                {
                    history_err = Some(e);
                }
            }
        })
    })?;
    if let Some(source) = history_err {
        return Err(HarnessError::Io { path: history_path, source });
    }

    let mut columns = run.matrix.registry().to_vec();
    canonical_sort(&mut columns);
    let curves = curves_from_records(&columns, &run.records);
    let names = ["win.dat", "lose.dat", "coop.dat"];
    let mut curve_paths = [PathBuf::new(), PathBuf::new(), PathBuf::new()];
    for (i, (curve, name)) in curves.iter().zip(names).enumerate() {
        let path = out_dir.join(name);
        write_file(&path, &curve.emit())?;
        curve_paths[i] = path;
    }

    let winners = run.matrix.winners().unwrap_or_default();
    Ok(EvolveOutput { history_path, curve_paths, winners, run })
}

/// Build the won/lost/co-op curves from round records: one column per
/// signal, one row per round checkpoint, `NaN` where a signal was not
/// tested that round.
fn curves_from_records(columns: &[String], records: &[RoundRecord]) -> [CurveFile; 3] {
    let mut curves = [(); 3].map(|_| CurveFile { ids: columns.to_vec(), rows: Vec::new() });
    for record in records {
        let values: Vec<[f64; 3]> = columns
            .iter()
            .map(|id| match record.scores.iter().find(|(sid, _)| sid == id) {
                Some((_, s)) => [s.won as f64, s.lost as f64, s.coop],
                None => [f64::NAN; 3],
            })
            .collect();
        for (k, curve) in curves.iter_mut().enumerate() {
            curve.rows.push((record.checkpoint, values.iter().map(|v| v[k]).collect()));
        }
    }
    curves
}

// --- grid and baseline ----------------------------------------------------

/// A written score report and its in-memory table.
#[derive(Debug)]
pub struct ReportOutput {
    pub report_path: PathBuf,
    pub table: GoalTable,
}

/// Train every grid signal from step 0 with no elimination and score all
/// of them at every checkpoint of the full budget.
pub fn cmd_grid(cfg: &RunConfig) -> Result<ReportOutput, HarnessError> {
    cfg.require_mode(RunMode::Grid)?;
    write_report(cfg, &cfg.signals.grid, "grid.report")
}

/// Train and score only the event-reward signals and the untrained random
/// baseline, under the same budget and checkpoints as the grid.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<ReportOutput, HarnessError> {
    cfg.require_mode(RunMode::Baseline)?;
    write_report(cfg, &cfg.signals.baseline, "baseline.report")
}

fn write_report(
    cfg: &RunConfig,
    ids: &[String],
    name: &str,
) -> Result<ReportOutput, HarnessError> {
    let table = score_table(cfg, ids)?;
    fs::create_dir_all(&cfg.output.dir).map_err(io_at(&cfg.output.dir))?;
    let report_path = cfg.output.dir.join(name);
    write_file(&report_path, &emit_report(&table))?;
    Ok(ReportOutput { report_path, table })
}

/// The grid/baseline scoring engine: per signal, train continuously and
/// test at every checkpoint `k * burn_in` for `k` in `2..=max_rounds + 2`
/// (the same span a full selection run can reach, plus the one checkpoint
/// after it).
pub fn score_table(cfg: &RunConfig, ids: &[String]) -> Result<GoalTable, HarnessError> {
    let master = cfg.evolution.master_seed;
    let checkpoints: Vec<u64> = (2..=cfg.evolution.max_rounds as u64 + 2)
        .map(|k| k * cfg.evolution.burn_in)
        .collect();
    let pool = thread_pool(cfg.parallelism)?;
    let scheme = ObsScheme::default();
    let series: Result<Vec<SignalSeries>, EvolutionError> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let signal = RewardSignal::from_id(id).expect("ids validated with the config");
                let mut learner = Learner::new(
                    &cfg.learner,
                    &cfg.env,
                    &scheme,
                    rng::derive_seed(master, &format!("learner/{id}")),
                )?;
                let mut env =
                    Env::new(&cfg.env, rng::derive_seed(master, &format!("env/{id}")))?;
                let mut tests = Vec::new();
                for &cp in &checkpoints {
                    if signal.is_learnable() {
                        let need = cp.saturating_sub(learner.steps_trained());
                        learner.train_steps(&mut env, &signal, need);
                    }
                    let mut test_env = Env::new(
                        &cfg.env,
                        rng::derive_seed(master, &format!("test-env/{id}/{cp}")),
                    )?;
                    let mut test_rng = rng::stream(master, &format!("test/{id}/{cp}"));
                    tests.push((
                        cp,
                        learner.test_run(&mut test_env, cfg.evolution.test_len, &mut test_rng),
                    ));
                }
                Ok(SignalSeries { id: id.clone(), tests })
            })
            .collect()
    });
    Ok(goal_table(cfg.evolution.test_len, &series?)?)
}

// --- replay ---------------------------------------------------------------

/// A replayed elimination: the printable progression, any mismatches
/// against the expectation file, and the raw outcome.
#[derive(Debug)]
pub struct ReplayOutput {
    pub printout: String,
    /// Empty when no expectation was given or it matched fully.
    pub mismatches: Vec<String>,
    pub outcome: ReplayOutcome,
}

/// Replay recorded eliminations from a score report and a draws file,
/// optionally diffing the result against an expectation file.
pub fn cmd_replay(
    fitness: &Path,
    draws: &Path,
    expect: Option<&Path>,
) -> Result<ReplayOutput, HarnessError> {
    let table = parse_report(&read_file(fitness)?).map_err(parse_at(fitness))?;
    let script = parse_draws(&read_file(draws)?).map_err(parse_at(draws))?;
    let expectation = match expect {
        Some(path) => Some(parse_expect(&read_file(path)?).map_err(parse_at(path))?),
        None => None,
    };

    let outcome = replay_elimination(&table, &GoalFn::ALL, ReplayPolicy::Scripted(script))?;
    let printout = format_progression(&outcome);
    let mismatches =
        expectation.map(|exp| expect_mismatches(&exp, &outcome)).unwrap_or_default();
    Ok(ReplayOutput { printout, mismatches, outcome })
}

/// Render a replay round by round: strikes, draws, additions, and the
/// surviving lists.
fn format_progression(outcome: &ReplayOutcome) -> String {
    let mut out = String::new();
    for r in &outcome.rounds {
        out.push_str(&format!("round {} checkpoint {}\n", r.round, r.checkpoint));
        for (goal, id, fitness) in &r.removed {
            let active = r
                .active_after
                .iter()
                .find(|(g, _)| g == goal)
                .map(|(_, ids)| ids.join(" "))
                .unwrap_or_default();
            out.push_str(&format!("  {goal}: struck {id} (fitness {fitness}); active {active}\n"));
        }
        for t in &r.ties {
            out.push_str(&format!("  tie {}: {} -> {}\n", t.goal, t.tied.join(" "), t.chosen));
        }
        if !r.added.is_empty() {
            out.push_str(&format!("  added {}\n", r.added.join(" ")));
        }
    }
    match outcome.matrix.winners() {
        Some(winners) => {
            let parts: Vec<String> =
                winners.iter().map(|(g, id)| format!("{g}={id}")).collect();
            out.push_str(&format!("winners: {}\n", parts.join(" ")));
        }
        None => out.push_str("no convergence: some goal still holds several signals\n"),
    }
    out
}
