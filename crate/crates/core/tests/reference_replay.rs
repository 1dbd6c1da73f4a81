//! The bundled reference run: a full score table for all twelve signals
//! across eight checkpoints, the recorded draws of one selection run over
//! it, and the strike sequence that run must reproduce.

use rewardevo_core::evolution::{replay_elimination, ReplayPolicy};
use rewardevo_core::formats::{
    emit_draws, emit_expect, emit_report, expect_mismatches, parse_draws, parse_expect,
    parse_report,
};
use rewardevo_core::goals::GoalFn;

const SCORES: &str = include_str!("../fixtures/reference_scores.report");
const DRAWS: &str = include_str!("../fixtures/reference_run.draws");
const EXPECT: &str = include_str!("../fixtures/reference_run.expect");

#[test]
fn fixtures_parse_and_reemit_byte_identically() {
    assert_eq!(emit_report(&parse_report(SCORES).unwrap()), SCORES);
    assert_eq!(emit_draws(&parse_draws(DRAWS).unwrap()), DRAWS);
    assert_eq!(emit_expect(&parse_expect(EXPECT).unwrap()), EXPECT);
}

/// Every row of the reference table obeys the measurement identities: the
/// completed rallies almost fill the test window (the tail of the window is
/// the only part a rally can be missing from), and the averages block is
/// the rounded per-column mean of the eight checkpoints.
#[test]
fn score_table_is_internally_consistent() {
    let table = parse_report(SCORES).unwrap();
    assert_eq!(table.test_len, 100_000);
    let checkpoints: Vec<u64> = (2..=9).map(|m| m * 1_000_000).collect();
    assert_eq!(table.entries.len(), 12 * checkpoints.len());
    for e in &table.entries {
        let points = (e.scores.won + e.scores.lost) as f64;
        assert!(points > 0.0, "{} at {} scored no points", e.id, e.checkpoint);
        let covered = e.scores.coop * points / table.test_len as f64;
        assert!(
            (0.97..=1.01).contains(&covered),
            "{} at {}: rallies cover {covered:.4} of the window",
            e.id,
            e.checkpoint
        );
    }
    assert_eq!(table.averages.len(), 12);
    for (id, avg) in &table.averages {
        let rows: Vec<_> = table.entries.iter().filter(|e| e.id == *id).collect();
        assert_eq!(rows.len(), checkpoints.len());
        let n = rows.len() as f64;
        let won = rows.iter().map(|e| e.scores.won as f64).sum::<f64>() / n;
        let lost = rows.iter().map(|e| e.scores.lost as f64).sum::<f64>() / n;
        let coop = rows.iter().map(|e| e.scores.coop).sum::<f64>() / n;
        assert!((avg.won - won).abs() <= 0.5, "{id} won mean {won} vs {}", avg.won);
        assert!((avg.lost - lost).abs() <= 0.5, "{id} lost mean {lost} vs {}", avg.lost);
        assert!((avg.coop - coop).abs() <= 0.01, "{id} co-op mean {coop} vs {}", avg.coop);
    }
}

#[test]
fn scripted_replay_reproduces_the_recorded_outcome() {
    let table = parse_report(SCORES).unwrap();
    let script = parse_draws(DRAWS).unwrap();
    let expect = parse_expect(EXPECT).unwrap();
    let outcome =
        replay_elimination(&table, &GoalFn::ALL, ReplayPolicy::Scripted(script)).unwrap();

    assert_eq!(expect_mismatches(&expect, &outcome), Vec::<String>::new());
    assert_eq!(
        outcome.matrix.winners().unwrap(),
        vec![
            (GoalFn::Winning, "100".to_string()),
            (GoalFn::Losing, "000".to_string()),
            (GoalFn::Cooperation, "110".to_string()),
        ]
    );
    // Eight candidates, one strike per goal per round: converged in seven
    // rounds, leaving the last checkpoint untouched.
    assert_eq!(outcome.rounds.len(), 7);
    assert_eq!(outcome.rounds.last().unwrap().checkpoint, 8_000_000);
    // The three recorded winning-lane ties are the only draws that happened.
    let ties: Vec<_> = outcome.rounds.iter().flat_map(|r| r.ties.iter()).collect();
    assert_eq!(ties.len(), 3);
    assert!(ties.iter().all(|t| t.goal == GoalFn::Winning));
}

/// Insert the score-based signal into the winning lane and re-randomize
/// the run's draws: the lane now holds nine candidates and needs all eight
/// checkpoints, and in roughly 39% of draw universes the score-based
/// signal is struck before that final round.
#[test]
fn score_baseline_often_falls_before_the_final_round() {
    let table = parse_report(SCORES).unwrap();
    let regions: Vec<String> =
        ["000", "001", "010", "011", "100", "101", "110", "111"].map(String::from).into();
    let mut struck_early = 0u32;
    let trials = 10_000u32;
    for seed in 0..trials {
        let outcome = replay_elimination(
            &table,
            &[GoalFn::Winning],
            ReplayPolicy::Randomized {
                init: vec!["000".into(), "001".into(), "011".into()],
                pool: regions.clone(),
                forced: vec![(1, "b100".into())],
                adds_per_round: 2,
                seed: seed as u64,
            },
        )
        .unwrap();
        assert!(outcome.matrix.is_converged());
        let final_round = outcome.rounds.len();
        assert_eq!(final_round, 8, "nine candidates need eight rounds");
        if outcome
            .rounds
            .iter()
            .any(|r| r.round < final_round && r.removed.iter().any(|(_, id, _)| id == "b100"))
        {
            struck_early += 1;
        }
    }
    let frac = struck_early as f64 / trials as f64;
    assert!(
        (0.34..=0.44).contains(&frac),
        "score baseline struck before the final round in {frac:.3} of universes"
    );
}
