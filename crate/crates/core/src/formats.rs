//! Versioned, line-oriented text formats for everything the commands write
//! or read back: fitness curves, score reports, round histories, recorded
//! draws, and expected outcomes.
//!
//! Every format starts with a `# <kind> v1` header line so files are
//! self-identifying, and every parser reports the 1-based line number of
//! whatever it rejects. Emission and parsing are exact inverses: floats are
//! printed with Rust's shortest round-trip formatting, and absent values in
//! curves use the `nan` sentinel.
//!
//! The five formats:
//!
//! ```text
//! # curve v1                      # report v1
//! M 000 001 b100                  meta test_len 10000
//! 100000 3 1 nan                  row 100000 000 3 210 42.7
//! 150000 4 0 2                    avg 000 3.5 210.25 42.81
//!
//! # history v1                    # draws v1
//! round 1 checkpoint 100000       init 000 001 011
//! score 000 3 210 42.7            add 1 101 110
//! strike winning 000 3            tie winning 1 000
//! tie winning 000 from 000,011
//! add 101 110                     # expect v1
//!                                 strike 1 winning 000
//!                                 winners 100 000 110
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::evolution::{DrawScript, ReplayOutcome, RoundRecord, TieDraw};
use crate::goals::{GoalFn, GoalScores, GoalTable, MeanScores, TableEntry};

/// A line the parser could not accept.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: expected `{expected}` header, found `{found}`")]
    WrongHeader { line: usize, expected: &'static str, found: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn malformed(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Malformed { line, message: message.into() }
}

/// Print a float so it parses back bit-identically; absent values become
/// the `nan` sentinel.
fn fmt_f64(v: f64) -> String {
    if v.is_nan() { "nan".to_string() } else { format!("{v}") }
}

fn parse_f64(line: usize, tok: &str) -> Result<f64, ParseError> {
    tok.parse().map_err(|_| malformed(line, format!("`{tok}` is not a number")))
}

fn parse_u64(line: usize, tok: &str) -> Result<u64, ParseError> {
    tok.parse().map_err(|_| malformed(line, format!("`{tok}` is not a non-negative integer")))
}

fn parse_usize(line: usize, tok: &str) -> Result<usize, ParseError> {
    tok.parse().map_err(|_| malformed(line, format!("`{tok}` is not a non-negative integer")))
}

fn parse_goal(line: usize, tok: &str) -> Result<GoalFn, ParseError> {
    GoalFn::from_name(tok).ok_or_else(|| malformed(line, format!("`{tok}` is not a goal name")))
}

/// Non-empty lines with their 1-based numbers, after checking the header.
fn body_lines<'a>(text: &'a str, header: &'static str) -> Result<Vec<(usize, &'a str)>, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    match lines.find(|(_, l)| !l.trim().is_empty()) {
        Some((_, l)) if l == header => {}
        Some((n, l)) => {
            return Err(ParseError::WrongHeader { line: n, expected: header, found: l.to_string() })
        }
        None => return Err(ParseError::WrongHeader { line: 1, expected: header, found: String::new() }),
    }
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()).collect())
}

// --- curves ---------------------------------------------------------------

const CURVE_HEADER: &str = "# curve v1";

/// A fitness-over-budget table: one column per signal, one row per
/// checkpoint. A `NaN` cell means the signal was not tested there (struck
/// already, or not yet mutated in).
#[derive(Debug, Clone)]
pub struct CurveFile {
    /// Column signal ids, unique, in display order.
    pub ids: Vec<String>,
    /// `(checkpoint, one value per column)`, checkpoints strictly ascending.
    pub rows: Vec<(u64, Vec<f64>)>,
}

impl PartialEq for CurveFile {
    fn eq(&self, other: &CurveFile) -> bool {
        self.ids == other.ids
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.0 == b.0
                    && a.1.len() == b.1.len()
                    && a.1.iter().zip(&b.1).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))
            })
    }
}

impl CurveFile {
    /// Serialize to the curve format.
    pub fn emit(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\nM {}\n", self.ids.join(" "));
        for (cp, values) in &self.rows {
            let vals: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{cp} {}", vals.join(" ")).unwrap();
        }
        out
    }

    /// Parse the curve format, enforcing rectangular rows, unique columns,
    /// and strictly ascending checkpoints.
    pub fn parse(text: &str) -> Result<CurveFile, ParseError> {
        let lines = body_lines(text, CURVE_HEADER)?;
        let mut iter = lines.into_iter();
        let (n, first) = iter.next().ok_or_else(|| malformed(2, "missing `M <ids>` column line"))?;
        let mut toks = first.split_whitespace();
        if toks.next() != Some("M") {
            return Err(malformed(n, "expected `M <ids>` column line"));
        }
        let ids: Vec<String> = toks.map(str::to_string).collect();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(malformed(n, format!("duplicate column `{id}`")));
            }
        }
        let mut rows: Vec<(u64, Vec<f64>)> = Vec::new();
        for (n, line) in iter {
            let mut toks = line.split_whitespace();
            let cp = parse_u64(n, toks.next().expect("non-empty line has a token"))?;
            if let Some((prev, _)) = rows.last() {
                if cp <= *prev {
                    return Err(malformed(n, format!("checkpoint {cp} does not ascend past {prev}")));
                }
            }
            let values: Vec<f64> = toks.map(|t| parse_f64(n, t)).collect::<Result<_, _>>()?;
            if values.len() != ids.len() {
                return Err(malformed(
                    n,
                    format!("row has {} values for {} columns", values.len(), ids.len()),
                ));
            }
            rows.push((cp, values));
        }
        Ok(CurveFile { ids, rows })
    }
}

// --- reports --------------------------------------------------------------

const REPORT_HEADER: &str = "# report v1";

/// Serialize a score table to the report format.
pub fn emit_report(table: &GoalTable) -> String {
    let mut out = format!("{REPORT_HEADER}\nmeta test_len {}\n", table.test_len);
    for e in &table.entries {
        writeln!(
            out,
            "row {} {} {} {} {}",
            e.checkpoint,
            e.id,
            e.scores.won,
            e.scores.lost,
            fmt_f64(e.scores.coop)
        )
        .unwrap();
    }
    for (id, m) in &table.averages {
        writeln!(out, "avg {id} {} {} {}", fmt_f64(m.won), fmt_f64(m.lost), fmt_f64(m.coop))
            .unwrap();
    }
    out
}

/// Parse the report format back into a score table.
pub fn parse_report(text: &str) -> Result<GoalTable, ParseError> {
    let lines = body_lines(text, REPORT_HEADER)?;
    let mut test_len = None;
    let mut entries = Vec::new();
    let mut averages = Vec::new();
    for (n, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["meta", "test_len", v] => {
                if test_len.replace(parse_u64(n, v)?).is_some() {
                    return Err(malformed(n, "duplicate `meta test_len` line"));
                }
            }
            ["row", cp, id, won, lost, coop] => entries.push(TableEntry {
                checkpoint: parse_u64(n, cp)?,
                id: id.to_string(),
                scores: GoalScores {
                    won: parse_u64(n, won)?,
                    lost: parse_u64(n, lost)?,
                    coop: parse_f64(n, coop)?,
                },
            }),
            ["avg", id, won, lost, coop] => averages.push((
                id.to_string(),
                MeanScores {
                    won: parse_f64(n, won)?,
                    lost: parse_f64(n, lost)?,
                    coop: parse_f64(n, coop)?,
                },
            )),
            _ => return Err(malformed(n, format!("unrecognized report line `{line}`"))),
        }
    }
    let test_len =
        test_len.ok_or_else(|| malformed(2, "missing `meta test_len` line"))?;
    Ok(GoalTable { test_len, entries, averages })
}

// --- histories ------------------------------------------------------------

const HISTORY_HEADER: &str = "# history v1";

/// Serialize round records to the history format, one block per round.
pub fn emit_history(records: &[RoundRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in records {
        out.push_str(&emit_history_round(r));
    }
    out
}

/// One round's history block, as appended to the file while a run is live.
pub fn emit_history_round(r: &RoundRecord) -> String {
    let mut out = format!("round {} checkpoint {}\n", r.round, r.checkpoint);
    for (id, s) in &r.scores {
        writeln!(out, "score {id} {} {} {}", s.won, s.lost, fmt_f64(s.coop)).unwrap();
    }
    for (goal, id, fitness) in &r.removed {
        writeln!(out, "strike {goal} {id} {}", fmt_f64(*fitness)).unwrap();
    }
    for t in &r.ties {
        writeln!(out, "tie {} {} from {}", t.goal, t.chosen, t.tied.join(",")).unwrap();
    }
    if !r.added.is_empty() {
        writeln!(out, "add {}", r.added.join(" ")).unwrap();
    }
    out
}

/// Parse the history format back into round records.
pub fn parse_history(text: &str) -> Result<Vec<RoundRecord>, ParseError> {
    let lines = body_lines(text, HISTORY_HEADER)?;
    let mut records: Vec<RoundRecord> = Vec::new();
    for (n, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if let ["round", round, "checkpoint", cp] = toks.as_slice() {
            records.push(RoundRecord {
                round: parse_usize(n, round)?,
                checkpoint: parse_u64(n, cp)?,
                scores: Vec::new(),
                removed: Vec::new(),
                ties: Vec::new(),
                added: Vec::new(),
            });
            continue;
        }
        let cur = records
            .last_mut()
            .ok_or_else(|| malformed(n, "expected a `round` line before this one"))?;
        match toks.as_slice() {
            ["score", id, won, lost, coop] => cur.scores.push((
                id.to_string(),
                GoalScores {
                    won: parse_u64(n, won)?,
                    lost: parse_u64(n, lost)?,
                    coop: parse_f64(n, coop)?,
                },
            )),
            ["strike", goal, id, fitness] => cur.removed.push((
                parse_goal(n, goal)?,
                id.to_string(),
                parse_f64(n, fitness)?,
            )),
            ["tie", goal, chosen, "from", tied] => cur.ties.push(TieDraw {
                goal: parse_goal(n, goal)?,
                round: cur.round,
                tied: tied.split(',').map(str::to_string).collect(),
                chosen: chosen.to_string(),
            }),
            ["add", ids @ ..] if !ids.is_empty() => {
                cur.added.extend(ids.iter().map(|s| s.to_string()))
            }
            _ => return Err(malformed(n, format!("unrecognized history line `{line}`"))),
        }
    }
    Ok(records)
}

// --- recorded draws -------------------------------------------------------

const DRAWS_HEADER: &str = "# draws v1";

/// Serialize a draw script to the draws format.
pub fn emit_draws(script: &DrawScript) -> String {
    let mut out = format!("{DRAWS_HEADER}\ninit {}\n", script.init.join(" "));
    for (round, ids) in &script.adds {
        writeln!(out, "add {round} {}", ids.join(" ")).unwrap();
    }
    for (goal, round, chosen) in &script.ties {
        writeln!(out, "tie {goal} {round} {chosen}").unwrap();
    }
    out
}

/// Parse the draws format back into a draw script.
pub fn parse_draws(text: &str) -> Result<DrawScript, ParseError> {
    let lines = body_lines(text, DRAWS_HEADER)?;
    let mut init: Option<Vec<String>> = None;
    let mut adds = Vec::new();
    let mut ties = Vec::new();
    for (n, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["init", ids @ ..] => {
                let ids = ids.iter().map(|s| s.to_string()).collect();
                if init.replace(ids).is_some() {
                    return Err(malformed(n, "duplicate `init` line"));
                }
            }
            ["add", round, ids @ ..] => {
                adds.push((parse_usize(n, round)?, ids.iter().map(|s| s.to_string()).collect()))
            }
            ["tie", goal, round, chosen] => {
                ties.push((parse_goal(n, goal)?, parse_usize(n, round)?, chosen.to_string()))
            }
            _ => return Err(malformed(n, format!("unrecognized draws line `{line}`"))),
        }
    }
    let init = init.ok_or_else(|| malformed(2, "missing `init` line"))?;
    Ok(DrawScript { init, adds, ties })
}

// --- expected outcomes ----------------------------------------------------

const EXPECT_HEADER: &str = "# expect v1";

/// The strike sequence and final winners a replay is expected to produce.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExpectFile {
    /// `(round, goal, struck id)` in any order.
    pub strikes: Vec<(usize, GoalFn, String)>,
    /// Expected survivor per goal, in the replay's goal order; empty when
    /// the file makes no claim about winners.
    pub winners: Vec<String>,
}

/// Serialize an expectation to the expect format.
pub fn emit_expect(exp: &ExpectFile) -> String {
    let mut out = format!("{EXPECT_HEADER}\n");
    for (round, goal, id) in &exp.strikes {
        writeln!(out, "strike {round} {goal} {id}").unwrap();
    }
    if !exp.winners.is_empty() {
        writeln!(out, "winners {}", exp.winners.join(" ")).unwrap();
    }
    out
}

/// Parse the expect format.
pub fn parse_expect(text: &str) -> Result<ExpectFile, ParseError> {
    let lines = body_lines(text, EXPECT_HEADER)?;
    let mut exp = ExpectFile::default();
    for (n, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["strike", round, goal, id] => exp.strikes.push((
                parse_usize(n, round)?,
                parse_goal(n, goal)?,
                id.to_string(),
            )),
            ["winners", ids @ ..] if !ids.is_empty() => {
                if !exp.winners.is_empty() {
                    return Err(malformed(n, "duplicate `winners` line"));
                }
                exp.winners = ids.iter().map(|s| s.to_string()).collect();
            }
            _ => return Err(malformed(n, format!("unrecognized expect line `{line}`"))),
        }
    }
    Ok(exp)
}

/// Compare a replay against an expectation. Returns one human-readable line
/// per discrepancy; an empty result means the replay matched.
pub fn expect_mismatches(exp: &ExpectFile, outcome: &ReplayOutcome) -> Vec<String> {
    let mut diffs = Vec::new();
    let expected: BTreeMap<(usize, &str), &str> =
        exp.strikes.iter().map(|(r, g, id)| ((*r, g.name()), id.as_str())).collect();
    let got: BTreeMap<(usize, &str), &str> = outcome
        .rounds
        .iter()
        .flat_map(|rr| rr.removed.iter().map(|(g, id, _)| ((rr.round, g.name()), id.as_str())))
        .collect();
    for key in expected.keys().chain(got.keys()).collect::<std::collections::BTreeSet<_>>() {
        let (round, goal) = key;
        match (expected.get(key), got.get(key)) {
            (Some(e), Some(g)) if e != g => {
                diffs.push(format!("round {round} {goal}: struck {g}, expected {e}"))
            }
            (Some(e), None) => {
                diffs.push(format!("round {round} {goal}: expected strike {e}, none happened"))
            }
            (None, Some(g)) => {
                diffs.push(format!("round {round} {goal}: unexpected strike {g}"))
            }
            _ => {}
        }
    }
    if !exp.winners.is_empty() {
        match outcome.matrix.winners() {
            None => diffs.push("replay did not converge to one signal per goal".to_string()),
            Some(winners) => {
                if exp.winners.len() != winners.len() {
                    diffs.push(format!(
                        "winners line lists {} signals, replay has {} goals",
                        exp.winners.len(),
                        winners.len()
                    ));
                } else {
                    for ((goal, got), want) in winners.iter().zip(&exp.winners) {
                        if got != want {
                            diffs.push(format!("{goal} winner: {got}, expected {want}"));
                        }
                    }
                }
            }
        }
    }
    diffs
}
