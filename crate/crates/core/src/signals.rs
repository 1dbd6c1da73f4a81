//! Reward-signal genomes and the mutation archive.
//!
//! A reward signal maps one simulator transition to a reward bit. Four
//! kinds exist:
//!
//! - **Region bits** — the evolvable genome family: one bit per field strip
//!   (`a1 a2 a3`); the emitted reward is the bit of the strip containing the
//!   ball. Exactly 8 distinct genomes exist ("000" … "111").
//! - **Event baselines** — hand-coded comparators keyed to point events:
//!   `b100` pays on scoring, `b001` on conceding, `b010` on every step
//!   without a point.
//! - **Random-policy marker** — the no-learning baseline; its reward is
//!   always 0 and the harness runs it with a uniform-random policy.
//! - **Periodic tape** — a free-form bit tape indexed by step count modulo
//!   its period; the fully evolutionary mode, kept out of the default runs.
//!
//! The [`SignalArchive`] owns the uniqueness bookkeeping: every genome a run
//! ever draws is recorded, and mutation only ever returns unseen genomes.

use crate::env::{region_of, EnvConfig, EnvState, PointEvent, Region};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt;

/// Point-event trigger of an event-baseline signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Reward 1 exactly on steps where the agent scores ("b100").
    OnScore,
    /// Reward 1 on every step without a point event ("b010").
    PerStepNoScore,
    /// Reward 1 exactly on steps where the agent concedes ("b001").
    OnConcede,
}

/// A reward-signal genome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RewardSignal {
    /// One reward bit per field strip, in (a1, a2, a3) order.
    RegionBits { a1: bool, a2: bool, a3: bool },
    /// Reward keyed to a point event.
    EventBaseline(EventKind),
    /// The random-play baseline marker; never rewards, never learns.
    RandomPolicyMarker,
    /// Reward read from a repeating bit tape by step count.
    PeriodicTape { bits: Vec<bool> },
}

impl RewardSignal {
    /// The region-bits genome for a 3-bit index (`0b_a1_a2_a3`).
    pub fn region_from_index(i: u8) -> RewardSignal {
        RewardSignal::RegionBits {
            a1: i & 0b100 != 0,
            a2: i & 0b010 != 0,
            a3: i & 0b001 != 0,
        }
    }

    /// All 8 region-bits genomes in canonical id order.
    pub fn all_region_signals() -> Vec<RewardSignal> {
        (0..8).map(RewardSignal::region_from_index).collect()
    }

    /// Parse a canonical id back into a genome. Tape ids are digests and
    /// cannot be parsed.
    pub fn from_id(id: &str) -> Option<RewardSignal> {
        match id {
            "b100" => Some(RewardSignal::EventBaseline(EventKind::OnScore)),
            "b010" => Some(RewardSignal::EventBaseline(EventKind::PerStepNoScore)),
            "b001" => Some(RewardSignal::EventBaseline(EventKind::OnConcede)),
            "rand" => Some(RewardSignal::RandomPolicyMarker),
            _ => {
                let bits: Vec<bool> = id
                    .chars()
                    .map(|c| match c {
                        '0' => Some(false),
                        '1' => Some(true),
                        _ => None,
                    })
                    .collect::<Option<_>>()?;
                if bits.len() != 3 {
                    return None;
                }
                Some(RewardSignal::RegionBits { a1: bits[0], a2: bits[1], a3: bits[2] })
            }
        }
    }

    /// Canonical string id: region genomes print their bits in (a1, a2, a3)
    /// order, baselines use their `b…` labels, tapes hash their content.
    pub fn canonical_id(&self) -> String {
        match self {
            RewardSignal::RegionBits { a1, a2, a3 } => {
                format!("{}{}{}", u8::from(*a1), u8::from(*a2), u8::from(*a3))
            }
            RewardSignal::EventBaseline(EventKind::OnScore) => "b100".into(),
            RewardSignal::EventBaseline(EventKind::PerStepNoScore) => "b010".into(),
            RewardSignal::EventBaseline(EventKind::OnConcede) => "b001".into(),
            RewardSignal::RandomPolicyMarker => "rand".into(),
            RewardSignal::PeriodicTape { bits } => {
                let packed: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
                let digest = Sha256::digest(&packed);
                let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
                format!("t{hex}")
            }
        }
    }

    /// Whether this signal drives a learner (the random marker does not).
    pub fn is_learnable(&self) -> bool {
        !matches!(self, RewardSignal::RandomPolicyMarker)
    }

    /// The reward bit for one transition, as a float in {0.0, 1.0}.
    pub fn emit_reward(&self, cfg: &EnvConfig, _before: &EnvState, after: &EnvState) -> f64 {
        let bit = match self {
            RewardSignal::RegionBits { a1, a2, a3 } => match region_of(cfg, after) {
                Region::A1 => *a1,
                Region::A2 => *a2,
                Region::A3 => *a3,
            },
            RewardSignal::EventBaseline(EventKind::OnScore) => {
                after.last_event == PointEvent::AgentScored
            }
            RewardSignal::EventBaseline(EventKind::OnConcede) => {
                after.last_event == PointEvent::AgentConceded
            }
            RewardSignal::EventBaseline(EventKind::PerStepNoScore) => {
                after.last_event == PointEvent::None
            }
            RewardSignal::RandomPolicyMarker => false,
            RewardSignal::PeriodicTape { bits } => {
                bits[(after.step_count % bits.len() as u64) as usize]
            }
        };
        f64::from(u8::from(bit))
    }

    /// A tape genome with `flips` random positions inverted — the mutation
    /// operator of the fully evolutionary mode.
    pub fn mutated_tape(&self, flips: usize, rng: &mut ChaCha8Rng) -> Option<RewardSignal> {
        let RewardSignal::PeriodicTape { bits } = self else {
            return None;
        };
        let mut bits = bits.clone();
        for _ in 0..flips {
            let i = rng.random_range(0..bits.len());
            bits[i] = !bits[i];
        }
        Some(RewardSignal::PeriodicTape { bits })
    }
}

impl fmt::Display for RewardSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_id())
    }
}

/// The region-genome pool is finite; asking for more than it holds fails.
#[derive(Debug, thiserror::Error)]
#[error("requested {requested} unseen region signals but only {available} remain")]
pub struct PoolExhausted {
    pub requested: usize,
    pub available: usize,
}

/// Draw bookkeeping for genome uniqueness across a run.
///
/// `seen` only ever grows; every genome handed out — drawn, mutated, or
/// claimed by id — is recorded before it is returned.
pub struct SignalArchive {
    seen: BTreeSet<String>,
    rng: ChaCha8Rng,
}

impl SignalArchive {
    /// Fresh archive with a seeded draw stream.
    pub fn new(seed: u64) -> SignalArchive {
        SignalArchive { seen: BTreeSet::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Ids of every genome handed out so far.
    pub fn seen(&self) -> &BTreeSet<String> {
        &self.seen
    }

    /// Number of region-bits genomes not yet handed out.
    pub fn unseen_count(&self) -> usize {
        RewardSignal::all_region_signals()
            .iter()
            .filter(|s| !self.seen.contains(&s.canonical_id()))
            .count()
    }

    fn unseen_pool(&self) -> Vec<RewardSignal> {
        RewardSignal::all_region_signals()
            .into_iter()
            .filter(|s| !self.seen.contains(&s.canonical_id()))
            .collect()
    }

    fn draw_unseen(&mut self, count: usize) -> Vec<RewardSignal> {
        let mut pool = self.unseen_pool();
        let mut drawn = Vec::with_capacity(count);
        for _ in 0..count.min(pool.len()) {
            let i = self.rng.random_range(0..pool.len());
            let signal = pool.swap_remove(i);
            self.seen.insert(signal.canonical_id());
            drawn.push(signal);
        }
        drawn
    }

    /// Draw exactly `count` distinct unseen region genomes, uniformly
    /// without replacement. Fails when the pool cannot supply them.
    pub fn initial_population(&mut self, count: usize) -> Result<Vec<RewardSignal>, PoolExhausted> {
        let available = self.unseen_count();
        if count > available {
            return Err(PoolExhausted { requested: count, available });
        }
        Ok(self.draw_unseen(count))
    }

    /// Draw up to `p` distinct unseen region genomes. A short (possibly
    /// empty) return means the pool is exhausted and the caller should stop
    /// mutating — the run is in its elimination-only phase.
    pub fn mutate(&mut self, p: usize) -> Vec<RewardSignal> {
        self.draw_unseen(p)
    }

    /// Mark a specific genome as seen and return it — the scripted
    /// counterpart of [`SignalArchive::mutate`] used when replaying a
    /// recorded run. Claiming an already-seen id fails.
    pub fn claim(&mut self, id: &str) -> Result<RewardSignal, ClaimError> {
        let signal = RewardSignal::from_id(id).ok_or_else(|| ClaimError::UnknownId(id.into()))?;
        if !self.seen.insert(signal.canonical_id()) {
            return Err(ClaimError::AlreadySeen(id.into()));
        }
        Ok(signal)
    }
}

/// Rejection reasons for [`SignalArchive::claim`].
#[derive(Debug, thiserror::Error)]
pub enum ClaimError {
    #[error("unknown signal id {0:?}")]
    UnknownId(String),
    #[error("signal {0:?} was already drawn in this run")]
    AlreadySeen(String),
}
