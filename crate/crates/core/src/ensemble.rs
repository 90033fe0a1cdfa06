//! Greedy ensemble of hiring policies.
//!
//! Every member decides on every offer. Acceptances are logged as overall
//! delays `d + w` into a per-member window. Only the active member's decision
//! is committed. At each evaluation instant (stream start + k * period) the
//! member with the lowest window average becomes active and all windows are
//! cleared.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policies::{Decision, PolicyKey, PolicyState};
use crate::world::BlockProfile;
use crate::{Seconds, Timestamp};

/// Thirty minutes.
pub const DEFAULT_PERIOD: Seconds = 1800;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("offer at {got} precedes previous offer at {previous}")]
    TimeRegression { previous: Timestamp, got: Timestamp },
    #[error("evaluation at {now} before it is due at {due}")]
    EarlyEvaluation { now: Timestamp, due: Timestamp },
    #[error("evaluation period must be positive, got {0}")]
    Period(Seconds),
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("duplicate ensemble member {0}")]
    DuplicateMember(PolicyKey),
    #[error("{0} is not an ensemble member")]
    UnknownMember(PolicyKey),
}

/// How a member measures the waiting delay of its acceptances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitingMode {
    /// From the member's own previous (passive) acceptance.
    #[default]
    PerAlgorithm,
    /// From the previous committed acceptance.
    Shared,
}

impl WaitingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WaitingMode::PerAlgorithm => "per_algorithm",
            WaitingMode::Shared => "shared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub period: Seconds,
    pub waiting_mode: WaitingMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            period: DEFAULT_PERIOD,
            waiting_mode: WaitingMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Member {
    key: PolicyKey,
    policy: PolicyState,
    window: Vec<Seconds>,
    last_accept: Timestamp,
}

impl Member {
    fn window_sum(&self) -> i128 {
        self.window.iter().map(|&x| x as i128).sum()
    }

    fn window_average(&self) -> Option<f64> {
        if self.window.is_empty() {
            None
        } else {
            Some(self.window_sum() as f64 / self.window.len() as f64)
        }
    }
}

/// A change of active member at an evaluation instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time: Timestamp,
    pub from: PolicyKey,
    pub to: PolicyKey,
    /// Window average overall delay per member, seconds.
    pub averages: Vec<(PolicyKey, Option<f64>)>,
}

/// Result of feeding one offer to the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct OfferOutcome {
    /// The active member's committed decision.
    pub decision: Decision,
    /// Member that was active for this offer.
    pub active: PolicyKey,
    /// Overall delay logged by each member that accepted, in member order.
    pub passive: Vec<(PolicyKey, Option<Seconds>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<Member>,
    active: usize,
    cfg: EnsembleConfig,
    start: Timestamp,
    last_eval: Timestamp,
    committed_last_accept: Timestamp,
    last_offer: Option<Timestamp>,
    switches: Vec<SwitchEvent>,
}

impl Ensemble {
    /// Builds an ensemble whose initial active member is drawn uniformly from
    /// a generator seeded with `seed`.
    pub fn new(
        members: Vec<(PolicyKey, PolicyState)>,
        cfg: EnsembleConfig,
        start: Timestamp,
        seed: u64,
    ) -> Result<Self, StreamError> {
        let n = members.len();
        if n == 0 {
            return Err(StreamError::NoMembers);
        }
        let active = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
        let key = members[active].0;
        Self::with_active(members, key, cfg, start)
    }

    /// Builds an ensemble with a chosen initial active member.
    pub fn with_active(
        members: Vec<(PolicyKey, PolicyState)>,
        active: PolicyKey,
        cfg: EnsembleConfig,
        start: Timestamp,
    ) -> Result<Self, StreamError> {
        if members.is_empty() {
            return Err(StreamError::NoMembers);
        }
        if cfg.period <= 0 {
            return Err(StreamError::Period(cfg.period));
        }
        for (i, (k, _)) in members.iter().enumerate() {
            if members[..i].iter().any(|(other, _)| other == k) {
                return Err(StreamError::DuplicateMember(*k));
            }
        }
        let active = members
            .iter()
            .position(|(k, _)| *k == active)
            .ok_or(StreamError::UnknownMember(active))?;
        Ok(Ensemble {
            members: members
                .into_iter()
                .map(|(key, policy)| Member {
                    key,
                    policy,
                    window: Vec::new(),
                    last_accept: start,
                })
                .collect(),
            active,
            cfg,
            start,
            last_eval: start,
            committed_last_accept: start,
            last_offer: None,
            switches: Vec::new(),
        })
    }

    /// The four baseline policies for a block, in tie-break order.
    pub fn standard(
        profile: &BlockProfile,
        cfg: EnsembleConfig,
        start: Timestamp,
        seed: u64,
    ) -> Result<Self, StreamError> {
        let members = PolicyKey::ALL
            .iter()
            .map(|k| (*k, k.fresh(profile)))
            .collect();
        Self::new(members, cfg, start, seed)
    }

    pub fn active(&self) -> PolicyKey {
        self.members[self.active].key
    }

    pub fn members(&self) -> impl Iterator<Item = PolicyKey> + '_ {
        self.members.iter().map(|m| m.key)
    }

    pub fn policy(&self, key: PolicyKey) -> Option<&PolicyState> {
        self.members
            .iter()
            .find(|m| m.key == key)
            .map(|m| &m.policy)
    }

    pub fn window(&self, key: PolicyKey) -> Option<&[Seconds]> {
        self.members
            .iter()
            .find(|m| m.key == key)
            .map(|m| m.window.as_slice())
    }

    pub fn last_eval(&self) -> Timestamp {
        self.last_eval
    }

    pub fn committed_last_accept(&self) -> Timestamp {
        self.committed_last_accept
    }

    pub fn switches(&self) -> &[SwitchEvent] {
        &self.switches
    }

    pub fn config(&self) -> EnsembleConfig {
        self.cfg
    }

    /// Next evaluation instant.
    pub fn next_eval(&self) -> Timestamp {
        self.last_eval + self.cfg.period
    }

    /// Runs every member on an offer at `time` with delivery delay `d`.
    ///
    /// Evaluation boundaries passed since the previous offer collapse into a
    /// single evaluation at the latest of them, run before the offer.
    pub fn on_offer(&mut self, time: Timestamp, d: Seconds) -> Result<OfferOutcome, StreamError> {
        if let Some(previous) = self.last_offer {
            if time < previous {
                return Err(StreamError::TimeRegression {
                    previous,
                    got: time,
                });
            }
        }
        self.last_offer = Some(time);

        if time >= self.next_eval() {
            let periods = (time - self.last_eval) / self.cfg.period;
            self.evaluate(self.last_eval + periods * self.cfg.period)?;
        }

        let active = self.active;
        let committed = self.committed_last_accept;
        let mut passive = Vec::with_capacity(self.members.len());
        let mut decision = Decision::Reject;
        for (i, m) in self.members.iter_mut().enumerate() {
            let verdict = m.policy.decide(d);
            let mut logged = None;
            if verdict.is_accept() {
                let w = match self.cfg.waiting_mode {
                    WaitingMode::PerAlgorithm => time - m.last_accept,
                    WaitingMode::Shared => time - committed,
                };
                m.window.push(d + w);
                m.last_accept = time;
                logged = Some(d + w);
            }
            if i == active {
                decision = verdict;
            }
            passive.push((m.key, logged));
        }
        if decision.is_accept() {
            self.committed_last_accept = time;
        }
        Ok(OfferOutcome {
            decision,
            active: self.members[active].key,
            passive,
        })
    }

    /// Appends an overall delay to a member's window without running its
    /// policy. Used to replay externally recorded performance.
    pub fn push_record(&mut self, key: PolicyKey, overall: Seconds) -> Result<(), StreamError> {
        let m = self
            .members
            .iter_mut()
            .find(|m| m.key == key)
            .ok_or(StreamError::UnknownMember(key))?;
        m.window.push(overall);
        Ok(())
    }

    /// Activates the member with the lowest window average and clears all
    /// windows. Members with empty windows are not candidates; the incumbent
    /// keeps its place on ties, otherwise the earliest member wins.
    pub fn evaluate(&mut self, now: Timestamp) -> Result<Option<SwitchEvent>, StreamError> {
        let due = self.next_eval();
        if now < due {
            return Err(StreamError::EarlyEvaluation { now, due });
        }

        // Exact comparison of sum_a / n_a against sum_b / n_b.
        let cmp = |a: &Member, b: &Member| {
            (a.window_sum() * b.window.len() as i128)
                .cmp(&(b.window_sum() * a.window.len() as i128))
        };
        let mut best: Option<usize> = None;
        for (i, m) in self.members.iter().enumerate() {
            if m.window.is_empty() {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => match cmp(m, &self.members[b]) {
                    Ordering::Less => Some(i),
                    Ordering::Equal if i == self.active => Some(i),
                    _ => Some(b),
                },
            };
        }

        let mut event = None;
        if let Some(b) = best {
            if b != self.active {
                let e = SwitchEvent {
                    time: now,
                    from: self.members[self.active].key,
                    to: self.members[b].key,
                    averages: self
                        .members
                        .iter()
                        .map(|m| (m.key, m.window_average()))
                        .collect(),
                };
                log::trace!("switch at {now}: {} -> {}", e.from, e.to);
                self.switches.push(e.clone());
                event = Some(e);
                self.active = b;
            }
        }
        for m in &mut self.members {
            m.window.clear();
        }
        self.last_eval = now;
        Ok(event)
    }
}
