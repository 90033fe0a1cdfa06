//! Replays block offer streams through a selector and aggregates delays.

mod output;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{
    Ensemble, EnsembleConfig, StreamError, SwitchEvent, WaitingMode, DEFAULT_PERIOD,
};
use crate::geocell::CellId;
use crate::policies::{Decision, PolicyKey, PolicyState};
use crate::world::{BlockProfile, FerryOffer, TrafficClass, World, DEFAULT_P_HIGH, DEFAULT_P_LOW};
use crate::{Seconds, Timestamp};

pub use output::{
    write_switches_csv, ReportDoc, BLOCK_COLUMNS, CLASS_COLUMNS, HOURLY_COLUMNS, SWITCH_COLUMNS,
};

pub const SECONDS_PER_HOUR: i64 = 3600;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("block {block}: {source}")]
    Stream {
        block: CellId,
        #[source]
        source: StreamError,
    },
    #[error("offer for block {found} in stream of block {expected}")]
    WrongBlock { expected: CellId, found: CellId },
    #[error("block {0} has offers but no profile")]
    MissingProfile(CellId),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// What commits decisions in a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Low,
    High,
    Mean,
    Median,
    Ensemble,
}

impl Selector {
    pub const ALL: [Selector; 5] = [
        Selector::Low,
        Selector::High,
        Selector::Mean,
        Selector::Median,
        Selector::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Selector::Low => "low",
            Selector::High => "high",
            Selector::Mean => "mean",
            Selector::Median => "median",
            Selector::Ensemble => "ensemble",
        }
    }

    pub fn policy(self) -> Option<PolicyKey> {
        match self {
            Selector::Low => Some(PolicyKey::Low),
            Selector::High => Some(PolicyKey::High),
            Selector::Mean => Some(PolicyKey::Mean),
            Selector::Median => Some(PolicyKey::Median),
            Selector::Ensemble => None,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Selector::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown selector {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub selector: Selector,
    /// Ensemble evaluation period, seconds.
    pub period: Seconds,
    pub waiting_mode: WaitingMode,
    pub p_low: f64,
    pub p_high: f64,
    pub days: u32,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            selector: Selector::Ensemble,
            period: DEFAULT_PERIOD,
            waiting_mode: WaitingMode::PerAlgorithm,
            p_low: DEFAULT_P_LOW,
            p_high: DEFAULT_P_HIGH,
            days: 1,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.period <= 0 {
            return Err(SimError::Config(format!(
                "period must be positive, got {}",
                self.period
            )));
        }
        for (name, p) in [("p_low", self.p_low), ("p_high", self.p_high)] {
            if !(p > 0.0 && p <= 100.0) {
                return Err(SimError::Config(format!("{name} {p} outside (0, 100]")));
            }
        }
        if self.p_low > self.p_high {
            return Err(SimError::Config(format!(
                "p_low {} exceeds p_high {}",
                self.p_low, self.p_high
            )));
        }
        if self.days == 0 {
            return Err(SimError::Config("days must be at least 1".into()));
        }
        Ok(())
    }

    fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            period: self.period,
            waiting_mode: self.waiting_mode,
        }
    }
}

/// Committed outcomes within one hour of the stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourlyPoint {
    /// Hours since stream start.
    pub hour: i64,
    /// Active policy after the hour's last offer.
    pub active: PolicyKey,
    pub offers: u64,
    pub accepted: u64,
    /// Average committed overall delay, seconds.
    pub avg_overall: Option<f64>,
    /// Average logged overall delay per ensemble member, seconds.
    pub members: Vec<(PolicyKey, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockMetrics {
    pub block: CellId,
    pub traffic_class: TrafficClass,
    pub offer_count: u64,
    pub accepted_count: u64,
    pub total_waiting: i64,
    pub total_delivery: i64,
    /// Seconds; absent without acceptances.
    pub avg_waiting: Option<f64>,
    pub avg_delivery: Option<f64>,
    pub avg_overall: Option<f64>,
    pub hourly_series: Vec<HourlyPoint>,
    pub switches: Vec<SwitchEvent>,
}

enum Engine {
    Single(PolicyKey, PolicyState),
    Ensemble(Box<Ensemble>),
}

/// Stable 64-bit seed for a block, independent of block execution order.
pub fn block_seed(seed: u64, block: &CellId) -> u64 {
    // FNV-1a over the cell code, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in block.as_str().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Default)]
struct HourAcc {
    hour: i64,
    offers: u64,
    accepted: u64,
    overall: i64,
    members: Vec<(PolicyKey, i64, u64)>,
}

fn mean(total: i64, n: u64) -> Option<f64> {
    (n > 0).then(|| total as f64 / n as f64)
}

impl HourAcc {
    fn finish(&self, active: PolicyKey) -> HourlyPoint {
        HourlyPoint {
            hour: self.hour,
            active,
            offers: self.offers,
            accepted: self.accepted,
            avg_overall: mean(self.overall, self.accepted),
            members: self
                .members
                .iter()
                .map(|&(k, s, n)| (k, mean(s, n)))
                .collect(),
        }
    }
}

/// Replays one block's offers. `start` anchors waiting delays, evaluation
/// instants and hour buckets.
pub fn run_block(
    offers: &[FerryOffer],
    profile: &BlockProfile,
    cfg: &RunConfig,
    start: Timestamp,
) -> Result<BlockMetrics, SimError> {
    let stream_err = |source| SimError::Stream {
        block: profile.block.clone(),
        source,
    };
    let mut engine = match cfg.selector.policy() {
        Some(k) => Engine::Single(k, k.fresh(profile)),
        None => Engine::Ensemble(Box::new(
            Ensemble::standard(
                profile,
                cfg.ensemble(),
                start,
                block_seed(cfg.seed, &profile.block),
            )
            .map_err(stream_err)?,
        )),
    };

    let mut last_commit = start;
    let mut last_time: Option<Timestamp> = None;
    let mut accepted = 0u64;
    let mut total_waiting = 0i64;
    let mut total_delivery = 0i64;
    let mut hourly = Vec::new();
    let mut hour: Option<(HourAcc, PolicyKey)> = None;

    for o in offers {
        if o.block != profile.block {
            return Err(SimError::WrongBlock {
                expected: profile.block.clone(),
                found: o.block.clone(),
            });
        }
        if let Some(previous) = last_time {
            if o.time < previous {
                return Err(stream_err(StreamError::TimeRegression {
                    previous,
                    got: o.time,
                }));
            }
        }
        last_time = Some(o.time);

        let (decision, active, passive) = match &mut engine {
            Engine::Single(k, state) => (state.decide(o.delivery_delay), *k, None),
            Engine::Ensemble(e) => {
                let out = e.on_offer(o.time, o.delivery_delay).map_err(stream_err)?;
                (out.decision, e.active(), Some(out.passive))
            }
        };

        let h = (o.time - start).div_euclid(SECONDS_PER_HOUR);
        if hour.as_ref().is_some_and(|(acc, _)| acc.hour != h) {
            let (acc, key) = hour.take().unwrap();
            hourly.push(acc.finish(key));
        }
        let (acc, key) = hour.get_or_insert_with(|| {
            (
                HourAcc {
                    hour: h,
                    ..HourAcc::default()
                },
                active,
            )
        });
        *key = active;
        acc.offers += 1;
        if let Some(passive) = passive {
            if acc.members.is_empty() {
                acc.members = passive.iter().map(|&(k, _)| (k, 0, 0)).collect();
            }
            for (slot, (_, logged)) in acc.members.iter_mut().zip(passive) {
                if let Some(v) = logged {
                    slot.1 += v;
                    slot.2 += 1;
                }
            }
        }

        if decision == Decision::Accept {
            let w = o.time - last_commit;
            last_commit = o.time;
            accepted += 1;
            total_waiting += w;
            total_delivery += o.delivery_delay;
            acc.accepted += 1;
            acc.overall += w + o.delivery_delay;
        }
    }
    if let Some((acc, key)) = hour {
        hourly.push(acc.finish(key));
    }

    let switches = match engine {
        Engine::Ensemble(e) => e.switches().to_vec(),
        Engine::Single(..) => Vec::new(),
    };
    Ok(BlockMetrics {
        block: profile.block.clone(),
        traffic_class: profile.traffic_class,
        offer_count: offers.len() as u64,
        accepted_count: accepted,
        total_waiting,
        total_delivery,
        avg_waiting: mean(total_waiting, accepted),
        avg_delivery: mean(total_delivery, accepted),
        avg_overall: mean(total_waiting + total_delivery, accepted),
        hourly_series: hourly,
        switches,
    })
}

/// Unweighted per-class means of per-block averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class: TrafficClass,
    pub blocks: usize,
    /// Blocks with at least one acceptance; only these enter delay means.
    pub reporting_blocks: usize,
    /// Mean accepted count over all blocks of the class.
    pub avg_accepted: Option<f64>,
    pub avg_waiting: Option<f64>,
    pub avg_delivery: Option<f64>,
    pub avg_overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub config: RunConfig,
    pub scmc: CellId,
    pub precision: usize,
    pub start: Timestamp,
    pub days: u32,
    pub trace_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub meta: RunMeta,
    pub blocks: Vec<BlockMetrics>,
    pub classes: Vec<ClassSummary>,
}

fn avg_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize_classes(blocks: &[BlockMetrics]) -> Vec<ClassSummary> {
    TrafficClass::ALL
        .iter()
        .map(|&class| {
            let members: Vec<&BlockMetrics> =
                blocks.iter().filter(|b| b.traffic_class == class).collect();
            let reporting: Vec<&BlockMetrics> = members
                .iter()
                .copied()
                .filter(|b| b.accepted_count > 0)
                .collect();
            ClassSummary {
                class,
                blocks: members.len(),
                reporting_blocks: reporting.len(),
                avg_accepted: avg_of(members.iter().map(|b| b.accepted_count as f64)),
                avg_waiting: avg_of(reporting.iter().filter_map(|b| b.avg_waiting)),
                avg_delivery: avg_of(reporting.iter().filter_map(|b| b.avg_delivery)),
                avg_overall: avg_of(reporting.iter().filter_map(|b| b.avg_overall)),
            }
        })
        .collect()
}

fn block_jobs(world: &World) -> Result<Vec<(&BlockProfile, &[FerryOffer])>, SimError> {
    let mut jobs = Vec::with_capacity(world.profiles.len());
    for (cell, stream) in &world.offers {
        let profile = world
            .profiles
            .get(cell)
            .ok_or_else(|| SimError::MissingProfile(cell.clone()))?;
        jobs.push((profile, stream.as_slice()));
    }
    Ok(jobs)
}

fn assemble(world: &World, cfg: &RunConfig, blocks: Vec<BlockMetrics>) -> Report {
    let classes = summarize_classes(&blocks);
    Report {
        meta: RunMeta {
            config: *cfg,
            scmc: world.scmc.clone(),
            precision: world.config.precision,
            start: world.start,
            days: world.days,
            trace_digest: world.trace_digest.clone(),
        },
        blocks,
        classes,
    }
}

/// Runs every profiled block on the current rayon pool.
pub fn run_experiment(world: &World, cfg: &RunConfig) -> Result<Report, SimError> {
    cfg.validate()?;
    let blocks = block_jobs(world)?
        .into_par_iter()
        .map(|(p, offers)| run_block(offers, p, cfg, world.start))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(world, cfg, blocks))
}

/// Runs every profiled block on the calling thread.
pub fn run_experiment_sequential(world: &World, cfg: &RunConfig) -> Result<Report, SimError> {
    cfg.validate()?;
    let blocks = block_jobs(world)?
        .into_iter()
        .map(|(p, offers)| run_block(offers, p, cfg, world.start))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(world, cfg, blocks))
}

/// Runs on `threads` workers; `1` takes the sequential path.
pub fn run_experiment_threads(
    world: &World,
    cfg: &RunConfig,
    threads: usize,
) -> Result<Report, SimError> {
    if threads <= 1 {
        return run_experiment_sequential(world, cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    pool.install(|| run_experiment(world, cfg))
}

/// Adjacent representable f64 values are 1 ulp apart.
fn ulps_apart(a: f64, b: f64) -> u64 {
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

/// Checks report-level invariants; returns one message per violation.
pub fn check_invariants(report: &Report, world: &World) -> Vec<String> {
    let mut problems = Vec::new();
    for b in &report.blocks {
        if b.accepted_count > b.offer_count {
            problems.push(format!(
                "{}: {} accepted of {} offers",
                b.block, b.accepted_count, b.offer_count
            ));
        }
        match (b.avg_overall, b.avg_waiting, b.avg_delivery) {
            (Some(o), Some(w), Some(d)) => {
                if ulps_apart(o, w + d) > 1 {
                    problems.push(format!(
                        "{}: overall {o} != waiting {w} + delivery {d}",
                        b.block
                    ));
                }
            }
            (None, None, None) if b.accepted_count == 0 => {}
            _ => problems.push(format!("{}: inconsistent absent averages", b.block)),
        }
        if report.meta.config.selector == Selector::High {
            if let (Some(p), Some(stream)) =
                (world.profiles.get(&b.block), world.offers.get(&b.block))
            {
                let max_d = stream.iter().map(|o| o.delivery_delay).max().unwrap_or(0);
                if p.tau_high >= max_d && b.accepted_count != b.offer_count {
                    problems.push(format!(
                        "{}: accept-all threshold accepted {} of {}",
                        b.block, b.accepted_count, b.offer_count
                    ));
                }
            }
        }
    }
    let listed: usize = report.classes.iter().map(|c| c.blocks).sum();
    if listed != report.blocks.len() || report.blocks.len() != world.profiles.len() {
        problems.push(format!(
            "class totals {listed}, report blocks {}, world blocks {}",
            report.blocks.len(),
            world.profiles.len()
        ));
    }
    problems
}
