//! Simulation world: block assignment, SCMC choice, ferry-offer streams,
//! per-block delay thresholds and traffic classes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geocell::{self, CellId, GeoError};
use crate::traces::{TraceSet, SECONDS_PER_DAY};
use crate::{Seconds, Timestamp};

pub const DEFAULT_P_LOW: f64 = 2.0;
pub const DEFAULT_P_HIGH: f64 = 95.0;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("no SCMC-reaching candidates")]
    NoCandidates,
    #[error("percentile of an empty set")]
    EmptyPercentile,
    #[error("percentile {0} outside (0, 100]")]
    Percent(f64),
    #[error("low percentile {low} exceeds high percentile {high}")]
    PercentOrder { low: f64, high: f64 },
    #[error("no blocks to classify")]
    NoBlocks,
    #[error("source trace spans {span} s, replication needs less than one day")]
    SpanTooLong { span: i64 },
    #[error("replication count must be at least 1")]
    ZeroDays,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// A candidate vehicle's appearance in a block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FerryOffer {
    pub block: CellId,
    pub vehicle_id: String,
    pub time: Timestamp,
    /// Seconds until the vehicle reaches the SCMC block.
    pub delivery_delay: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Light,
    Medium,
    High,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 3] = [
        TrafficClass::Light,
        TrafficClass::Medium,
        TrafficClass::High,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Light => "light",
            TrafficClass::Medium => "medium",
            TrafficClass::High => "high",
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockProfile {
    pub block: CellId,
    pub offer_count: u64,
    pub tau_low: Seconds,
    pub tau_high: Seconds,
    pub traffic_class: TrafficClass,
}

/// Population statistics of per-block offer counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountStats {
    pub mean: f64,
    pub std_dev: f64,
    /// Set when the standard deviation is below the mean, which leaves the
    /// medium band `mean <= N <= std_dev` empty.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub classes: Vec<TrafficClass>,
    pub stats: CountStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub precision: usize,
    pub p_low: f64,
    pub p_high: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            precision: geocell::DEFAULT_PRECISION,
            p_low: DEFAULT_P_LOW,
            p_high: DEFAULT_P_HIGH,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(1..=geocell::MAX_PRECISION).contains(&self.precision) {
            return Err(GeoError::Precision(self.precision).into());
        }
        check_percent(self.p_low)?;
        check_percent(self.p_high)?;
        if self.p_low > self.p_high {
            return Err(WorldError::PercentOrder {
                low: self.p_low,
                high: self.p_high,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub scmc: CellId,
    /// Stream start shared by every block: the first trace timestamp.
    pub start: Timestamp,
    /// Seconds covered by the one-day source trace.
    pub source_span: i64,
    pub days: u32,
    pub offers: BTreeMap<CellId, Vec<FerryOffer>>,
    pub profiles: BTreeMap<CellId, BlockProfile>,
    pub stats: CountStats,
    pub trace_digest: String,
    pub config: WorldConfig,
}

type Tracks<'a> = BTreeMap<&'a str, Vec<(Timestamp, CellId)>>;

/// Per-vehicle `(timestamp, cell)` sequences in vehicle-id order.
fn cell_tracks(t: &TraceSet, precision: usize) -> Result<Tracks<'_>, WorldError> {
    let mut tracks = Tracks::new();
    for r in t.records() {
        let cell = geocell::encode(r.position, precision)?;
        tracks
            .entry(r.vehicle_id.as_str())
            .or_default()
            .push((r.timestamp, cell));
    }
    Ok(tracks)
}

fn is_entry(track: &[(Timestamp, CellId)], i: usize) -> bool {
    i == 0 || track[i].1 != track[i - 1].1
}

fn entry_counts(tracks: &Tracks<'_>) -> HashMap<CellId, u64> {
    let mut counts: HashMap<CellId, u64> = HashMap::new();
    for track in tracks.values() {
        for i in 0..track.len() {
            if is_entry(track, i) {
                *counts.entry(track[i].1.clone()).or_default() += 1;
            }
        }
    }
    counts
}

fn pick_most_entered(counts: HashMap<CellId, u64>) -> Option<CellId> {
    counts
        .into_iter()
        .max_by(|(ca, na), (cb, nb)| na.cmp(nb).then_with(|| cb.cmp(ca)))
        .map(|(c, _)| c)
}

/// The cell with the most vehicle entry events. Ties go to the
/// lexicographically smallest cell.
pub fn select_scmc(t: &TraceSet, precision: usize) -> Result<CellId, WorldError> {
    if t.is_empty() {
        return Err(WorldError::EmptyTrace);
    }
    let tracks = cell_tracks(t, precision)?;
    pick_most_entered(entry_counts(&tracks)).ok_or(WorldError::EmptyTrace)
}

fn offers_from_tracks(tracks: &Tracks<'_>, scmc: &CellId) -> BTreeMap<CellId, Vec<FerryOffer>> {
    let mut out: BTreeMap<CellId, Vec<FerryOffer>> = BTreeMap::new();
    for (&vehicle, track) in tracks {
        let mut next_scmc: Option<Timestamp> = None;
        for i in (0..track.len()).rev() {
            let (time, ref cell) = track[i];
            if cell == scmc {
                next_scmc = Some(time);
                continue;
            }
            if let Some(arrival) = next_scmc {
                if is_entry(track, i) {
                    out.entry(cell.clone()).or_default().push(FerryOffer {
                        block: cell.clone(),
                        vehicle_id: vehicle.to_string(),
                        time,
                        delivery_delay: arrival - time,
                    });
                }
            }
        }
    }
    for stream in out.values_mut() {
        stream.sort_by(|a, b| {
            (a.time, a.delivery_delay, &a.vehicle_id).cmp(&(
                b.time,
                b.delivery_delay,
                &b.vehicle_id,
            ))
        });
        // Only the fastest of simultaneous candidates is offered.
        stream.dedup_by(|later, kept| later.time == kept.time);
    }
    out
}

/// Per-block ferry offers: every entry into a non-SCMC block by a vehicle that
/// later reaches the SCMC, keeping the minimum-delay vehicle per timestamp.
pub fn extract_offers(
    t: &TraceSet,
    scmc: &CellId,
    precision: usize,
) -> Result<BTreeMap<CellId, Vec<FerryOffer>>, WorldError> {
    let tracks = cell_tracks(t, precision)?;
    Ok(offers_from_tracks(&tracks, scmc))
}

fn check_percent(p: f64) -> Result<(), WorldError> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(WorldError::Percent(p))
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn percentile_nearest_rank(values: &[Seconds], p: f64) -> Result<Seconds, WorldError> {
    check_percent(p)?;
    if values.is_empty() {
        return Err(WorldError::EmptyPercentile);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    // p * n is exact for integral percentages, so the ceiling is too.
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Classifies blocks by offer count `N` against the population mean and
/// standard deviation: light if `N < mean`, medium if `mean <= N <= std_dev`,
/// high if `N > std_dev`. Comparisons run in exact integer arithmetic.
pub fn classify_blocks(counts: &[u64]) -> Result<Classification, WorldError> {
    if counts.is_empty() {
        return Err(WorldError::NoBlocks);
    }
    let n = counts.len() as u128;
    let sum: u128 = counts.iter().map(|&c| c as u128).sum();
    let sum_sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
    // n^2 * variance
    let scaled_var = n * sum_sq - sum * sum;

    let below_mean = |c: u64| (c as u128) * n < sum;
    let within_sd = |c: u64| (c as u128) * (c as u128) * n * n <= scaled_var;

    let classes = counts
        .iter()
        .map(|&c| {
            if below_mean(c) {
                TrafficClass::Light
            } else if within_sd(c) {
                TrafficClass::Medium
            } else {
                TrafficClass::High
            }
        })
        .collect();

    let mean = sum as f64 / n as f64;
    let std_dev = (scaled_var as f64).sqrt() / n as f64;
    // std_dev < mean  <=>  n^2 var < sum^2
    let degenerate = scaled_var < sum * sum;
    if degenerate {
        log::warn!(
            "offer-count standard deviation {std_dev:.3} is below the mean {mean:.3}; \
             the medium class only holds counts in [mean, std_dev]"
        );
    }
    Ok(Classification {
        classes,
        stats: CountStats {
            mean,
            std_dev,
            degenerate,
        },
    })
}

fn profile_blocks(
    offers: &BTreeMap<CellId, Vec<FerryOffer>>,
    cfg: &WorldConfig,
) -> Result<(BTreeMap<CellId, BlockProfile>, CountStats), WorldError> {
    let counts: Vec<u64> = offers.values().map(|s| s.len() as u64).collect();
    let classification = classify_blocks(&counts)?;
    let mut profiles = BTreeMap::new();
    for ((cell, stream), class) in offers.iter().zip(classification.classes) {
        let delays: Vec<Seconds> = stream.iter().map(|o| o.delivery_delay).collect();
        profiles.insert(
            cell.clone(),
            BlockProfile {
                block: cell.clone(),
                offer_count: stream.len() as u64,
                tau_low: percentile_nearest_rank(&delays, cfg.p_low)?,
                tau_high: percentile_nearest_rank(&delays, cfg.p_high)?,
                traffic_class: class,
            },
        );
    }
    Ok((profiles, classification.stats))
}

/// Builds the world for a trace: SCMC selection, offer extraction, thresholds
/// and traffic classes. Blocks without offers are dropped.
pub fn build_world(t: &TraceSet, cfg: &WorldConfig) -> Result<World, WorldError> {
    cfg.validate()?;
    if t.is_empty() {
        return Err(WorldError::EmptyTrace);
    }
    let tracks = cell_tracks(t, cfg.precision)?;
    let scmc = pick_most_entered(entry_counts(&tracks)).ok_or(WorldError::EmptyTrace)?;
    let offers = offers_from_tracks(&tracks, &scmc);
    if offers.is_empty() {
        return Err(WorldError::NoCandidates);
    }
    let (profiles, stats) = profile_blocks(&offers, cfg)?;
    Ok(World {
        scmc,
        start: t.start(),
        source_span: t.span(),
        days: 1,
        offers,
        profiles,
        stats,
        trace_digest: t.digest(),
        config: *cfg,
    })
}

impl World {
    /// Number of profiled blocks.
    pub fn block_count(&self) -> usize {
        self.profiles.len()
    }

    /// Repeats every block's one-day offer stream `days` times, copy `k`
    /// shifted by `k` days, and recomputes the profiles.
    pub fn replicate(&self, days: u32) -> Result<World, WorldError> {
        if days == 0 {
            return Err(WorldError::ZeroDays);
        }
        if days == self.days {
            return Ok(self.clone());
        }
        if self.days != 1 {
            return self.base()?.replicate(days);
        }
        if self.source_span >= SECONDS_PER_DAY {
            return Err(WorldError::SpanTooLong {
                span: self.source_span,
            });
        }
        let offers: BTreeMap<CellId, Vec<FerryOffer>> = self
            .offers
            .iter()
            .map(|(cell, stream)| {
                let mut out = Vec::with_capacity(stream.len() * days as usize);
                for k in 0..days as i64 {
                    out.extend(stream.iter().map(|o| FerryOffer {
                        time: o.time + k * SECONDS_PER_DAY,
                        ..o.clone()
                    }));
                }
                (cell.clone(), out)
            })
            .collect();
        let (profiles, stats) = profile_blocks(&offers, &self.config)?;
        Ok(World {
            offers,
            profiles,
            stats,
            days,
            ..self.clone()
        })
    }

    fn base(&self) -> Result<World, WorldError> {
        let offers: BTreeMap<CellId, Vec<FerryOffer>> = self
            .offers
            .iter()
            .map(|(cell, stream)| {
                let day_end = self.start + SECONDS_PER_DAY;
                (
                    cell.clone(),
                    stream
                        .iter()
                        .filter(|o| o.time < day_end)
                        .cloned()
                        .collect(),
                )
            })
            .collect();
        let (profiles, stats) = profile_blocks(&offers, &self.config)?;
        Ok(World {
            offers,
            profiles,
            stats,
            days: 1,
            ..self.clone()
        })
    }

    pub fn dump(&self) -> WorldDump {
        WorldDump {
            scmc: self.scmc.clone(),
            blocks: self
                .profiles
                .iter()
                .map(|(cell, p)| {
                    (
                        cell.clone(),
                        BlockDump {
                            offer_count: p.offer_count,
                            tau_low: p.tau_low,
                            tau_high: p.tau_high,
                            traffic_class: p.traffic_class,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// JSON inspection view of a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDump {
    pub scmc: CellId,
    pub blocks: BTreeMap<CellId, BlockDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub offer_count: u64,
    pub tau_low: Seconds,
    pub tau_high: Seconds,
    pub traffic_class: TrafficClass,
}
