//! Seeded synthetic traces with per-block Poisson arrivals.
//!
//! Every arrival is a fresh vehicle that reports once inside its block. With
//! the regime's pass probability it reports again, inside the SCMC cell, after
//! a delay drawn from the regime's delay distribution. Anchor vehicles report
//! once inside the SCMC cell at the start so it is always the most visited
//! cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Pareto, Uniform};
use serde::{Deserialize, Serialize};

use super::{TraceError, TraceRecord, TraceSet};
use crate::geocell::GeoPoint;
use crate::Timestamp;

fn default_origin() -> GeoPoint {
    // Central Shanghai.
    GeoPoint {
        latitude: 31.2304,
        longitude: 121.4737,
    }
}

fn default_spacing() -> f64 {
    0.01
}

fn default_anchors() -> u32 {
    1
}

/// Generator configuration, embedded as the `synthetic` section of an
/// experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Epoch seconds of the first segment.
    #[serde(default)]
    pub start: Timestamp,
    /// Position of the SCMC cell.
    #[serde(default = "default_origin")]
    pub origin: GeoPoint,
    /// Block `i` sits `(i + 1) * spacing` degrees east of the origin.
    #[serde(default = "default_spacing")]
    pub block_spacing_degrees: f64,
    /// Consecutive stationary segments; the horizon is their total length.
    pub segments: Vec<Segment>,
    pub blocks: Vec<BlockSpec>,
    /// Lower bound on the number of anchor vehicles.
    #[serde(default = "default_anchors")]
    pub anchor_vehicles: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    /// One regime per segment, or a single regime used for all segments.
    pub regimes: Vec<Regime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    /// Poisson arrival rate in vehicles per minute.
    pub rate_per_minute: f64,
    /// Probability that an arriving vehicle later visits the SCMC.
    pub pass_probability: f64,
    pub delay: DelayDistribution,
}

/// Delivery-delay distributions, in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayDistribution {
    LogNormal { median_minutes: f64, sigma: f64 },
    Pareto { scale_minutes: f64, shape: f64 },
    Uniform { min_minutes: f64, max_minutes: f64 },
    Fixed { minutes: f64 },
}

enum Sampler {
    LogNormal(LogNormal<f64>),
    Pareto(Pareto<f64>),
    Uniform(Uniform<f64>),
    Fixed(f64),
}

impl Sampler {
    fn sample_minutes(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Pareto(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Fixed(m) => *m,
        }
    }
}

impl DelayDistribution {
    fn sampler(&self) -> Result<Sampler, String> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        Ok(match *self {
            DelayDistribution::LogNormal {
                median_minutes,
                sigma,
            } => {
                pos("median_minutes", median_minutes)?;
                pos("sigma", sigma)?;
                Sampler::LogNormal(
                    LogNormal::new(median_minutes.ln(), sigma).map_err(|e| e.to_string())?,
                )
            }
            DelayDistribution::Pareto {
                scale_minutes,
                shape,
            } => {
                pos("scale_minutes", scale_minutes)?;
                pos("shape", shape)?;
                Sampler::Pareto(Pareto::new(scale_minutes, shape).map_err(|e| e.to_string())?)
            }
            DelayDistribution::Uniform {
                min_minutes,
                max_minutes,
            } => {
                pos("min_minutes", min_minutes)?;
                if !(max_minutes.is_finite() && max_minutes > min_minutes) {
                    return Err(format!(
                        "max_minutes {max_minutes} must exceed min_minutes {min_minutes}"
                    ));
                }
                Sampler::Uniform(Uniform::new(min_minutes, max_minutes).map_err(|e| e.to_string())?)
            }
            DelayDistribution::Fixed { minutes } => {
                pos("minutes", minutes)?;
                Sampler::Fixed(minutes)
            }
        })
    }
}

impl SyntheticSpec {
    pub fn horizon_minutes(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_minutes).sum()
    }

    /// Segment start times in epoch seconds, followed by the horizon end.
    pub fn segment_boundaries(&self) -> Vec<Timestamp> {
        let mut out = vec![self.start];
        let mut acc = 0.0;
        for s in &self.segments {
            acc += s.duration_minutes;
            out.push(self.start + (acc * 60.0).round() as i64);
        }
        out
    }

    pub fn block_position(&self, index: usize) -> GeoPoint {
        GeoPoint {
            latitude: self.origin.latitude,
            longitude: self.origin.longitude + (index as f64 + 1.0) * self.block_spacing_degrees,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Spec(m));
        if self.start < 0 {
            return bad(format!("start {} is negative", self.start));
        }
        self.origin
            .validate()
            .map_err(|e| TraceError::Spec(format!("origin: {e}")))?;
        if !(self.block_spacing_degrees.is_finite() && self.block_spacing_degrees > 0.0) {
            return bad("block_spacing_degrees must be positive".into());
        }
        if self.segments.is_empty() {
            return bad("at least one segment is required".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration_minutes.is_finite() && s.duration_minutes > 0.0) {
                return bad(format!(
                    "segment {i}: duration_minutes must be positive, got {}",
                    s.duration_minutes
                ));
            }
        }
        for (b, block) in self.blocks.iter().enumerate() {
            if block.regimes.len() != 1 && block.regimes.len() != self.segments.len() {
                return bad(format!(
                    "block {b}: {} regimes for {} segments",
                    block.regimes.len(),
                    self.segments.len()
                ));
            }
            for (i, r) in block.regimes.iter().enumerate() {
                if !(r.rate_per_minute.is_finite() && r.rate_per_minute >= 0.0) {
                    return bad(format!(
                        "block {b} regime {i}: rate_per_minute must be non-negative, got {}",
                        r.rate_per_minute
                    ));
                }
                if !(0.0..=1.0).contains(&r.pass_probability) {
                    return bad(format!(
                        "block {b} regime {i}: pass_probability {} outside [0, 1]",
                        r.pass_probability
                    ));
                }
                r.delay
                    .sampler()
                    .map_err(|e| TraceError::Spec(format!("block {b} regime {i}: {e}")))?;
            }
            let far = self.block_position(b);
            if far.longitude > 180.0 {
                return bad(format!("block {b} lies beyond longitude 180"));
            }
        }
        Ok(())
    }
}

/// Counts describing a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub blocks: usize,
    pub arrivals: u64,
    /// Arrivals that later visit the SCMC.
    pub candidates: u64,
    pub candidate_fraction: f64,
    pub anchors: u64,
    pub segment_boundaries: Vec<Timestamp>,
}

/// Generates a trace realizing `spec`. Identical `(spec, seed)` pairs give
/// identical traces.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<(TraceSet, SynthSummary), TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = spec.segment_boundaries();
    let scmc = spec.origin;
    let mut records = Vec::new();
    let mut arrivals = 0u64;
    let mut candidates = 0u64;
    let mut busiest = 0u64;

    for (b, block) in spec.blocks.iter().enumerate() {
        let position = spec.block_position(b);
        let mut block_arrivals = 0u64;
        let mut seg_start_min = 0.0;
        for (s, seg) in spec.segments.iter().enumerate() {
            let regime = if block.regimes.len() == 1 {
                &block.regimes[0]
            } else {
                &block.regimes[s]
            };
            let seg_end_min = seg_start_min + seg.duration_minutes;
            let seg_end = bounds[s + 1];
            if regime.rate_per_minute > 0.0 {
                let gap = Exp::new(regime.rate_per_minute).expect("validated rate");
                let delay = regime.delay.sampler().expect("validated distribution");
                let mut t_min = seg_start_min;
                loop {
                    t_min += gap.sample(&mut rng);
                    if t_min >= seg_end_min {
                        break;
                    }
                    let at = (spec.start + (t_min * 60.0).floor() as i64).min(seg_end - 1);
                    let vehicle_id = format!("b{b:03}-{block_arrivals:07}");
                    block_arrivals += 1;
                    let passes = rng.random_bool(regime.pass_probability);
                    records.push(synthetic_record(&vehicle_id, at, position));
                    if passes {
                        let d = (delay.sample_minutes(&mut rng) * 60.0).round().max(1.0) as i64;
                        records.push(synthetic_record(&vehicle_id, at + d, scmc));
                        candidates += 1;
                    }
                }
            }
            seg_start_min = seg_end_min;
        }
        arrivals += block_arrivals;
        busiest = busiest.max(block_arrivals);
    }

    let anchors = u64::from(spec.anchor_vehicles).max(busiest + 1);
    for k in 0..anchors {
        records.push(synthetic_record(&format!("scmc-{k:07}"), spec.start, scmc));
    }

    let (set, duplicates) = TraceSet::from_records(records)?;
    debug_assert_eq!(duplicates, 0);
    let summary = SynthSummary {
        blocks: spec.blocks.len(),
        arrivals,
        candidates,
        candidate_fraction: if arrivals == 0 {
            0.0
        } else {
            candidates as f64 / arrivals as f64
        },
        anchors,
        segment_boundaries: bounds,
    };
    Ok((set, summary))
}

fn synthetic_record(vehicle_id: &str, timestamp: Timestamp, position: GeoPoint) -> TraceRecord {
    TraceRecord {
        vehicle_id: vehicle_id.to_string(),
        timestamp,
        position,
        speed: 10.0,
        heading: 0.0,
    }
}
