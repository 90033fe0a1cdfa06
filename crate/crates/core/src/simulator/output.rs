//! JSON and CSV renderings of a [`Report`]. Delays are minutes rounded to two
//! decimals.

use std::io::Write;

use serde::Serialize;

use super::{BlockMetrics, ClassSummary, Report, RunConfig};
use crate::ensemble::SwitchEvent;
use crate::geocell::CellId;
use crate::policies::PolicyKey;
use crate::world::TrafficClass;
use crate::Timestamp;

pub const BLOCK_COLUMNS: [&str; 9] = [
    "block",
    "traffic_class",
    "offers",
    "accepted",
    "avg_waiting_min",
    "avg_delivery_min",
    "avg_overall_min",
    "switches",
    "hours",
];

pub const CLASS_COLUMNS: [&str; 7] = [
    "class",
    "blocks",
    "reporting_blocks",
    "avg_accepted",
    "avg_waiting_min",
    "avg_delivery_min",
    "avg_overall_min",
];

pub const HOURLY_COLUMNS: [&str; 10] = [
    "block",
    "hour",
    "active",
    "offers",
    "accepted",
    "avg_overall_min",
    "low_min",
    "high_min",
    "mean_min",
    "median_min",
];

pub const SWITCH_COLUMNS: [&str; 8] = [
    "block",
    "time",
    "from",
    "to",
    "low_min",
    "high_min",
    "mean_min",
    "median_min",
];

fn minutes(seconds: f64) -> f64 {
    (seconds / 60.0 * 100.0).round() / 100.0
}

fn opt_minutes(seconds: Option<f64>) -> Option<f64> {
    seconds.map(minutes)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", minutes(x))).unwrap_or_default()
}

fn round2(v: Option<f64>) -> Option<f64> {
    v.map(|x| (x * 100.0).round() / 100.0)
}

fn per_policy(values: &[(PolicyKey, Option<f64>)]) -> [String; 4] {
    PolicyKey::ALL.map(|k| {
        values
            .iter()
            .find(|(m, _)| *m == k)
            .and_then(|(_, v)| *v)
            .map(|x| format!("{:.2}", minutes(x)))
            .unwrap_or_default()
    })
}

#[derive(Debug, Serialize)]
pub struct ReportDoc<'a> {
    config: &'a RunConfig,
    world: WorldDoc<'a>,
    classes: Vec<ClassDoc>,
    blocks: Vec<BlockDoc<'a>>,
}

#[derive(Debug, Serialize)]
struct WorldDoc<'a> {
    scmc: &'a CellId,
    precision: usize,
    start: Timestamp,
    days: u32,
    blocks: usize,
    trace_digest: &'a str,
}

#[derive(Debug, Serialize)]
struct ClassDoc {
    class: TrafficClass,
    blocks: usize,
    reporting_blocks: usize,
    avg_accepted: Option<f64>,
    avg_waiting_min: Option<f64>,
    avg_delivery_min: Option<f64>,
    avg_overall_min: Option<f64>,
}

#[derive(Debug, Serialize)]
struct HourDoc {
    hour: i64,
    active: PolicyKey,
    offers: u64,
    accepted: u64,
    avg_overall_min: Option<f64>,
}

#[derive(Debug, Serialize)]
struct BlockDoc<'a> {
    block: &'a CellId,
    traffic_class: TrafficClass,
    offers: u64,
    accepted: u64,
    avg_waiting_min: Option<f64>,
    avg_delivery_min: Option<f64>,
    avg_overall_min: Option<f64>,
    switches: usize,
    hourly: Vec<HourDoc>,
}

impl From<&ClassSummary> for ClassDoc {
    fn from(c: &ClassSummary) -> Self {
        ClassDoc {
            class: c.class,
            blocks: c.blocks,
            reporting_blocks: c.reporting_blocks,
            avg_accepted: round2(c.avg_accepted),
            avg_waiting_min: opt_minutes(c.avg_waiting),
            avg_delivery_min: opt_minutes(c.avg_delivery),
            avg_overall_min: opt_minutes(c.avg_overall),
        }
    }
}

impl<'a> From<&'a BlockMetrics> for BlockDoc<'a> {
    fn from(b: &'a BlockMetrics) -> Self {
        BlockDoc {
            block: &b.block,
            traffic_class: b.traffic_class,
            offers: b.offer_count,
            accepted: b.accepted_count,
            avg_waiting_min: opt_minutes(b.avg_waiting),
            avg_delivery_min: opt_minutes(b.avg_delivery),
            avg_overall_min: opt_minutes(b.avg_overall),
            switches: b.switches.len(),
            hourly: b
                .hourly_series
                .iter()
                .map(|h| HourDoc {
                    hour: h.hour,
                    active: h.active,
                    offers: h.offers,
                    accepted: h.accepted,
                    avg_overall_min: opt_minutes(h.avg_overall),
                })
                .collect(),
        }
    }
}

impl Report {
    pub fn doc(&self) -> ReportDoc<'_> {
        ReportDoc {
            config: &self.meta.config,
            world: WorldDoc {
                scmc: &self.meta.scmc,
                precision: self.meta.precision,
                start: self.meta.start,
                days: self.meta.days,
                blocks: self.blocks.len(),
                trace_digest: &self.meta.trace_digest,
            },
            classes: self.classes.iter().map(ClassDoc::from).collect(),
            blocks: self.blocks.iter().map(BlockDoc::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.doc()).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write_blocks_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(BLOCK_COLUMNS)?;
        for b in &self.blocks {
            w.write_record([
                b.block.to_string(),
                b.traffic_class.to_string(),
                b.offer_count.to_string(),
                b.accepted_count.to_string(),
                cell(b.avg_waiting),
                cell(b.avg_delivery),
                cell(b.avg_overall),
                b.switches.len().to_string(),
                b.hourly_series.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_classes_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CLASS_COLUMNS)?;
        for c in &self.classes {
            w.write_record([
                c.class.to_string(),
                c.blocks.to_string(),
                c.reporting_blocks.to_string(),
                c.avg_accepted
                    .map(|x| format!("{x:.2}"))
                    .unwrap_or_default(),
                cell(c.avg_waiting),
                cell(c.avg_delivery),
                cell(c.avg_overall),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_hourly_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HOURLY_COLUMNS)?;
        for b in &self.blocks {
            for h in &b.hourly_series {
                let [low, high, mean, median] = per_policy(&h.members);
                w.write_record([
                    b.block.to_string(),
                    h.hour.to_string(),
                    h.active.to_string(),
                    h.offers.to_string(),
                    h.accepted.to_string(),
                    cell(h.avg_overall),
                    low,
                    high,
                    mean,
                    median,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Switch-event log of one block.
pub fn write_switches_csv<W: Write>(
    block: &CellId,
    events: &[SwitchEvent],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWITCH_COLUMNS)?;
    for e in events {
        let [low, high, mean, median] = per_policy(&e.averages);
        w.write_record([
            block.to_string(),
            e.time.to_string(),
            e.from.to_string(),
            e.to.to_string(),
            low,
            high,
            mean,
            median,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minutes_round_to_two_places() {
        assert_eq!(minutes(90.0), 1.5);
        assert_eq!(minutes(100.0), 1.67);
        assert_eq!(cell(Some(100.0)), "1.67");
        assert_eq!(cell(None), "");
    }

    #[test]
    fn per_policy_fills_missing() {
        let v = [(PolicyKey::Mean, Some(120.0)), (PolicyKey::Low, None)];
        assert_eq!(
            per_policy(&v),
            ["".to_string(), "".into(), "2.00".into(), "".into()]
        );
    }

    #[test]
    fn switch_log_columns() {
        let c = CellId::parse("wtw3sj1").unwrap();
        let e = SwitchEvent {
            time: 1800,
            from: PolicyKey::High,
            to: PolicyKey::Low,
            averages: vec![
                (PolicyKey::Low, Some(480.0)),
                (PolicyKey::High, Some(600.0)),
            ],
        };
        let mut buf = Vec::new();
        write_switches_csv(&c, &[e], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "block,time,from,to,low_min,high_min,mean_min,median_min\nwtw3sj1,1800,high,low,8.00,10.00,,\n"
        );
    }
}
