//! Experiment configuration and the `run`, `synth` and `validate` commands.
//!
//! An experiment is one JSON document. Relative paths inside it resolve
//! against the directory holding the config file. Missing fields take the
//! defaults below, and the resolved values are echoed into every report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{WaitingMode, DEFAULT_PERIOD};
use crate::geocell::{DEFAULT_PRECISION, MAX_PRECISION};
use crate::simulator::{
    self, check_invariants, write_switches_csv, Report, RunConfig, Selector, SimError,
};
use crate::traces::{
    self, LoadOptions, SynthSummary, SyntheticSpec, TraceError, TraceSet,
    DEFAULT_MALFORMED_TOLERANCE,
};
use crate::world::{self, TrafficClass, WorldConfig, WorldError, DEFAULT_P_HIGH, DEFAULT_P_LOW};

pub const SYNTHETIC_TRACE_FILE: &str = "synthetic_trace.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const WORLD_FILE: &str = "world.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Invariant(_) => 3,
        }
    }
}

impl From<TraceError> for HarnessError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Spec(_) | TraceError::ZeroDays => HarnessError::Config(e.to_string()),
            _ => HarnessError::Data(e.to_string()),
        }
    }
}

impl From<WorldError> for HarnessError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Percent(_) | WorldError::PercentOrder { .. } | WorldError::ZeroDays => {
                HarnessError::Config(e.to_string())
            }
            _ => HarnessError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => HarnessError::Config(e.to_string()),
            SimError::Pool(_) => HarnessError::Data(e.to_string()),
            _ => HarnessError::Invariant(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Path to a trace CSV.
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

fn default_precision() -> usize {
    DEFAULT_PRECISION
}
fn default_days() -> Vec<u32> {
    vec![5, 10, 15, 20, 25]
}
fn default_selectors() -> Vec<Selector> {
    Selector::ALL.to_vec()
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_period() -> i64 {
    DEFAULT_PERIOD
}
fn default_p_low() -> f64 {
    DEFAULT_P_LOW
}
fn default_p_high() -> f64 {
    DEFAULT_P_HIGH
}
fn default_tolerance() -> f64 {
    DEFAULT_MALFORMED_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub input: InputSpec,
    #[serde(default = "default_precision")]
    pub precision: usize,
    #[serde(default = "default_days")]
    pub days: Vec<u32>,
    #[serde(default = "default_selectors")]
    pub selectors: Vec<Selector>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_period")]
    pub period_seconds: i64,
    #[serde(default)]
    pub waiting_mode: WaitingMode,
    #[serde(default = "default_p_low")]
    pub p_low: f64,
    #[serde(default = "default_p_high")]
    pub p_high: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub max_malformed_fraction: f64,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let InputSpec::Csv(p) = &mut spec.input {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if spec.output_dir.is_relative() {
            spec.output_dir = base.join(&spec.output_dir);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(1..=MAX_PRECISION).contains(&self.precision) {
            return bad(format!(
                "precision {} outside [1, {MAX_PRECISION}]",
                self.precision
            ));
        }
        if self.days.is_empty() {
            return bad("days must not be empty".into());
        }
        if self.days.contains(&0) {
            return bad("every day count must be at least 1".into());
        }
        if self.selectors.is_empty() {
            return bad("at least one selector is required".into());
        }
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return bad(format!(
                "max_malformed_fraction {} outside [0, 1]",
                self.max_malformed_fraction
            ));
        }
        self.run_config(Selector::Ensemble, 1).validate()?;
        if let InputSpec::Synthetic(s) = &self.input {
            s.validate()?;
        }
        Ok(())
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            precision: self.precision,
            p_low: self.p_low,
            p_high: self.p_high,
        }
    }

    pub fn run_config(&self, selector: Selector, days: u32) -> RunConfig {
        RunConfig {
            selector,
            period: self.period_seconds,
            waiting_mode: self.waiting_mode,
            p_low: self.p_low,
            p_high: self.p_high,
            days,
            seed: self.seed,
        }
    }

    fn sorted_days(&self) -> Vec<u32> {
        let mut d = self.days.clone();
        d.sort_unstable();
        d.dedup();
        d
    }

    fn sorted_selectors(&self) -> Vec<Selector> {
        let mut s = self.selectors.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(out) = &self.out {
            spec.output_dir = out.clone();
        }
    }

    fn threads(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// Loads or generates the experiment's trace.
pub fn input_traces(
    spec: &ExperimentSpec,
) -> Result<(TraceSet, Option<SynthSummary>), HarnessError> {
    match &spec.input {
        InputSpec::Csv(path) => {
            let opts = LoadOptions {
                max_malformed_fraction: spec.max_malformed_fraction,
            };
            let (t, report) = traces::load_csv(path, &opts)?;
            log::info!(
                "loaded {} records from {} ({} malformed, {} duplicates)",
                t.len(),
                path.display(),
                report.malformed_rows.len(),
                report.duplicates
            );
            Ok((t, None))
        }
        InputSpec::Synthetic(s) => {
            let (t, summary) = traces::synthesize(s, spec.seed)?;
            Ok((t, Some(summary)))
        }
    }
}

/// One row of the cross-selector comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub days: u32,
    pub class: TrafficClass,
    pub selector: Selector,
    pub blocks: usize,
    pub reporting_blocks: usize,
    pub avg_accepted: Option<f64>,
    pub avg_waiting: Option<f64>,
    pub avg_delivery: Option<f64>,
    pub avg_overall: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub comparison: Vec<ComparisonRow>,
    pub reports: BTreeMap<(u32, Selector), Report>,
}

impl RunOutcome {
    /// Selector with the lowest class average overall delay for each
    /// `(days, class)`.
    pub fn winners(&self) -> BTreeMap<(u32, TrafficClass), Selector> {
        let mut best: BTreeMap<(u32, TrafficClass), (Selector, f64)> = BTreeMap::new();
        for r in &self.comparison {
            if let Some(v) = r.avg_overall {
                let slot = best.entry((r.days, r.class)).or_insert((r.selector, v));
                if v < slot.1 {
                    *slot = (r.selector, v);
                }
            }
        }
        best.into_iter().map(|(k, (s, _))| (k, s)).collect()
    }
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{:.2}", x / scale)).unwrap_or_default()
}

/// Runs every `(days, selector)` combination and writes reports under the
/// output directory.
pub fn run(spec: &ExperimentSpec, overrides: &Overrides) -> Result<RunOutcome, HarnessError> {
    let mut spec = spec.clone();
    overrides.apply(&mut spec);
    spec.validate()?;
    let threads = overrides.threads();
    let out_dir = spec.output_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let (traces, _) = input_traces(&spec)?;
    let base = world::build_world(&traces, &spec.world_config())?;
    log::info!(
        "world: scmc {}, {} blocks (mean offers {:.2}, std dev {:.2})",
        base.scmc,
        base.block_count(),
        base.stats.mean,
        base.stats.std_dev
    );

    let mut outcome = RunOutcome::default();
    let world_path = out_dir.join(WORLD_FILE);
    write_file(&world_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &base.dump()).map_err(io::Error::other)?;
        w.write_all(b"\n")
    })?;
    outcome.files.push(world_path);

    for days in spec.sorted_days() {
        let world = base.replicate(days)?;
        for selector in spec.sorted_selectors() {
            let cfg = spec.run_config(selector, days);
            let report = simulator::run_experiment_threads(&world, &cfg, threads)?;
            let problems = check_invariants(&report, &world);
            if !problems.is_empty() {
                return Err(HarnessError::Invariant(format!(
                    "{selector} over {days} days: {}",
                    problems.join("; ")
                )));
            }

            let stem = format!("report_{selector}_{days}d");
            let json = out_dir.join(format!("{stem}.json"));
            write_file(&json, |w| w.write_all(report.to_json().as_bytes()))?;
            let blocks = out_dir.join(format!("{stem}.csv"));
            write_file(&blocks, |w| report.write_blocks_csv(w).map_err(csv_io))?;
            let classes = out_dir.join(format!("{stem}_classes.csv"));
            write_file(&classes, |w| report.write_classes_csv(w).map_err(csv_io))?;
            let hourly = out_dir.join(format!("{stem}_hourly.csv"));
            write_file(&hourly, |w| report.write_hourly_csv(w).map_err(csv_io))?;
            outcome.files.extend([json, blocks, classes, hourly]);

            if selector == Selector::Ensemble {
                for b in &report.blocks {
                    let path = out_dir.join(format!("switching_{}_{days}d.csv", b.block));
                    write_file(&path, |w| {
                        write_switches_csv(&b.block, &b.switches, w).map_err(csv_io)
                    })?;
                    outcome.files.push(path);
                }
            }

            for c in &report.classes {
                outcome.comparison.push(ComparisonRow {
                    days,
                    class: c.class,
                    selector,
                    blocks: c.blocks,
                    reporting_blocks: c.reporting_blocks,
                    avg_accepted: c.avg_accepted,
                    avg_waiting: c.avg_waiting,
                    avg_delivery: c.avg_delivery,
                    avg_overall: c.avg_overall,
                });
            }
            outcome.reports.insert((days, selector), report);
        }
    }

    let cmp_path = out_dir.join(COMPARISON_FILE);
    write_file(&cmp_path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "days",
            "class",
            "selector",
            "blocks",
            "reporting_blocks",
            "avg_accepted",
            "avg_waiting_min",
            "avg_delivery_min",
            "avg_overall_min",
        ])
        .map_err(csv_io)?;
        for r in &outcome.comparison {
            c.write_record([
                r.days.to_string(),
                r.class.to_string(),
                r.selector.to_string(),
                r.blocks.to_string(),
                r.reporting_blocks.to_string(),
                fmt_opt(r.avg_accepted, 1.0),
                fmt_opt(r.avg_waiting, 60.0),
                fmt_opt(r.avg_delivery, 60.0),
                fmt_opt(r.avg_overall, 60.0),
            ])
            .map_err(csv_io)?;
        }
        c.flush()
    })?;
    outcome.files.push(cmp_path);
    Ok(outcome)
}

/// Generates the synthetic trace of `spec` and writes it as CSV.
pub fn synth(
    spec: &ExperimentSpec,
    overrides: &Overrides,
) -> Result<(PathBuf, SynthSummary), HarnessError> {
    let mut spec = spec.clone();
    overrides.apply(&mut spec);
    let InputSpec::Synthetic(s) = &spec.input else {
        return Err(HarnessError::Config(
            "config has no synthetic input section".into(),
        ));
    };
    let (t, summary) = traces::synthesize(s, spec.seed)?;
    fs::create_dir_all(&spec.output_dir).map_err(|e| io_err(&spec.output_dir, e))?;
    let path = spec.output_dir.join(SYNTHETIC_TRACE_FILE);
    t.save_csv(&path)?;
    Ok((path, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"input": {"csv": "trace.csv"}}"#;

    #[test]
    fn defaults_fill_in() {
        let s = ExperimentSpec::from_json(MINIMAL).unwrap();
        assert_eq!(s.precision, 7);
        assert_eq!(s.days, vec![5, 10, 15, 20, 25]);
        assert_eq!(s.selectors.len(), 5);
        assert_eq!(s.period_seconds, 1800);
        assert_eq!((s.p_low, s.p_high), (2.0, 95.0));
        assert_eq!(s.waiting_mode, WaitingMode::PerAlgorithm);
    }

    #[test]
    fn config_errors_exit_1() {
        for bad in [
            r#"{"input": {"csv": "t.csv"}, "days": []}"#,
            r#"{"input": {"csv": "t.csv"}, "selectors": []}"#,
            r#"{"input": {"csv": "t.csv"}, "selectors": ["max"]}"#,
            r#"{"input": {"csv": "t.csv"}, "p_low": 99}"#,
            r#"{"input": {"csv": "t.csv"}, "period_seconds": 0}"#,
            r#"{"input": {"csv": "t.csv"}, "precision": 13}"#,
            r#"{"input": {"csv": "t.csv"}, "unknown": 1}"#,
            r#"{"input": {"synthetic": {"segments": [{"duration_minutes": 0}], "blocks": []}}}"#,
            r#"not json"#,
        ] {
            let err = ExperimentSpec::from_json(bad).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{bad}: {err}");
        }
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.json");
        fs::write(&cfg, MINIMAL).unwrap();
        let s = ExperimentSpec::load(&cfg).unwrap();
        assert_eq!(s.input, InputSpec::Csv(dir.path().join("trace.csv")));
        assert_eq!(s.output_dir, dir.path().join("out"));
    }

    #[test]
    fn missing_trace_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ExperimentSpec::from_json(MINIMAL).unwrap();
        s.input = InputSpec::Csv(dir.path().join("absent.csv"));
        s.output_dir = dir.path().join("out");
        assert_eq!(run(&s, &Overrides::default()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn synth_needs_a_synthetic_section() {
        let s = ExperimentSpec::from_json(MINIMAL).unwrap();
        assert_eq!(synth(&s, &Overrides::default()).unwrap_err().exit_code(), 1);
    }
}
