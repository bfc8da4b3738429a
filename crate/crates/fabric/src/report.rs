//! Plot-ready reports computed from the journal alone: hypervolume against
//! trials and time, overhead by interval class, and the concurrency
//! profile.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use optifab_core::hypervolume::HvTracker;
use optifab_core::TimingTrace;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::journal::{execution_intervals, EventKind, JournalContents};

pub const HV_VS_TRIALS: &str = "hv_vs_trials.csv";
pub const HV_VS_TIME: &str = "hv_vs_time.csv";
pub const OVERHEAD: &str = "overhead.csv";
pub const CONCURRENCY: &str = "concurrency.csv";

pub const INTERVAL_CLASSES: [&str; 5] = ["generation", "queue", "execution", "retrieval", "aggregation"];

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRow {
    pub class: &'static str,
    pub total_seconds: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    /// (1-based trial index, hypervolume, standard error).
    pub hv_vs_trials: Vec<(usize, f64, f64)>,
    /// (seconds since the first experiment start, hypervolume).
    pub hv_vs_time: Vec<(f64, f64)>,
    pub overhead: Vec<OverheadRow>,
    /// (seconds since the first experiment start, running tasks).
    pub concurrency: Vec<(f64, usize)>,
    pub counts: StatusCounts,
    pub experiment_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusCounts {
    pub valid: usize,
    pub invalid: usize,
    pub failed: usize,
}

impl Report {
    pub fn final_hypervolume(&self) -> Option<(f64, f64)> {
        self.hv_vs_trials.last().map(|&(_, v, se)| (v, se))
    }

    pub fn fraction(&self, class: &str) -> f64 {
        self.overhead.iter().find(|r| r.class == class).map_or(0.0, |r| r.fraction)
    }

    pub fn max_concurrency(&self) -> usize {
        self.concurrency.iter().map(|&(_, n)| n).max().unwrap_or(0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("experiment_started event carries no usable config: {0}")]
    Config(String),
    #[error("hypervolume setup failed: {0}")]
    Hypervolume(String),
}

/// Per-trial interval lengths, each clamped at zero.
pub fn intervals(t: &TimingTrace) -> [f64; 5] {
    let span = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (b - a).max(0.0),
        _ => 0.0,
    };
    [
        t.generation_seconds.unwrap_or(0.0).max(0.0),
        span(t.submitted_at, t.started_at),
        span(t.started_at, t.finished_at),
        span(t.finished_at, t.received_at),
        span(t.received_at, t.finalized_at),
    ]
}

pub fn build_report(contents: &JournalContents) -> Result<Report, ReportError> {
    let mut report = Report { experiment_id: contents.header.as_ref().map(|h| h.experiment_id.clone()), ..Default::default() };
    let events = &contents.events;
    let start = events.iter().find(|e| e.kind == EventKind::ExperimentStarted);
    let t0 = start.map_or(0.0, |e| e.wall_time);

    let mut tracker = match start {
        Some(e) => {
            let cfg: ExperimentConfig = e
                .payload
                .get("config")
                .cloned()
                .ok_or_else(|| ReportError::Config("missing".into()))
                .and_then(|v| serde_json::from_value(v).map_err(|err| ReportError::Config(err.to_string())))?;
            Some(
                HvTracker::new(
                    &cfg.problem.objective_lower_bound(),
                    &cfg.reference_point(),
                    cfg.hv.mc_samples,
                    cfg.hv_seed(),
                )
                .map_err(|err| ReportError::Hypervolume(err.to_string()))?,
            )
        }
        None => None,
    };

    let mut totals = [0.0f64; 5];
    for e in events.iter().filter(|e| e.kind == EventKind::TrialFinalized) {
        match e.payload.get("status").and_then(Value::as_str) {
            Some("valid") => report.counts.valid += 1,
            Some("invalid") => report.counts.invalid += 1,
            _ => report.counts.failed += 1,
        }
        if let (Some(t), Some(objs)) = (tracker.as_mut(), e.payload.get("objectives").and_then(Value::as_array)) {
            let point: Vec<f64> = objs.iter().filter_map(Value::as_f64).collect();
            t.insert(&point);
        }
        let est = tracker.as_ref().map(|t| t.estimate());
        let (v, se) = est.map_or((0.0, 0.0), |h| (h.value, h.stderr));
        report.hv_vs_trials.push((report.hv_vs_trials.len() + 1, v, se));
        report.hv_vs_time.push(((e.wall_time - t0).max(0.0), v));
        if let Some(timing) = e.payload.get("timing").and_then(|v| serde_json::from_value::<TimingTrace>(v.clone()).ok()) {
            for (acc, x) in totals.iter_mut().zip(intervals(&timing)) {
                *acc += x;
            }
        }
    }
    let sum: f64 = totals.iter().sum();
    if !report.hv_vs_trials.is_empty() {
        report.overhead = INTERVAL_CLASSES
            .iter()
            .zip(totals)
            .map(|(&class, total)| OverheadRow {
                class,
                total_seconds: total,
                fraction: if sum > 0.0 { total / sum } else { 0.0 },
            })
            .collect();
    }

    let mut edges: Vec<(f64, i64)> = Vec::new();
    for (s, f, _) in execution_intervals(events) {
        edges.push((s, 1));
        edges.push((f, -1));
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut running = 0i64;
    for (t, d) in edges {
        running += d;
        report.concurrency.push(((t - t0).max(0.0), running.max(0) as usize));
    }
    Ok(report)
}

pub fn hv_vs_trials_csv(r: &Report) -> String {
    let mut s = String::from("trial_index,hypervolume,hv_stderr\n");
    for (i, v, se) in &r.hv_vs_trials {
        let _ = writeln!(s, "{i},{v},{se}");
    }
    s
}

pub fn hv_vs_time_csv(r: &Report) -> String {
    let mut s = String::from("wall_seconds,hypervolume\n");
    for (t, v) in &r.hv_vs_time {
        let _ = writeln!(s, "{t},{v}");
    }
    s
}

pub fn overhead_csv(r: &Report) -> String {
    let mut s = String::from("interval_class,total_seconds,fraction\n");
    for row in &r.overhead {
        let _ = writeln!(s, "{},{},{}", row.class, row.total_seconds, row.fraction);
    }
    s
}

pub fn concurrency_csv(r: &Report) -> String {
    let mut s = String::from("wall_seconds,running_tasks\n");
    for (t, n) in &r.concurrency {
        let _ = writeln!(s, "{t},{n}");
    }
    s
}

pub fn write_csvs(r: &Report, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(HV_VS_TRIALS), hv_vs_trials_csv(r))?;
    fs::write(dir.join(HV_VS_TIME), hv_vs_time_csv(r))?;
    fs::write(dir.join(OVERHEAD), overhead_csv(r))?;
    fs::write(dir.join(CONCURRENCY), concurrency_csv(r))?;
    Ok(())
}

pub fn summary_text(r: &Report) -> String {
    let mut s = String::new();
    if let Some(id) = &r.experiment_id {
        let _ = writeln!(s, "experiment: {id}");
    }
    let total = r.counts.valid + r.counts.invalid + r.counts.failed;
    let _ = writeln!(
        s,
        "trials finalized: {total} (valid {}, invalid {}, failed {})",
        r.counts.valid, r.counts.invalid, r.counts.failed
    );
    match r.final_hypervolume() {
        Some((v, se)) if se > 0.0 => {
            let _ = writeln!(s, "final hypervolume: {v:.6} (stderr {se:.6})");
        }
        Some((v, _)) => {
            let _ = writeln!(s, "final hypervolume: {v:.6}");
        }
        None => s.push_str("final hypervolume: n/a\n"),
    }
    if r.overhead.is_empty() {
        s.push_str("overhead: n/a\n");
    } else {
        s.push_str("overhead:\n");
        for row in &r.overhead {
            let _ = writeln!(s, "  {:<11} {:>12.4} s  {:>6.2}%", row.class, row.total_seconds, 100.0 * row.fraction);
        }
    }
    let _ = writeln!(s, "peak concurrency: {}", r.max_concurrency());
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journal::{new_header, read_journal, JournalWriter};
    use serde_json::json;

    #[test]
    fn intervals_clamp_and_partition() {
        let t = TimingTrace {
            proposed_at: Some(0.0),
            submitted_at: Some(1.0),
            started_at: Some(1.5),
            finished_at: Some(3.5),
            received_at: Some(3.0),
            finalized_at: Some(4.0),
            generation_seconds: Some(1.0),
        };
        assert_eq!(intervals(&t), [1.0, 0.5, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_journal_gives_header_only_csvs() {
        let r = build_report(&JournalContents::default()).unwrap();
        assert_eq!(hv_vs_trials_csv(&r), "trial_index,hypervolume,hv_stderr\n");
        assert_eq!(hv_vs_time_csv(&r), "wall_seconds,hypervolume\n");
        assert_eq!(overhead_csv(&r), "interval_class,total_seconds,fraction\n");
        assert_eq!(concurrency_csv(&r), "wall_seconds,running_tasks\n");
        assert!(summary_text(&r).contains("n/a"));
    }

    #[test]
    fn hand_built_journal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let cfg: ExperimentConfig = serde_json::from_value(json!({
            "problem": {"name": "dtlz2", "n": 3, "m": 2},
            "optimizer": {"max_trials": 2},
            "journal_path": "j.jsonl", "report_dir": "r"
        }))
        .unwrap();
        let mut w = JournalWriter::create(&path, &new_header(0, "h", "e")).unwrap();
        w.append(EventKind::ExperimentStarted, json!({"config": cfg})).unwrap();
        let timing = |g: f64| {
            json!({"proposed_at": 0.0, "submitted_at": 0.0, "started_at": 1.0, "finished_at": 2.0,
                   "received_at": 2.0, "finalized_at": 2.0, "generation_seconds": g})
        };
        w.append(EventKind::TrialFinalized, json!({"trial_id": 0, "status": "valid", "objectives": [0.0, 1.0], "timing": timing(2.0)}))
            .unwrap();
        w.append(EventKind::TrialFinalized, json!({"trial_id": 1, "status": "invalid", "objectives": null, "timing": timing(0.0)}))
            .unwrap();
        let r = build_report(&read_journal(&path).unwrap()).unwrap();
        assert_eq!(r.hv_vs_trials.len(), 2);
        assert!((r.hv_vs_trials[0].1 - 1.1 * 0.1).abs() < 1e-12);
        assert_eq!(r.hv_vs_trials[0].1, r.hv_vs_trials[1].1);
        assert_eq!(r.counts, StatusCounts { valid: 1, invalid: 1, failed: 0 });
        // generation 2 s, queue 2 s, execution 2 s in total
        assert!((r.fraction("generation") - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.fraction("execution") - 1.0 / 3.0).abs() < 1e-12);
        let sum: f64 = r.overhead.iter().map(|o| o.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(summary_text(&r).contains("valid 1, invalid 1, failed 0"));
    }
}
