//! The optimize, dispatch, aggregate loop. Every state change is journaled
//! before it takes effect elsewhere, so an interrupted run can be resumed
//! from its journal.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use log::{info, warn};
use optifab_core::hypervolume::HvTracker;
use optifab_core::optimizer::ProposalInfo;
use optifab_core::{
    DesignPoint, GenerationMode, Optimizer, OptimizerError, OptimizerEvent, Outcome, TimingTrace,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::broker::{results_topic, Broker, ResultSink};
use crate::clock;
use crate::config::{ConfigError, ExperimentConfig};
use crate::dedup::{DedupGate, DedupVerdict};
use crate::distributed::{Coordinator, CoordinatorConfig};
use crate::envelope::{FunctionRef, ResultEnvelope, ResultStatus, TaskEnvelope, TaskParams};
use crate::journal::{new_header, read_journal, EventKind, JournalWriter};
use crate::registry::{Registry, BUILTIN_VERSION};
use crate::report::{build_report, write_csvs, Report};
use crate::retry::{retry_policy, RetryDecision};
use crate::runners::{BatchCommand, BatchRunner, InProcessRunner, Runner, RunnerKind};
use crate::wire::TopicRecord;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
    #[error("resume refused: {0}")]
    Resume(String),
    #[error("optimizer: {0}")]
    Optimizer(#[from] OptimizerError),
    #[error("runner: {0}")]
    Runner(String),
    #[error("report: {0}")]
    Report(String),
    #[error("interrupted")]
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// Stopped on request after a number of finalized trials.
    Stopped,
}

/// Knobs for one call to [`Experiment::run`].
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub interrupt: Option<Arc<AtomicBool>>,
    /// Return once this many trials are finalized in total.
    pub stop_after: Option<usize>,
}

struct Pending {
    envelope: TaskEnvelope,
    timing: TimingTrace,
    ready: Option<ResultEnvelope>,
}

/// A journaled experiment: optimizer, in-flight trials, and the journal
/// writer.
pub struct Experiment {
    cfg: ExperimentConfig,
    experiment_id: String,
    topic: String,
    journal: JournalWriter,
    opt: Optimizer,
    dedup: DedupGate,
    hv: HvTracker,
    pending: BTreeMap<u64, Pending>,
    to_submit: Vec<u64>,
    function: FunctionRef,
    resumed: bool,
}

fn outcome_of(r: &ResultEnvelope) -> Outcome {
    match r.status {
        ResultStatus::Valid => Outcome::Valid(r.objectives.clone().unwrap_or_default()),
        ResultStatus::Invalid => Outcome::Invalid,
        ResultStatus::Failed => Outcome::Failed,
    }
}

fn status_str(s: ResultStatus) -> &'static str {
    match s {
        ResultStatus::Valid => "valid",
        ResultStatus::Invalid => "invalid",
        ResultStatus::Failed => "failed",
    }
}

fn payload<T: serde::de::DeserializeOwned>(v: &Value, key: &str) -> Option<T> {
    v.get(key).and_then(|x| serde_json::from_value(x.clone()).ok())
}

impl Experiment {
    /// Opens a fresh experiment, or resumes the journal at the configured
    /// path when `resume` is set and the journal has a header.
    pub fn open(cfg: ExperimentConfig, resume: bool) -> Result<Self, DriverError> {
        cfg.validate()?;
        let space = cfg.problem.design_space().map_err(|e| ConfigError::new("problem", e.to_string()))?;
        let opt = Optimizer::new(space, cfg.problem.m, cfg.optimizer.clone())
            .map_err(|e| ConfigError::new("optimizer", e.to_string()))?;
        let hv = HvTracker::new(
            &cfg.problem.objective_lower_bound(),
            &cfg.reference_point(),
            cfg.hv.mc_samples,
            cfg.hv_seed(),
        )
        .map_err(|e| ConfigError::new("hv", e.to_string()))?;
        let hash = cfg.config_hash();
        let function = FunctionRef { registry_key: cfg.problem.name.clone(), version: BUILTIN_VERSION.into() };

        let contents = if resume { read_journal(&cfg.journal_path)? } else { Default::default() };
        let (experiment_id, journal) = match &contents.header {
            Some(h) if !contents.events.is_empty() => {
                if h.seed != cfg.optimizer.rng_seed {
                    return Err(DriverError::Resume(format!(
                        "journal seed {} differs from config seed {}",
                        h.seed, cfg.optimizer.rng_seed
                    )));
                }
                if h.config_hash != hash {
                    warn!("resuming with a config that differs from the journaled one");
                }
                if contents.corrupt_tail {
                    warn!("journal has a corrupt tail; resuming from the last valid event");
                }
                (h.experiment_id.clone(), JournalWriter::reopen(&cfg.journal_path, &contents)?)
            }
            _ => {
                let id = cfg.experiment_id();
                (id.clone(), JournalWriter::create(&cfg.journal_path, &new_header(cfg.optimizer.rng_seed, &hash, &id))?)
            }
        };
        let topic = results_topic(&experiment_id);
        let mut exp = Self {
            cfg,
            experiment_id,
            topic,
            journal,
            opt,
            dedup: DedupGate::new(),
            hv,
            pending: BTreeMap::new(),
            to_submit: Vec::new(),
            function,
            resumed: !contents.events.is_empty(),
        };
        if exp.resumed {
            exp.replay(&contents.events)?;
        }
        let payload = json!({
            "config": exp.cfg,
            "experiment_id": exp.experiment_id,
            "resumed": exp.resumed,
            "topic": exp.topic,
        });
        exp.journal.append(EventKind::ExperimentStarted, payload)?;
        Ok(exp)
    }

    fn replay(&mut self, events: &[crate::journal::JournalEvent]) -> Result<(), DriverError> {
        #[derive(Default)]
        struct Replayed {
            attempt: u32,
            timing: TimingTrace,
            last: Option<ResultEnvelope>,
            finalized: bool,
        }
        let mut trials: BTreeMap<u64, Replayed> = BTreeMap::new();
        let mut told = 0usize;
        for e in events {
            let p = &e.payload;
            let Some(id) = p.get("trial_id").and_then(Value::as_u64) else { continue };
            match e.kind {
                EventKind::TrialProposed => {
                    let design: Vec<f64> = payload(p, "design")
                        .ok_or_else(|| DriverError::Resume(format!("trial {id}: proposal without design")))?;
                    self.opt.restore_proposal(id, DesignPoint(design))?;
                    let t = trials.entry(id).or_default();
                    t.timing.proposed_at = Some(e.wall_time);
                    t.timing.generation_seconds = payload(p, "generation_seconds");
                }
                EventKind::TaskSubmitted => {
                    let t = trials.entry(id).or_default();
                    t.attempt = payload(p, "attempt").unwrap_or(1);
                    if t.timing.submitted_at.is_none() {
                        t.timing.submitted_at = payload(p, "submitted_at");
                    }
                }
                EventKind::ResultReceived => {
                    let r: ResultEnvelope = payload(p, "result")
                        .ok_or_else(|| DriverError::Resume(format!("trial {id}: result event without envelope")))?;
                    self.dedup.preload(r.clone());
                    let t = trials.entry(id).or_default();
                    t.timing.started_at = Some(r.started_at);
                    t.timing.finished_at = Some(r.finished_at);
                    t.timing.received_at = Some(e.wall_time);
                    t.last = Some(r);
                }
                EventKind::TrialFinalized => {
                    let status: String = payload(p, "status").unwrap_or_default();
                    let outcome = match status.as_str() {
                        "valid" => Outcome::Valid(payload(p, "objectives").unwrap_or_default()),
                        "invalid" => Outcome::Invalid,
                        _ => Outcome::Failed,
                    };
                    if let Outcome::Valid(f) = &outcome {
                        self.hv.insert(f);
                    }
                    self.opt.tell(id, outcome)?;
                    if let Some(timing) = payload::<TimingTrace>(p, "timing") {
                        if let Some(slot) = self.opt.trial_mut_timing(id) {
                            *slot = timing;
                        }
                    }
                    trials.entry(id).or_default().finalized = true;
                    told += 1;
                }
                _ => {}
            }
        }
        let now = clock::now();
        for (id, t) in trials.into_iter().filter(|(_, t)| !t.finalized) {
            let design = self.opt.trial(id).ok_or(OptimizerError::UnknownTrial(id))?.design.clone();
            let mut envelope = self.envelope(id, t.attempt.max(1), design.0, now);
            let mut ready = None;
            match t.last.filter(|r| r.trial_and_attempt().ok() == Some((id, envelope.attempt))) {
                Some(r) => match retry_policy(&r, &envelope, now) {
                    RetryDecision::Resubmit(next) => {
                        envelope = next;
                        self.to_submit.push(id);
                    }
                    RetryDecision::Finalize => ready = Some(r),
                },
                None => self.to_submit.push(id),
            }
            self.pending.insert(id, Pending { envelope, timing: t.timing, ready });
        }
        info!(
            "resumed experiment {}: {told} trials finalized, {} pending",
            self.experiment_id,
            self.pending.len()
        );
        Ok(())
    }

    fn envelope(&self, id: u64, attempt: u32, design: Vec<f64>, now: f64) -> TaskEnvelope {
        TaskEnvelope::new(
            &self.experiment_id,
            id,
            attempt,
            self.cfg.runner.max_attempts,
            self.function.clone(),
            TaskParams { design, problem: self.cfg.problem.clone() },
            now,
        )
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn was_resumed(&self) -> bool {
        self.resumed
    }

    pub fn finalized(&self) -> usize {
        self.opt.finalized_count()
    }

    pub fn is_complete(&self) -> bool {
        self.opt.remaining() == 0 && self.pending.is_empty()
    }

    fn journal_optimizer_events(&mut self) -> Result<(), DriverError> {
        for ev in self.opt.drain_events() {
            match ev {
                OptimizerEvent::ModelRefit { .. } => {
                    self.journal.append(EventKind::ModelRefit, serde_json::to_value(&ev).unwrap_or(Value::Null))?;
                }
                OptimizerEvent::Warning { message } => {
                    warn!("{message}");
                    self.journal.append(EventKind::Warning, json!({"code": "optimizer", "message": message}))?;
                }
            }
        }
        Ok(())
    }

    fn submit(&mut self, runner: &dyn Runner, id: u64) -> Result<(), DriverError> {
        let p = self.pending.get_mut(&id).expect("pending trial");
        p.envelope.submitted_at = clock::now();
        if p.timing.submitted_at.is_none() {
            p.timing.submitted_at = Some(p.envelope.submitted_at);
        }
        let env = p.envelope.clone();
        self.journal.append(
            EventKind::TaskSubmitted,
            json!({
                "trial_id": id,
                "task_id": env.task_id,
                "attempt": env.attempt,
                "submitted_at": env.submitted_at,
            }),
        )?;
        let _ = self.opt.mark_running(id);
        let _ = self.opt.note_attempt(id);
        runner.submit(env);
        Ok(())
    }

    fn propose_batch(&mut self, runner: &dyn Runner, k: usize) -> Result<(), DriverError> {
        let t0 = clock::now();
        let batch = self.opt.propose(k)?;
        let t1 = clock::now();
        let generation = (t1 - t0) / k as f64;
        let infos: Vec<ProposalInfo> = self.opt.last_proposals().to_vec();
        self.journal_optimizer_events()?;
        for ((id, design), info) in batch.iter().zip(infos) {
            self.journal.append(
                EventKind::TrialProposed,
                json!({
                    "trial_id": id,
                    "design": design,
                    "batch_size": k,
                    "generation_seconds": generation,
                    "source": info.source,
                    "weights": info.weights,
                    "acquisition_value": info.acquisition_value,
                }),
            )?;
            let timing = TimingTrace { proposed_at: Some(t1), generation_seconds: Some(generation), ..Default::default() };
            let envelope = self.envelope(*id, 1, design.0.clone(), t1);
            self.pending.insert(*id, Pending { envelope, timing, ready: None });
        }
        for (id, _) in batch {
            self.submit(runner, id)?;
        }
        Ok(())
    }

    fn warn_event(&mut self, code: &str, detail: Value) -> Result<(), DriverError> {
        let mut payload = json!({"code": code});
        if let (Value::Object(p), Value::Object(d)) = (&mut payload, detail) {
            p.extend(d);
        }
        self.journal.append(EventKind::Warning, payload)?;
        Ok(())
    }

    fn receive(&mut self, runner: &dyn Runner, r: ResultEnvelope) -> Result<(), DriverError> {
        let Ok((trial, attempt)) = r.trial_and_attempt() else {
            return self.warn_event("malformed_result", json!({"task_id": r.task_id}));
        };
        if !r.task_id.starts_with(&format!("{}:", self.experiment_id)) {
            return self.warn_event("foreign_result", json!({"task_id": r.task_id}));
        }
        match self.dedup.admit(&r) {
            DedupVerdict::First => {}
            DedupVerdict::Duplicate => {
                return self.warn_event("duplicate_result", json!({"task_id": r.task_id}));
            }
            DedupVerdict::Conflict(kept) => {
                warn!("conflicting results for {}; keeping the first", r.task_id);
                return self.warn_event(
                    "conflicting_result",
                    json!({
                        "task_id": r.task_id,
                        "kept_status": status_str(kept.status),
                        "dropped_status": status_str(r.status),
                    }),
                );
            }
        }
        let live = self.pending.get(&trial).is_some_and(|p| p.ready.is_none() && p.envelope.attempt == attempt);
        if !live {
            return self.warn_event("stale_result", json!({"task_id": r.task_id}));
        }
        let received_at = clock::now();
        self.journal.append(
            EventKind::TaskStarted,
            json!({
                "trial_id": trial,
                "task_id": r.task_id,
                "attempt": attempt,
                "worker_id": r.worker_id,
                "started_at": r.started_at,
            }),
        )?;
        self.journal.append(
            EventKind::ResultReceived,
            json!({
                "trial_id": trial,
                "task_id": r.task_id,
                "attempt": attempt,
                "status": status_str(r.status),
                "worker_id": r.worker_id,
                "started_at": r.started_at,
                "finished_at": r.finished_at,
                "received_at": received_at,
                "result": r,
            }),
        )?;
        let p = self.pending.get_mut(&trial).expect("live trial");
        p.timing.started_at = Some(r.started_at);
        p.timing.finished_at = Some(r.finished_at);
        p.timing.received_at = Some(received_at);
        match retry_policy(&r, &p.envelope, received_at) {
            RetryDecision::Resubmit(next) => {
                info!("task {} failed ({}); resubmitting as attempt {}", r.task_id, r.error_text.as_deref().unwrap_or(""), next.attempt);
                p.envelope = next;
                self.submit(runner, trial)?;
            }
            RetryDecision::Finalize => p.ready = Some(r),
        }
        Ok(())
    }

    fn finalize(&mut self, id: u64) -> Result<(), DriverError> {
        let mut p = self.pending.remove(&id).expect("pending trial");
        let r = p.ready.take().expect("ready trial");
        let mut outcome = outcome_of(&r);
        match self.opt.tell(id, outcome.clone()) {
            Ok(_) => {}
            Err(OptimizerError::InvalidOutcome { reason, .. }) => {
                warn!("trial {id}: unusable objectives ({reason}); recording as failed");
                self.warn_event("unusable_objectives", json!({"trial_id": id, "reason": reason}))?;
                outcome = Outcome::Failed;
                self.opt.tell(id, Outcome::Failed)?;
            }
            Err(e) => return Err(e.into()),
        }
        p.timing.finalized_at = Some(clock::now());
        if let Some(slot) = self.opt.trial_mut_timing(id) {
            *slot = p.timing.clone();
        }
        let (status, objectives) = match &outcome {
            Outcome::Valid(f) => ("valid", Some(f.clone())),
            Outcome::Invalid => ("invalid", None),
            Outcome::Failed => ("failed", None),
        };
        self.journal.append(
            EventKind::TrialFinalized,
            json!({
                "trial_id": id,
                "status": status,
                "objectives": objectives,
                "attempts": p.envelope.attempt,
                "worker_id": r.worker_id,
                "error_text": r.error_text,
                "timing": p.timing,
            }),
        )?;
        if let Some(f) = &objectives {
            self.hv.insert(f);
        }
        let est = self.hv.estimate();
        self.journal.append(
            EventKind::HvComputed,
            json!({
                "trials_finalized": self.opt.finalized_count(),
                "hypervolume": est.value,
                "stderr": est.stderr,
                "method": est.method,
            }),
        )?;
        Ok(())
    }

    fn finalize_ready(&mut self) -> Result<usize, DriverError> {
        let ready: Vec<u64> = match self.cfg.optimizer.generation_mode {
            GenerationMode::Synchronous => {
                if self.pending.values().all(|p| p.ready.is_some()) {
                    self.pending.keys().copied().collect()
                } else {
                    Vec::new()
                }
            }
            GenerationMode::Asynchronous => {
                self.pending.iter().filter(|(_, p)| p.ready.is_some()).map(|(&id, _)| id).collect()
            }
        };
        for &id in &ready {
            self.finalize(id)?;
        }
        Ok(ready.len())
    }

    /// Drives the experiment until every trial is finalized, the
    /// interrupt flag is raised, or `stop_after` is reached. Results are
    /// read from `results`, a subscription to this experiment's topic.
    pub fn run(
        &mut self,
        runner: &dyn Runner,
        results: &Receiver<TopicRecord>,
        ctl: &RunControl,
    ) -> Result<RunOutcome, DriverError> {
        for id in std::mem::take(&mut self.to_submit) {
            self.submit(runner, id)?;
        }
        let q = self.cfg.optimizer.batch_size;
        loop {
            self.finalize_ready()?;
            if ctl.stop_after.is_some_and(|n| self.opt.finalized_count() >= n) {
                return Ok(RunOutcome::Stopped);
            }
            if self.is_complete() {
                return Ok(RunOutcome::Completed);
            }
            let room = match self.cfg.optimizer.generation_mode {
                GenerationMode::Synchronous if self.pending.is_empty() => q,
                GenerationMode::Synchronous => 0,
                GenerationMode::Asynchronous => q.saturating_sub(self.pending.len()),
            };
            let k = room.min(self.opt.remaining());
            if k > 0 {
                self.propose_batch(runner, k)?;
                continue;
            }
            if ctl.interrupt.as_ref().is_some_and(|f| f.load(Ordering::SeqCst)) {
                return Err(DriverError::Interrupted);
            }
            match results.recv_timeout(Duration::from_millis(100)) {
                Ok(rec) => self.receive(runner, rec.envelope)?,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(DriverError::Runner("result subscription closed".into()));
                }
            }
        }
    }

    /// Archive objective vectors of the finalized trials, by trial id.
    pub fn archive(&self) -> Vec<(u64, Vec<f64>)> {
        self.opt.archive().iter().map(|t| (t.trial_id, t.objectives.clone().unwrap_or_default())).collect()
    }
}

/// Reads the journal and writes the report CSVs next to each other.
pub fn write_report(journal: &std::path::Path, dir: &std::path::Path) -> Result<Report, DriverError> {
    let contents = read_journal(journal)?;
    if contents.corrupt_tail {
        warn!("journal {} has a corrupt tail; reporting on the valid prefix", journal.display());
    }
    let report = build_report(&contents).map_err(|e| DriverError::Report(e.to_string()))?;
    write_csvs(&report, dir)?;
    Ok(report)
}

/// Options of a complete run that the config file does not carry.
#[derive(Default)]
pub struct DriverOptions {
    pub resume: bool,
    /// Child command for the batch runner.
    pub batch_command: Option<BatchCommand>,
    pub control: RunControl,
    /// Called with the coordinator's bound address (distributed kind).
    pub on_listen: Option<Box<dyn FnOnce(SocketAddr) + Send>>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub experiment_id: String,
    pub outcome: RunOutcome,
    pub journal_path: PathBuf,
    pub report: Report,
}

/// Directory holding the result topic logs of a run.
pub fn topic_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.report_dir.join("topics")
}

/// Runs an experiment end to end with the configured runner and an embedded
/// broker, then writes the report CSVs.
pub fn run_experiment(cfg: ExperimentConfig, mut opts: DriverOptions) -> Result<RunSummary, DriverError> {
    let mut exp = Experiment::open(cfg, opts.resume)?;
    let cfg = exp.config().clone();
    let dir = topic_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let broker = Broker::open(&dir)?;
    if !exp.was_resumed() {
        if let Some(p) = broker.topic_path(exp.topic()) {
            if p.exists() {
                std::fs::remove_file(&p)?;
            }
        }
    }
    let results = broker.subscribe(exp.topic(), broker.len(exp.topic())?)?;
    let timeout = Duration::from_secs_f64(cfg.runner.task_timeout);
    let sink: Arc<dyn ResultSink> = broker.clone();
    let runner: Box<dyn Runner> = match cfg.runner.kind {
        RunnerKind::InProcess => {
            Box::new(InProcessRunner::start(cfg.runner.concurrency, Registry::builtin(), sink, exp.topic(), timeout))
        }
        RunnerKind::BatchSubprocess => {
            let command = opts
                .batch_command
                .take()
                .ok_or_else(|| DriverError::Runner("batch runner needs a child command".into()))?;
            Box::new(BatchRunner::start(
                cfg.runner.concurrency,
                Duration::from_secs_f64(cfg.runner.queue_latency),
                command,
                sink,
                exp.topic(),
                timeout,
            ))
        }
        RunnerKind::Distributed => {
            let ccfg = CoordinatorConfig {
                listen_address: cfg.runner.listen_address.clone().unwrap_or_default(),
                experiment_id: exp.experiment_id().to_string(),
                topic: exp.topic().to_string(),
                manifest: Registry::builtin().manifest(),
                heartbeat_interval: Duration::from_secs_f64(cfg.runner.heartbeat_interval),
                worker_grace: cfg.runner.worker_grace,
                requeue_limit: cfg.runner.requeue_limit,
                expected_slots: cfg.runner.concurrency,
            };
            let c = Coordinator::start(ccfg, broker.clone()).map_err(|e| DriverError::Runner(e.to_string()))?;
            info!("coordinator listening on {}", c.local_addr());
            if let Some(cb) = opts.on_listen.take() {
                cb(c.local_addr());
            }
            Box::new(c)
        }
    };
    let outcome = exp.run(runner.as_ref(), &results, &opts.control);
    runner.shutdown();
    let outcome = outcome?;
    let report = write_report(&cfg.journal_path, &cfg.report_dir)?;
    Ok(RunSummary {
        experiment_id: exp.experiment_id().to_string(),
        outcome,
        journal_path: cfg.journal_path.clone(),
        report,
    })
}
