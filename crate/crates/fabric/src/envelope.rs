//! Wire-level units of dispatch and return.

use optifab_core::ProblemSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::SCHEMA_VERSION;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionRef {
    pub registry_key: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    pub design: Vec<f64>,
    pub problem: ProblemSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEnvelope {
    pub schema_version: String,
    pub task_id: String,
    pub experiment_id: String,
    pub trial_id: u64,
    pub attempt: u32,
    pub max_attempts: u32,
    pub function: FunctionRef,
    pub params: TaskParams,
    /// Seconds since the Unix epoch.
    pub submitted_at: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("malformed task id '{0}'")]
    TaskId(String),
    #[error("attempt {attempt} outside [1, {max_attempts}]")]
    Attempt { attempt: u32, max_attempts: u32 },
    #[error("unsupported schema version '{0}'")]
    Schema(String),
    #[error("experiment id must be non-empty")]
    ExperimentId,
}

pub fn make_task_id(experiment_id: &str, trial_id: u64, attempt: u32) -> String {
    format!("{experiment_id}:{trial_id}:{attempt}")
}

/// Splits a task id back into (experiment, trial, attempt). The experiment
/// id may itself contain ':'.
pub fn parse_task_id(task_id: &str) -> Result<(String, u64, u32), EnvelopeError> {
    let bad = || EnvelopeError::TaskId(task_id.to_string());
    let mut parts = task_id.rsplitn(3, ':');
    let attempt = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let trial = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let exp = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
    Ok((exp.to_string(), trial, attempt))
}

impl TaskEnvelope {
    pub fn new(
        experiment_id: &str,
        trial_id: u64,
        attempt: u32,
        max_attempts: u32,
        function: FunctionRef,
        params: TaskParams,
        submitted_at: f64,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            task_id: make_task_id(experiment_id, trial_id, attempt),
            experiment_id: experiment_id.into(),
            trial_id,
            attempt,
            max_attempts,
            function,
            params,
            submitted_at,
        }
    }

    pub fn validate(&self) -> Result<(), EnvelopeError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(EnvelopeError::Schema(self.schema_version.clone()));
        }
        if self.experiment_id.is_empty() {
            return Err(EnvelopeError::ExperimentId);
        }
        if self.attempt < 1 || self.attempt > self.max_attempts {
            return Err(EnvelopeError::Attempt { attempt: self.attempt, max_attempts: self.max_attempts });
        }
        let parsed = parse_task_id(&self.task_id)?;
        if parsed != (self.experiment_id.clone(), self.trial_id, self.attempt) {
            return Err(EnvelopeError::TaskId(self.task_id.clone()));
        }
        Ok(())
    }

    /// The same task, next attempt, resubmitted at `now`.
    pub fn next_attempt(&self, now: f64) -> Self {
        let mut e = self.clone();
        e.attempt += 1;
        e.task_id = make_task_id(&e.experiment_id, e.trial_id, e.attempt);
        e.submitted_at = now;
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Valid,
    Invalid,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultEnvelope {
    pub schema_version: String,
    pub task_id: String,
    pub status: ResultStatus,
    pub objectives: Option<Vec<f64>>,
    pub error_text: Option<String>,
    pub started_at: f64,
    pub finished_at: f64,
    pub worker_id: String,
}

impl ResultEnvelope {
    pub fn valid(task_id: &str, objectives: Vec<f64>, started_at: f64, finished_at: f64, worker_id: &str) -> Self {
        Self::build(task_id, ResultStatus::Valid, Some(objectives), None, started_at, finished_at, worker_id)
    }

    pub fn invalid(task_id: &str, started_at: f64, finished_at: f64, worker_id: &str) -> Self {
        Self::build(task_id, ResultStatus::Invalid, None, None, started_at, finished_at, worker_id)
    }

    pub fn failed(task_id: &str, error: impl Into<String>, started_at: f64, finished_at: f64, worker_id: &str) -> Self {
        Self::build(task_id, ResultStatus::Failed, None, Some(error.into()), started_at, finished_at, worker_id)
    }

    fn build(
        task_id: &str,
        status: ResultStatus,
        objectives: Option<Vec<f64>>,
        error_text: Option<String>,
        started_at: f64,
        finished_at: f64,
        worker_id: &str,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            task_id: task_id.into(),
            status,
            objectives,
            error_text,
            started_at,
            finished_at: finished_at.max(started_at),
            worker_id: worker_id.into(),
        }
    }

    pub fn trial_and_attempt(&self) -> Result<(u64, u32), EnvelopeError> {
        parse_task_id(&self.task_id).map(|(_, t, a)| (t, a))
    }

    /// Same status and objectives (timing and worker may differ).
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.status == other.status && self.objectives == other.objectives
    }
}
