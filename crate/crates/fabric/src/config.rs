//! Experiment configuration: one canonical-JSON document holding the
//! problem, optimizer, runner, journal and report settings.

use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};

use optifab_core::hypervolume::{DEFAULT_MC_SAMPLES, MIN_MC_SAMPLES};
use optifab_core::{OptimizerConfig, OptimizerError, ProblemSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical};
use crate::envelope::DEFAULT_MAX_ATTEMPTS;
use crate::runners::RunnerKind;

/// A configuration problem, naming the offending field.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

fn default_concurrency() -> usize {
    1
}
fn default_heartbeat() -> f64 {
    5.0
}
fn default_grace() -> u32 {
    3
}
fn default_requeue() -> u32 {
    5
}
fn default_timeout() -> f64 {
    300.0
}
fn default_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}
fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    pub kind: RunnerKind,
    /// Execution slots (in-process and batch kinds).
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Injected scheduling delay in seconds (batch kind).
    #[serde(default)]
    pub queue_latency: f64,
    /// Where the coordinator listens (distributed kind).
    #[serde(default)]
    pub listen_address: Option<String>,
    /// Where workers connect; informational for the driver.
    #[serde(default)]
    pub coordinator_address: Option<String>,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval: f64,
    #[serde(default = "default_grace")]
    pub worker_grace: u32,
    #[serde(default = "default_requeue")]
    pub requeue_limit: u32,
    /// Per-task timeout in seconds.
    #[serde(default = "default_timeout")]
    pub task_timeout: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            kind: RunnerKind::InProcess,
            concurrency: 1,
            queue_latency: 0.0,
            listen_address: None,
            coordinator_address: None,
            heartbeat_interval: default_heartbeat(),
            worker_grace: default_grace(),
            requeue_limit: default_requeue(),
            task_timeout: default_timeout(),
            max_attempts: default_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvConfig {
    /// Defaults to the problem's reference point.
    #[serde(default)]
    pub reference_point: Option<Vec<f64>>,
    /// Monte-Carlo samples, used beyond four objectives.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Defaults to the optimizer seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for HvConfig {
    fn default() -> Self {
        Self { reference_point: None, mc_samples: DEFAULT_MC_SAMPLES, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to a prefix of the config hash.
    #[serde(default)]
    pub experiment_id: Option<String>,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub runner: RunnerConfig,
    pub journal_path: PathBuf,
    #[serde(default)]
    pub hv: HvConfig,
    pub report_dir: PathBuf,
}

fn check_address(field: &str, addr: &str) -> Result<(), ConfigError> {
    match addr.to_socket_addrs().map(|mut it| it.next()) {
        Ok(Some(_)) => Ok(()),
        _ => Err(ConfigError::new(field, format!("'{addr}' is not a host:port address"))),
    }
}

fn optimizer_field(e: &OptimizerError) -> String {
    // Optimizer messages lead with the dotted field name.
    let text = e.to_string();
    text.split_whitespace()
        .find(|w| w.starts_with("optimizer."))
        .map(|w| w.trim_end_matches(|c: char| !c.is_alphanumeric() && c != '_').to_string())
        .unwrap_or_else(|| "optimizer".into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            ConfigError::new(field, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Cross-field checks; run before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem.validate().map_err(|e| ConfigError::new("problem", e.to_string()))?;
        self.optimizer
            .validate(self.problem.n)
            .map_err(|e| ConfigError::new(optimizer_field(&e), e.to_string()))?;
        let r = &self.runner;
        if r.concurrency < 1 {
            return Err(ConfigError::new("runner.concurrency", "must be at least 1"));
        }
        if !(r.queue_latency.is_finite() && r.queue_latency >= 0.0) {
            return Err(ConfigError::new("runner.queue_latency", "must be a non-negative number of seconds"));
        }
        if !(r.heartbeat_interval.is_finite() && r.heartbeat_interval > 0.0) {
            return Err(ConfigError::new("runner.heartbeat_interval", "must be positive"));
        }
        if r.worker_grace < 1 {
            return Err(ConfigError::new("runner.worker_grace", "must be at least 1"));
        }
        if !(r.task_timeout.is_finite() && r.task_timeout > 0.0) {
            return Err(ConfigError::new("runner.task_timeout", "must be positive"));
        }
        if r.max_attempts < 1 {
            return Err(ConfigError::new("runner.max_attempts", "must be at least 1"));
        }
        if r.kind == RunnerKind::Distributed {
            match &r.listen_address {
                Some(a) => check_address("runner.listen_address", a)?,
                None => {
                    return Err(ConfigError::new("runner.listen_address", "required for the distributed runner"))
                }
            }
        }
        if let Some(a) = &r.coordinator_address {
            check_address("runner.coordinator_address", a)?;
        }
        if let Some(rp) = &self.hv.reference_point {
            if rp.len() != self.problem.m {
                return Err(ConfigError::new(
                    "hv.reference_point",
                    format!("has {} coordinates, problem has {} objectives", rp.len(), self.problem.m),
                ));
            }
            if rp.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new("hv.reference_point", "must be finite"));
            }
        }
        if self.hv.mc_samples < MIN_MC_SAMPLES {
            return Err(ConfigError::new("hv.mc_samples", format!("must be at least {MIN_MC_SAMPLES}")));
        }
        if let Some(id) = &self.experiment_id {
            if id.is_empty() || id.contains(':') || id.contains('/') {
                return Err(ConfigError::new("experiment_id", "must be non-empty without ':' or '/'"));
            }
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(to_canonical(self).expect("config serializes").as_bytes())
    }

    pub fn experiment_id(&self) -> String {
        self.experiment_id.clone().unwrap_or_else(|| format!("exp-{}", &self.config_hash()[..12]))
    }

    pub fn reference_point(&self) -> Vec<f64> {
        self.hv.reference_point.clone().unwrap_or_else(|| self.problem.default_reference_point())
    }

    pub fn hv_seed(&self) -> u64 {
        self.hv.seed.unwrap_or(self.optimizer.rng_seed)
    }
}
