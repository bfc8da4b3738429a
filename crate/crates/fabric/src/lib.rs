//! Task fabric for optimization experiments: task envelopes and the
//! function registry, interchangeable runners, the result broker, the
//! experiment journal and the driver loop that ties them to the optimizer.

pub mod broker;
pub mod canonical;
pub mod clock;
pub mod config;
pub mod dedup;
pub mod distributed;
pub mod driver;
pub mod envelope;
pub mod execute;
pub mod journal;
pub mod registry;
pub mod report;
pub mod retry;
pub mod runners;
pub mod wire;

pub use config::{ConfigError, ExperimentConfig, HvConfig, RunnerConfig};
pub use driver::{run_experiment, DriverError, DriverOptions, Experiment, RunControl, RunOutcome, RunSummary};
pub use envelope::{FunctionRef, ResultEnvelope, ResultStatus, TaskEnvelope, TaskParams};
pub use registry::Registry;
pub use runners::{Runner, RunnerKind};
