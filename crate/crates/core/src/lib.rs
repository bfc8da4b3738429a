//! Multi-objective optimization core: ask/tell optimizer (Bayesian and
//! genetic strategies), Pareto-set maintenance, hypervolume indicators and
//! the benchmark problems used by the closure tests.

pub mod hypervolume;
pub mod optimizer;
pub mod pareto;
pub mod problems;
pub mod rng;
pub mod space;

pub use hypervolume::{hypervolume_exact, hypervolume_mc, HvEstimate, McHypervolumeTracker};
pub use optimizer::{
    GenerationMode, Optimizer, OptimizerConfig, OptimizerError, OptimizerEvent, Outcome,
    SharedOptimizer, Strategy, TimingTrace, TrialRecord, TrialStatus,
};
pub use pareto::{dominates, pareto_filter, ParetoError};
pub use problems::{EvaluationOutcome, ProblemError, ProblemSpec};
pub use space::{DesignPoint, DesignSpace, SpaceError};
