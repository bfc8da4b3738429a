//! Benchmark problems for closure tests, keyed by name in a small registry.

mod detector;
mod dtlz2;
mod front;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{DesignSpace, SpaceError};

pub use detector::{DetectorToy, DETECTOR_TOY_DEFINITION};
pub use dtlz2::{dtlz2_eval, dtlz2_g};
pub use front::{true_front_sample, FrontSampling};

pub const DTLZ2: &str = "dtlz2";
pub const DETECTOR_TOY: &str = "detector-toy";

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem '{0}'")]
    Unknown(String),
    #[error("invalid problem configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Design(#[from] SpaceError),
    #[error("operation not supported for problem '{0}'")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    None,
    OverlapCheck,
}

/// Problem selection as it travels in configs and task envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub constraint_mode: ConstraintMode,
    /// Simulated evaluation cost in seconds.
    #[serde(default)]
    pub eval_delay: f64,
}

impl ProblemSpec {
    pub fn dtlz2(n: usize, m: usize) -> Self {
        Self { name: DTLZ2.into(), n, m, constraint_mode: ConstraintMode::None, eval_delay: 0.0 }
    }

    pub fn detector_toy() -> Self {
        Self {
            name: DETECTOR_TOY.into(),
            n: 7,
            m: 3,
            constraint_mode: ConstraintMode::OverlapCheck,
            eval_delay: 0.0,
        }
    }

    pub fn with_delay(mut self, seconds: f64) -> Self {
        self.eval_delay = seconds;
        self
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if !(self.eval_delay.is_finite() && self.eval_delay >= 0.0) {
            return Err(ProblemError::Config(format!(
                "eval_delay must be a non-negative number, got {}",
                self.eval_delay
            )));
        }
        match self.name.as_str() {
            DTLZ2 => {
                if self.m < 2 {
                    return Err(ProblemError::Config(format!("dtlz2 needs m >= 2, got m = {}", self.m)));
                }
                if self.n < self.m {
                    return Err(ProblemError::Config(format!(
                        "dtlz2 needs n >= m, got n = {} and m = {}",
                        self.n, self.m
                    )));
                }
                Ok(())
            }
            DETECTOR_TOY => {
                let def = DetectorToy::builtin();
                if self.n != def.n() || self.m != def.m() {
                    return Err(ProblemError::Config(format!(
                        "detector-toy has n = {} and m = {}, got n = {} and m = {}",
                        def.n(),
                        def.m(),
                        self.n,
                        self.m
                    )));
                }
                Ok(())
            }
            other => Err(ProblemError::Unknown(other.to_string())),
        }
    }

    pub fn design_space(&self) -> Result<DesignSpace, ProblemError> {
        self.validate()?;
        Ok(DesignSpace::unit(self.n)?)
    }

    /// Default hypervolume reference point.
    pub fn default_reference_point(&self) -> Vec<f64> {
        match self.name.as_str() {
            DETECTOR_TOY => DetectorToy::builtin().reference_point().to_vec(),
            _ => vec![1.1; self.m],
        }
    }

    /// Componentwise lower bound of attainable objective values.
    pub fn objective_lower_bound(&self) -> Vec<f64> {
        vec![0.0; self.m]
    }

    /// Evaluate without the simulated delay.
    pub fn evaluate_now(&self, x: &[f64]) -> Result<EvaluationOutcome, ProblemError> {
        let start = Instant::now();
        let objectives = match self.name.as_str() {
            DTLZ2 => {
                self.validate()?;
                DesignSpace::unit(self.n)?.check(x)?;
                Some(dtlz2_eval(x, self.m))
            }
            DETECTOR_TOY => {
                self.validate()?;
                let toy = DetectorToy::builtin();
                DesignSpace::unit(self.n)?.check(x)?;
                if self.constraint_mode == ConstraintMode::OverlapCheck && toy.violates(x) {
                    None
                } else {
                    Some(toy.objectives(x))
                }
            }
            other => return Err(ProblemError::Unknown(other.to_string())),
        };
        Ok(EvaluationOutcome::new(objectives, start.elapsed().as_secs_f64()))
    }

    /// Evaluate, sleeping `eval_delay` seconds first.
    pub fn evaluate(&self, x: &[f64]) -> Result<EvaluationOutcome, ProblemError> {
        let start = Instant::now();
        if self.eval_delay > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(self.eval_delay));
        }
        let mut outcome = self.evaluate_now(x)?;
        outcome.eval_duration = start.elapsed().as_secs_f64();
        Ok(outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub objectives: Option<Vec<f64>>,
    pub status: EvalStatus,
    pub eval_duration: f64,
}

impl EvaluationOutcome {
    fn new(objectives: Option<Vec<f64>>, eval_duration: f64) -> Self {
        let status = if objectives.is_some() { EvalStatus::Valid } else { EvalStatus::Invalid };
        Self { objectives, status, eval_duration }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ProblemSpec::dtlz2(6, 2).validate().is_ok());
        assert!(matches!(ProblemSpec::dtlz2(2, 3).validate(), Err(ProblemError::Config(_))));
        assert!(matches!(ProblemSpec::dtlz2(3, 1).validate(), Err(ProblemError::Config(_))));
        let mut bad = ProblemSpec::dtlz2(6, 2);
        bad.name = "zdt1".into();
        assert_eq!(bad.validate(), Err(ProblemError::Unknown("zdt1".into())));
        assert!(ProblemSpec::detector_toy().validate().is_ok());
    }

    #[test]
    fn out_of_bounds_rejected() {
        let spec = ProblemSpec::dtlz2(2, 2);
        assert!(matches!(spec.evaluate(&[1.5, 0.5]), Err(ProblemError::Design(_))));
    }

    #[test]
    fn eval_delay_is_honoured() {
        let spec = ProblemSpec::detector_toy().with_delay(0.05);
        let start = Instant::now();
        let out = spec.evaluate(&DetectorToy::builtin().anchor().0).unwrap();
        assert!(start.elapsed().as_secs_f64() >= 0.05);
        assert!(out.eval_duration >= 0.05);
    }
}
