//! Worker-side execution of a single envelope.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::Duration;

use crossbeam_channel::bounded;
use optifab_core::problems::EvalStatus;

use crate::clock;
use crate::envelope::{ResultEnvelope, TaskEnvelope};
use crate::registry::Registry;

pub const DEFAULT_TASK_TIMEOUT: Duration = Duration::from_secs(300);

/// Runs the envelope's function and maps the outcome: valid objectives,
/// constraint violation to invalid, error/panic/timeout to failed.
///
/// On timeout the evaluation thread is abandoned; evaluations are pure, so
/// the only cost is the detached thread.
pub fn execute(registry: &Registry, envelope: &TaskEnvelope, worker_id: &str, timeout: Duration) -> ResultEnvelope {
    let started = clock::now();
    let fail = |msg: String| ResultEnvelope::failed(&envelope.task_id, msg, started, clock::now(), worker_id);
    if let Err(e) = envelope.validate() {
        return fail(e.to_string());
    }
    let func = match registry.resolve(&envelope.function) {
        Ok(f) => f,
        Err(e) => return fail(e.to_string()),
    };
    let params = envelope.params.clone();
    let (tx, rx) = bounded(1);
    let spawned = thread::Builder::new().name(format!("eval-{}", envelope.task_id)).spawn(move || {
        let out = catch_unwind(AssertUnwindSafe(|| func(&params)))
            .unwrap_or_else(|_| Err("evaluation panicked".to_string()));
        let _ = tx.send(out);
    });
    if let Err(e) = spawned {
        return fail(format!("could not start evaluation: {e}"));
    }
    match rx.recv_timeout(timeout) {
        Ok(Ok(outcome)) => {
            let finished = clock::now();
            match (outcome.status, outcome.objectives) {
                (EvalStatus::Valid, Some(f)) if f.iter().all(|v| v.is_finite()) => {
                    ResultEnvelope::valid(&envelope.task_id, f, started, finished, worker_id)
                }
                (EvalStatus::Valid, _) => fail("evaluation returned missing or non-finite objectives".into()),
                (EvalStatus::Invalid, _) => ResultEnvelope::invalid(&envelope.task_id, started, finished, worker_id),
            }
        }
        Ok(Err(msg)) => fail(msg),
        Err(_) => fail(format!("timed out after {:.3} s", timeout.as_secs_f64())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{FunctionRef, ResultStatus, TaskParams};
    use optifab_core::problems::DetectorToy;
    use optifab_core::ProblemSpec;

    fn env(key: &str, version: &str, design: Vec<f64>, problem: ProblemSpec) -> TaskEnvelope {
        let f = FunctionRef { registry_key: key.into(), version: version.into() };
        TaskEnvelope::new("exp", 0, 1, 3, f, TaskParams { design, problem }, clock::now())
    }

    #[test]
    fn dtlz2_valid() {
        let r = execute(&Registry::builtin(), &env("dtlz2", "1.0", vec![0.5, 0.5], ProblemSpec::dtlz2(2, 2)), "w", DEFAULT_TASK_TIMEOUT);
        assert_eq!(r.status, ResultStatus::Valid);
        let f = r.objectives.unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f[0] - h).abs() < 1e-12 && (f[1] - h).abs() < 1e-12);
        assert!(r.finished_at >= r.started_at);
    }

    #[test]
    fn detector_exclusion_center_is_invalid() {
        let x = DetectorToy::builtin().exclusion_center().0;
        let r = execute(&Registry::builtin(), &env("detector-toy", "1.0", x, ProblemSpec::detector_toy()), "w", DEFAULT_TASK_TIMEOUT);
        assert_eq!(r.status, ResultStatus::Invalid);
        assert!(r.objectives.is_none());
    }

    #[test]
    fn unknown_key_and_version_mismatch_fail_fast() {
        let r = execute(&Registry::builtin(), &env("nope", "1.0", vec![0.5, 0.5], ProblemSpec::dtlz2(2, 2)), "w", DEFAULT_TASK_TIMEOUT);
        assert_eq!(r.status, ResultStatus::Failed);
        assert!(r.error_text.unwrap().contains("nope"));
        let slow = ProblemSpec::dtlz2(2, 2).with_delay(5.0);
        let t = std::time::Instant::now();
        let r = execute(&Registry::builtin(), &env("dtlz2", "2.0", vec![0.5, 0.5], slow), "w", DEFAULT_TASK_TIMEOUT);
        assert_eq!(r.status, ResultStatus::Failed);
        assert!(r.error_text.unwrap().contains("version"));
        assert!(t.elapsed() < Duration::from_secs(1));
    }

    #[test]
    fn timeout_and_errors_fail() {
        let slow = ProblemSpec::dtlz2(2, 2).with_delay(2.0);
        let r = execute(&Registry::builtin(), &env("dtlz2", "1.0", vec![0.5, 0.5], slow), "w", Duration::from_millis(100));
        assert_eq!(r.status, ResultStatus::Failed);
        assert!(r.error_text.unwrap().contains("timed out"));
        let out_of_bounds = env("dtlz2", "1.0", vec![1.5, 0.5], ProblemSpec::dtlz2(2, 2));
        assert_eq!(execute(&Registry::builtin(), &out_of_bounds, "w", DEFAULT_TASK_TIMEOUT).status, ResultStatus::Failed);
        let mut reg = Registry::new();
        reg.register("boom", "1.0", |_| panic!("kaboom")).unwrap();
        let r = execute(&reg, &env("boom", "1.0", vec![0.5, 0.5], ProblemSpec::dtlz2(2, 2)), "w", DEFAULT_TASK_TIMEOUT);
        assert_eq!(r.error_text.as_deref(), Some("evaluation panicked"));
    }
}
