//! What to do with a received result.

use crate::envelope::{ResultEnvelope, ResultStatus, TaskEnvelope};

#[derive(Debug, Clone, PartialEq)]
pub enum RetryDecision {
    Resubmit(TaskEnvelope),
    Finalize,
}

/// Failed results are retried while attempts remain; invalid results are
/// deterministic constraint violations and are never retried.
pub fn retry_policy(result: &ResultEnvelope, envelope: &TaskEnvelope, now: f64) -> RetryDecision {
    if result.status == ResultStatus::Failed && envelope.attempt < envelope.max_attempts {
        RetryDecision::Resubmit(envelope.next_attempt(now))
    } else {
        RetryDecision::Finalize
    }
}
