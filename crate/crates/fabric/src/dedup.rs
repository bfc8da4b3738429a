//! First-result-wins filter over an at-least-once result stream.

use std::collections::HashMap;

use crate::envelope::ResultEnvelope;

#[derive(Debug, Clone, PartialEq)]
pub enum DedupVerdict {
    First,
    Duplicate,
    /// Same task id, different outcome; carries the outcome that was kept.
    Conflict(ResultEnvelope),
}

#[derive(Debug, Default)]
pub struct DedupGate {
    seen: HashMap<String, ResultEnvelope>,
    duplicates: u64,
    conflicts: u64,
}

impl DedupGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, result: &ResultEnvelope) -> DedupVerdict {
        match self.seen.get(&result.task_id) {
            None => {
                self.seen.insert(result.task_id.clone(), result.clone());
                DedupVerdict::First
            }
            Some(first) if first.same_outcome(result) => {
                self.duplicates += 1;
                DedupVerdict::Duplicate
            }
            Some(first) => {
                self.conflicts += 1;
                DedupVerdict::Conflict(first.clone())
            }
        }
    }

    /// Marks a task id as already handled (used when replaying a journal).
    pub fn preload(&mut self, result: ResultEnvelope) {
        self.seen.entry(result.task_id.clone()).or_insert(result);
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn conflicts(&self) -> u64 {
        self.conflicts
    }

    pub fn accepted(&self) -> usize {
        self.seen.len()
    }
}
