//! Runs an experiment: one policy instance per (mesh, environment) pair,
//! a pull-based queue feeding workers over TCP, and the run log.

pub mod log;
pub mod meter;
pub mod scheduler;
pub mod server;
pub mod worker;

pub use log::{LogRecord, RunManifest, RunStatus, Totals};
pub use meter::{Throughput, ThroughputMeter};
pub use scheduler::{Assignment, Completion, Scheduler, SchedulerError, WorkItem};
pub use server::{run_experiment, OrchestratorError, RunOptions, RunSummary};
pub use worker::{run_worker, WorkerError, WorkerOptions, WorkerReport};

use crate::experiment::Experiment;
use crate::policy::{HistoryEntry, PolicyError, ResultSummary, Step};

/// Proposal count per pair, found by driving each policy with empty
/// results. Exact for open-loop policies.
pub fn dry_run(exp: &Experiment) -> Result<Vec<u64>, PolicyError> {
    let mut counts = Vec::with_capacity(exp.pairs.len());
    for pair in 0..exp.pairs.len() {
        let mut policy = exp.make_policy(pair)?;
        let mut history = Vec::new();
        loop {
            match policy.next_batch(&history)? {
                Step::Done => break,
                Step::Batch(b) if b.is_empty() => break,
                Step::Batch(b) => history.extend(b.into_iter().map(|p| HistoryEntry {
                    summary: ResultSummary { id: p.id, is_correct: None, score: None },
                    proposal: p,
                })),
            }
        }
        counts.push(history.len() as u64);
    }
    Ok(counts)
}
