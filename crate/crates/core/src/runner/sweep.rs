//! Independent runs on a pool of worker threads.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::Result;
use crate::integrate::RunReport;

use super::config::RunConfig;
use super::output::simulate;

#[derive(Debug, Clone)]
pub struct SweepJob {
    pub config: RunConfig,
    pub out_dir: Option<PathBuf>,
}

/// Runs every job, at most `workers` at a time. Each run owns its state;
/// results come back in job order.
pub fn run_sweep(jobs: &[SweepJob], workers: usize) -> Vec<Result<RunReport>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunReport>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = workers.clamp(1, jobs.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let r = simulate(&job.config, job.out_dir.as_deref(), None).map(|o| o.report);
                results.lock().expect("no worker panicked while holding the lock")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
