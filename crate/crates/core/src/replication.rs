//! Independent replications on a worker pool.

use rayon::prelude::*;

use crate::engine::{run_replication, ReplicationOutput, RunOptions};
use crate::model::SimulationInstance;

#[derive(Debug, thiserror::Error)]
#[error("could not build worker pool: {0}")]
pub struct PoolError(String);

/// Runs replications `0..n` on `jobs` workers (0 = all cores) and maps each
/// output through `consume` on the worker that produced it, so large event
/// logs need not be held at once. Results come back in replication order
/// whatever the completion order.
pub fn run_replications<T, F>(
    inst: &SimulationInstance,
    n: u32,
    jobs: usize,
    options: &RunOptions,
    consume: F,
) -> Result<Vec<T>, PoolError>
where
    T: Send,
    F: Fn(ReplicationOutput) -> T + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PoolError(e.to_string()))?;
    Ok(pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| consume(run_replication(inst, i, options)))
            .collect()
    }))
}
