//! Parallel restart execution and wall clocks.

use std::time::Instant;

use rayon::prelude::*;

use neon_core::acq_opt::{LbfgsResult, RestartExecutor, RestartTask};
use neon_core::bo::Clock;
use neon_core::Result;

use crate::error::Error;

/// Runs restarts on a rayon pool. Results come back in restart order, so
/// the outcome never depends on the thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self, Error> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    /// Thread count from `NEON_THREADS`, else all available cores.
    pub fn from_env() -> Result<Self, Error> {
        let threads = match std::env::var("NEON_THREADS") {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| Error::Config(format!("NEON_THREADS must be a positive integer, got {v:?}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl RestartExecutor for RayonExecutor {
    fn run(&self, n: usize, task: &RestartTask<'_>) -> Vec<Result<LbfgsResult>> {
        self.pool.install(|| (0..n).into_par_iter().map(task).collect())
    }
}

pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
