//! Path-parallel execution with results in path order.

use rayon::prelude::*;

use crate::error::Result;

/// Runs independent per-path jobs on a worker pool.
///
/// Results come back indexed by path, and the first error in path order
/// wins, so the output does not depend on the number of workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ensemble {
    /// `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Ensemble {
    pub fn new(workers: Option<usize>) -> Self {
        Ensemble { workers }
    }

    pub fn sequential() -> Self {
        Ensemble { workers: Some(1) }
    }

    pub fn map<T, F>(&self, n_paths: usize, job: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let run = || -> Vec<Result<T>> {
            (0..n_paths as u64).into_par_iter().map(&job).collect()
        };
        let results = match self.workers {
            Some(1) => (0..n_paths as u64).map(&job).collect(),
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("worker pool")
                .install(run),
            None => run(),
        };
        results.into_iter().collect()
    }
}
