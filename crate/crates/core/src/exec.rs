//! Bounded worker pool for backend fan-out.
//!
//! Results always come back in input order, and when several items fail the
//! error of the earliest one is reported, so outputs never depend on which
//! call finished first.

use std::sync::Arc;

use rayon::prelude::*;

#[derive(Clone)]
pub struct Workers {
    pool: Arc<rayon::ThreadPool>,
    jobs: usize,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("jobs", &self.jobs).finish()
    }
}

impl Workers {
    pub fn new(jobs: usize) -> Self {
        let jobs = jobs.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .thread_name(|i| format!("opsum-worker-{i}"))
            .build()
            .expect("failed to build worker pool");
        Self {
            pool: Arc::new(pool),
            jobs,
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn try_map<T, R, E, F>(&self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
    {
        let results: Vec<Result<R, E>> = self.pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .map(|(i, item)| f(i, item))
                .collect()
        });
        results.into_iter().collect()
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        self.pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .map(|(i, item)| f(i, item))
                .collect()
        })
    }
}

impl Default for Workers {
    fn default() -> Self {
        Self::sequential()
    }
}
