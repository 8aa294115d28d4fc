//! Worker-pool handle shared by the parallel stages.
//!
//! Every parallel stage in this crate partitions work into independent items
//! and gathers results in index order, so outputs do not depend on the pool
//! size.

use rayon::ThreadPool;

pub struct WorkerPool {
    pool: Option<ThreadPool>,
    threads: usize,
}

impl WorkerPool {
    /// A pool with `threads` workers. Falls back to running inline where
    /// threads cannot be spawned (e.g. plain wasm32).
    pub fn new(threads: usize) -> Self {
        let threads = threads.max(1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok();
        Self { pool, threads }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("threads", &self.threads).finish()
    }
}
