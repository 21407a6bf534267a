//! Index-ordered map over independent tasks, on a rayon pool when the
//! `parallel` feature is enabled and sequentially otherwise.

/// How independent trials are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Worker pool of the given size; `0` uses every available core.
    Threads(usize),
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::Threads(0)
    }
}

impl Parallelism {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(workers)
        }
    }
}

/// `(0..len).map(f)` collected in index order. Output never depends on the
/// schedule.
pub fn map_indexed<T, F>(len: usize, parallelism: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match parallelism {
        Parallelism::Sequential => (0..len).map(f).collect(),
        Parallelism::Threads(workers) => threaded(len, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn threaded<T, F>(len: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..len).into_par_iter().map(&f).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(err) => {
            log::warn!("thread pool unavailable ({err}); running on the global pool");
            run()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn threaded<T, F>(len: usize, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}
