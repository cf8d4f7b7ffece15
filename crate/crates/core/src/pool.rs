//! Bounded data parallelism for stages that fan out over records.

use rayon::prelude::*;

/// Map `f` over `items` on at most `jobs` worker threads, preserving order.
pub fn bounded_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("building worker pool");
    pool.install(|| items.par_iter().map(f).collect())
}
