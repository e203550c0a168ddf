//! Execution helpers for the data-parallel loops (fit restarts, backtest
//! blocks). With the `parallel` feature enabled, work runs on rayon; the
//! `REGIME_VI_THREADS` environment variable caps the pool size, and a cap of
//! 1 forces the sequential path. Without the feature everything is
//! sequential. Callers must keep results independent of scheduling.

/// Thread cap from `REGIME_VI_THREADS`, if set and parseable.
pub fn max_threads() -> Option<usize> {
    std::env::var("REGIME_VI_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Maps `f` over `0..count`, preserving index order in the output.
pub fn run_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match max_threads() {
            Some(1) => run_indexed_seq(count, f),
            Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
                Err(_) => run_indexed_seq(count, f),
            },
            None => (0..count).into_par_iter().map(&f).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_indexed_seq(count, f)
    }
}

/// Sequential fallback, always available (used directly by the benches for
/// the parallel-vs-sequential comparison).
pub fn run_indexed_seq<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}
