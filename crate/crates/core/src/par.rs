//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper takes an [`Execution`] so callers (and the bench suite) can
//! pick a path at runtime. Without the `parallel` feature,
//! [`Execution::Parallel`] silently runs sequentially.

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `true` when work will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over an index range.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

static CONFIGURED: OnceLock<usize> = OnceLock::new();

/// Size the global worker pool. Only the first call has an effect; `0` keeps
/// the default of one worker per logical core.
pub fn configure_jobs(jobs: usize) -> usize {
    *CONFIGURED.get_or_init(|| {
        #[cfg(feature = "parallel")]
        {
            if jobs > 0 {
                // A pool built elsewhere wins; that is fine.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
            }
            rayon::current_num_threads()
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = jobs;
            1
        }
    })
}
