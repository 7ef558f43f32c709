//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) index-parallel maps run on the
//! current rayon pool; without it they are plain sequential loops. Results are
//! always collected in index order so any reduction the caller performs
//! afterwards is independent of the thread count.

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference path for [`map_indexed`].
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Runs `op` with at most `threads` workers. `threads == 0` uses the default
/// pool size; `threads == 1` forces the sequential reference path.
pub fn with_threads<R, F>(threads: usize, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return op();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(op),
            Err(e) => {
                log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
                op()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        op()
    }
}

/// Number of worker threads the current context would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
