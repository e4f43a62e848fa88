//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) batch-level loops run on the
//! rayon pool; without it, or after [`set_parallel(false)`](set_parallel),
//! every helper degrades to the plain sequential loop. Work items are always
//! combined in index order, so results do not depend on the execution mode.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Runtime switch between the rayon path and the sequential fallback.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::SeqCst);
}

/// True when the rayon path is compiled in and enabled.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(index, chunk)` for consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() && data.len() > chunk_len {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

/// Runs `f` with the sequential fallback forced on, restoring the previous mode.
pub fn sequential<T>(f: impl FnOnce() -> T) -> T {
    let prev = PARALLEL.swap(false, Ordering::SeqCst);
    let out = f();
    PARALLEL.store(prev, Ordering::SeqCst);
    out
}
