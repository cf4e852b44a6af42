//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the heavy inner loops fan out over
//! rayon. Building with `--no-default-features` removes rayon entirely and
//! every helper degrades to the sequential loop. When the feature is on, a
//! process-wide switch allows forcing the sequential path at runtime so the
//! bench suite can compare both with one binary.
//!
//! Every parallel loop here partitions its *output*: no two tasks write the
//! same element and no reduction order depends on scheduling, so results are
//! bit-identical to the sequential path.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime (no-op without the `parallel` feature).
pub fn set_force_sequential(seq: bool) {
    #[cfg(feature = "parallel")]
    FORCE_SEQUENTIAL.store(seq, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = seq;
}

/// True when work should fan out over rayon.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Run `body(chunk_index, chunk)` over `data` split into rows of `row_len`,
/// one task per row (the final row may be shorter). `body` must only write
/// its own chunk.
pub fn for_each_row<T: Send, F>(data: &mut [T], row_len: usize, body: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(row_len > 0);
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            data.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, chunk)| body(i, chunk));
            return;
        }
    }
    for (i, chunk) in data.chunks_mut(row_len).enumerate() {
        body(i, chunk);
    }
}

/// Map `0..n` to values in index order. Parallel when enabled; the returned
/// vector is ordered by index either way.
pub fn map_indexed<R: Send, F>(n: usize, body: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(body).collect();
        }
    }
    (0..n).map(body).collect()
}
