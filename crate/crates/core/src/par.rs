//! Data-parallel helpers with a sequential fallback.
//!
//! Compiled with the `parallel` feature these dispatch to rayon; without it
//! they run inline. A runtime switch (`set_parallel`) lets a single binary
//! compare both paths. Every helper assigns each output element to exactly one
//! task and keeps per-element summation order fixed, so results are identical
//! bit for bit whichever path runs.

use ndarray::{Array2, ArrayView2, Axis};
use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon path at runtime. No-op without the `parallel`
/// feature (everything is sequential then).
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

/// True when the rayon path is compiled in and currently enabled.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Thread count requested via the `ROM_THREADS` environment variable, if any.
pub fn requested_threads() -> Option<usize> {
    std::env::var("ROM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Build the global rayon pool honoring `ROM_THREADS`. Safe to call more than
/// once; only the first call takes effect. Without the `parallel` feature this
/// does nothing.
pub fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested_threads() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Split `total` items into chunk sizes suited to the active thread count.
fn chunk_size(total: usize) -> usize {
    #[cfg(feature = "parallel")]
    {
        let threads = rayon::current_num_threads().max(1);
        return (total / (4 * threads)).max(1);
    }
    #[allow(unreachable_code)]
    total.max(1)
}

/// Apply `f` to disjoint chunks of `data`, in parallel when enabled.
/// `f` receives the chunk's start offset and the chunk itself.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    if data.is_empty() {
        return;
    }
    let chunk = chunk_size(data.len());
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, slice)| f(k * chunk, slice));
        return;
    }
    for (k, slice) in data.chunks_mut(chunk).enumerate() {
        f(k * chunk, slice);
    }
}

/// Map rows `0..n` to values and collect in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Sum of `f(i)` over `0..n`, accumulated in fixed chunk order so the result
/// does not depend on scheduling.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    let chunk = chunk_size(n);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let partial = |&s: &usize| {
        let end = (s + chunk).min(n);
        let mut acc = 0.0;
        for i in s..end {
            acc += f(i);
        }
        acc
    };
    let parts: Vec<f64> = {
        #[cfg(feature = "parallel")]
        if parallel_enabled() {
            use rayon::prelude::*;
            starts.par_iter().map(partial).collect()
        } else {
            starts.iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        starts.iter().map(partial).collect()
    };
    parts.into_iter().sum()
}

/// Dense matmul `a * b`, parallelized over row blocks of `a`. Each output
/// element is one sequential dot product, so the parallel and sequential paths
/// agree exactly.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    let chunk = chunk_size(a.nrows());
    let do_block = |(mut oc, ac): (ndarray::ArrayViewMut2<f64>, ArrayView2<f64>)| {
        oc.assign(&ac.dot(&b));
    };
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use ndarray::parallel::prelude::*;
        out.axis_chunks_iter_mut(Axis(0), chunk)
            .into_par_iter()
            .zip(a.axis_chunks_iter(Axis(0), chunk).into_par_iter())
            .for_each(do_block);
        return out;
    }
    out.axis_chunks_iter_mut(Axis(0), chunk)
        .zip(a.axis_chunks_iter(Axis(0), chunk))
        .for_each(do_block);
    out
}
