//! Deterministic data-parallel helpers.
//!
//! Work is split into fixed-size chunks independent of the thread count, and
//! partial reductions are collected in chunk order and combined sequentially.
//! Results are therefore bit-identical across thread counts and identical to
//! the sequential fallback built without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Items per work chunk. Fixed so chunk boundaries (and hence floating-point
/// reduction order) never depend on the executing thread pool.
pub(crate) const CHUNK: usize = 4096;

/// Fill `out` by chunks of whole items, where one item occupies `stride`
/// consecutive floats. The kernel receives the index of its first item and
/// the output slice for its chunk.
pub(crate) fn chunked_fill<F>(out: &mut [f64], stride: usize, kernel: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(stride > 0 && out.len() % stride == 0);
    let block = CHUNK * stride;
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(block)
        .enumerate()
        .for_each(|(ci, chunk)| kernel(ci * CHUNK, chunk));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(block)
        .enumerate()
        .for_each(|(ci, chunk)| kernel(ci * CHUNK, chunk));
}

/// Sum `kernel(range)` over `0..items` split into fixed chunks; partials are
/// combined in chunk order.
pub(crate) fn chunked_sum<F>(items: usize, kernel: F) -> f64
where
    F: Fn(std::ops::Range<usize>) -> f64 + Sync + Send,
{
    let nchunks = items.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..nchunks)
        .into_par_iter()
        .map(|ci| kernel(ci * CHUNK..((ci + 1) * CHUNK).min(items)))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..nchunks)
        .map(|ci| kernel(ci * CHUNK..((ci + 1) * CHUNK).min(items)))
        .collect();
    partials.iter().sum()
}

/// Map an indexed closure over `0..items` collecting results in order.
pub(crate) fn indexed_map<T, F>(items: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..items).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..items).map(f).collect()
    }
}
