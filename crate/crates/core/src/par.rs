//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run the same closures sequentially. Every helper writes each output
//! slot from exactly one closure call, so results do not depend on the
//! scheduling order and parallel runs are bit-identical to serial ones.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work below this many scalar multiply-adds is not worth splitting.
pub const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Calls `f(chunk_index, chunk)` for every `chunk_len`-sized chunk of `out`.
///
/// `work` is a rough cost estimate used to decide whether to fan out at all.
pub fn for_each_chunk<F>(out: &mut [f64], chunk_len: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if chunk_len == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        let chunks = out.len().div_ceil(chunk_len);
        if work >= MIN_PARALLEL_WORK && chunks > 1 {
            let per_chunk = (work / chunks).max(1);
            let min_len = (MIN_PARALLEL_WORK / per_chunk).max(1);
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .with_min_len(min_len)
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = work;
    out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Whether this build was compiled with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
