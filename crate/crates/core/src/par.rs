//! Data-parallel helpers.
//!
//! With the `parallel` feature these fan out over the rayon pool; without it
//! the same closures run sequentially. Reductions use a fixed chunk size and a
//! fixed pairwise combine order, so results are bitwise identical for any
//! worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for partial sums. Part of the reduction tree, so changing it
/// changes low-order bits of every reduced quantity.
pub const REDUCE_CHUNK: usize = 256;

/// `(0..n).map(f).collect()`, in parallel when enabled. Output order is index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Calls `f(row_index, row)` for every `width`-sized row of `data`.
pub fn for_each_row_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(width > 0 && data.len() % width == 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Pairwise (tree) sum in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Deterministic `sum_{i<n} f(i)`: sequential sums inside fixed-size chunks,
/// chunk partials combined pairwise.
pub fn sum_indices<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_indices(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(n);
        (start..end).map(&f).sum::<f64>()
    });
    pairwise_sum(&partials)
}

/// Number of workers the data-parallel sections will use.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` inside a pool of `workers` threads (no-op wrapper when sequential).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}
