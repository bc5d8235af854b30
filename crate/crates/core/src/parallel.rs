//! Fixed-partition chunking so that reductions do not depend on thread count.

use std::ops::Range;

/// Points per work unit. Partial results are combined in chunk order, so the
/// floating-point summation order is identical for any number of threads.
pub const CHUNK: usize = 2048;

pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..len.div_ceil(chunk))
        .map(|i| i * chunk..((i + 1) * chunk).min(len))
        .collect()
}

/// Maps `f` over fixed chunks of `0..len`, returning results in chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Applies `f` to disjoint mutable row blocks of `data` (`row_len` values per row).
pub fn for_each_row_block<T, F>(data: &mut [T], row_len: usize, rows_per_block: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let block = (row_len * rows_per_block).max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(block)
            .enumerate()
            .for_each(|(i, rows)| f(i * rows_per_block, rows));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(block)
            .enumerate()
            .for_each(|(i, rows)| f(i * rows_per_block, rows));
    }
}
