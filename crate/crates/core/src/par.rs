//! Row-parallel helpers.
//!
//! With the `parallel` feature the closures run on the rayon pool, otherwise
//! on the calling thread. Reductions always collect per-row partials in row
//! order and sum them sequentially, so results are bit-identical between the
//! two builds and across runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fills `data` (row-major, `width` columns) by calling `f(row, row_slice)`.
pub(crate) fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
}

/// Maps every row index in `0..rows` to a value, preserving order.
pub(crate) fn map_rows<R, F>(rows: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..rows).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..rows).map(f).collect();
}

/// Maps arbitrary indexed work items, preserving order.
pub(crate) fn map_indices<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    map_rows(count, f)
}
