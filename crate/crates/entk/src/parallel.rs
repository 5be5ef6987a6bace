//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the work is distributed via rayon;
//! without it the same code paths run on plain iterators. Both variants use
//! identical chunking and assemble results in index order, so outputs are
//! bitwise identical regardless of feature selection or worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size used when folding per-sample contributions (gradient sums,
/// dataset metrics). Fixed so that the floating-point reduction tree does not
/// depend on thread count.
pub(crate) const FOLD_CHUNK: usize = 16;

/// Maps `f` over `0..n`, returning results in index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Maps `f` over fixed-size chunks of `items`, returning one result per chunk
/// in chunk order.
pub(crate) fn map_chunks<I, T, F>(items: &[I], chunk: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> T + Sync + Send,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(chunk).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(chunk).map(f).collect()
    }
}
