//! Dispatch for data-parallel inner loops.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! they run sequentially. Results are order-stable either way, so outputs do
//! not depend on the feature or the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Lowest index in `0..n` satisfying the predicate.
#[cfg(feature = "parallel")]
pub(crate) fn find_first_index<F>(n: u64, pred: F) -> Option<u64>
where
    F: Fn(u64) -> bool + Sync + Send,
{
    (0..n).into_par_iter().find_first(|&i| pred(i))
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn find_first_index<F>(n: u64, pred: F) -> Option<u64>
where
    F: Fn(u64) -> bool,
{
    (0..n).find(|&i| pred(i))
}
