//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled, slices above [`PARALLEL_THRESHOLD`]
//! are processed on the rayon pool; smaller inputs and `parallel`-less
//! builds use plain loops. All helpers preserve element order, and callers
//! perform floating-point reductions sequentially over the collected
//! results, so outputs are bit-identical across both modes and across
//! thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) const PARALLEL_THRESHOLD: usize = 1024;

pub(crate) fn map_vec<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() >= PARALLEL_THRESHOLD {
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

pub(crate) fn map_indexed_vec<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() >= PARALLEL_THRESHOLD {
            return items
                .par_iter()
                .enumerate()
                .map(|(i, v)| f(i, v))
                .collect();
        }
    }
    items.iter().enumerate().map(|(i, v)| f(i, v)).collect()
}

pub(crate) fn map_range_vec<U, F>(len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len >= PARALLEL_THRESHOLD {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Runs two independent closures, in parallel when the feature is on.
pub(crate) fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}
