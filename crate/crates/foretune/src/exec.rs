//! Order-preserving map over a slice, parallel when the `parallel` feature
//! is enabled.
//!
//! Callers fold the returned vector left to right, so keeping output order
//! equal to input order makes every floating-point reduction bit-identical
//! across thread counts and between the parallel and sequential builds.

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential twin of [`map_collect`], available in every build so the
/// bench suite can compare the two code paths inside one binary.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
