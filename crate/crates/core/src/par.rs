//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run sequentially. Results are always collected in index order, so
//! outputs do not depend on the schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n` and collects in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Maps `f` over a slice and collects in order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Applies `f` to every element with its index, mutably.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

/// Zips two mutable/immutable slices and maps in order.
pub fn zip_map_mut<T, U, R, F>(items: &mut [T], other: &[U], f: F) -> Vec<R>
where
    T: Send,
    U: Sync,
    R: Send,
    F: Fn(usize, &mut T, &U) -> R + Sync + Send,
{
    assert_eq!(items.len(), other.len());
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter_mut()
            .zip(other.par_iter())
            .enumerate()
            .map(|(i, (t, u))| f(i, t, u))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items
            .iter_mut()
            .zip(other.iter())
            .enumerate()
            .map(|(i, (t, u))| f(i, t, u))
            .collect()
    }
}

pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
