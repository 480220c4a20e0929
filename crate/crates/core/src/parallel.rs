//! Index-parallel map used by the ensemble runners.
//!
//! Each work item derives its random stream from its own index, so the output
//! is identical whether or not the `parallel` feature is enabled.

use crate::error::Result;

#[cfg(feature = "parallel")]
pub(crate) fn try_map_indices<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_indices<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    (0..n).map(f).collect()
}
