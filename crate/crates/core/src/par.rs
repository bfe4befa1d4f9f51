//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel path in the crate goes through [`Exec`]. Work items are
//! independent and results are collected in input order, so sequential and
//! parallel execution produce bit-identical output. Without the `parallel`
//! feature both modes run sequentially.

/// Execution mode for data-parallel loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to each element mutably, collecting results in order.
    pub fn map_mut<T, U, F>(self, items: &mut [T], f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(usize, &mut T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Splits `0..n` into contiguous `(start, end)` chunks of at most `chunk` rows.
pub fn row_chunks(n: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..n).step_by(chunk).map(|s| (s, (s + chunk).min(n))).collect()
}
