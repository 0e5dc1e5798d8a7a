//! Data-parallel helpers.
//!
//! Every hot loop in the crate is an independent map over an index range
//! (eigenvalue indices, grid points, sample points). These helpers run such a
//! map either on the rayon pool or sequentially. Results are always collected
//! in index order, so the output never depends on the thread count.
//!
//! With the `parallel` feature turned off, [`Execution::Parallel`] silently
//! degrades to sequential execution.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

// Below this many items the rayon split overhead dominates.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 32;

/// `(0..len).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if len >= MIN_PARALLEL_LEN => (0..len).into_par_iter().map(f).collect(),
        _ => (0..len).map(f).collect(),
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if items.len() >= MIN_PARALLEL_LEN => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// In-place update of every element, possibly in parallel.
pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if items.len() >= MIN_PARALLEL_LEN => {
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x))
        }
        _ => items.iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_range(Execution::Sequential, 1000, f);
        let b = map_range(Execution::Parallel, 1000, f);
        assert_eq!(a, b);
        let mut v = vec![0usize; 100];
        for_each_mut(Execution::Parallel, &mut v, |i, x| *x = i * 2);
        assert_eq!(v[37], 74);
    }
}
