//! Execution strategy for the data-parallel inner loops.
//!
//! Every parallel loop in the crate goes through [`Execution`], so the same
//! code path can be timed sequentially and in parallel (see the `parallel`
//! bench). Without the `parallel` feature both variants run sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fold each item into an accumulator, then combine accumulators.
    ///
    /// `reduce` must be associative; in parallel mode the grouping of items
    /// into accumulators is decided by rayon.
    pub fn fold_reduce<T, A, Id, Fo, Re>(self, items: &[T], identity: Id, fold: Fo, reduce: Re) -> A
    where
        T: Sync,
        A: Send,
        Id: Fn() -> A + Sync + Send,
        Fo: Fn(A, &T) -> A + Sync + Send,
        Re: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items
                .par_iter()
                .fold(&identity, &fold)
                .reduce(&identity, &reduce);
        }
        let _ = &reduce;
        items.iter().fold(identity(), fold)
    }
}
