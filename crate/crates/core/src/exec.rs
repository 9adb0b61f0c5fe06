//! Data-parallel execution with a sequential fallback.
//!
//! Every embarrassingly parallel loop in the crate (sessions in a tournament,
//! per-transcript scoring and feature extraction, frontier enumeration) goes
//! through [`Execution::map`]. With the
//! `parallel` feature disabled, `Execution::Parallel` silently degrades to the
//! sequential path so results never depend on the build configuration.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// The mode that will actually run, given how the crate was compiled.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => par_map(items, f),
        }
    }

    /// Order-preserving map over an index range.
    pub fn map_range<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => (0..len).map(f).collect(),
            Execution::Parallel => par_map_range(len, f),
        }
    }

    /// Runs `f` over every item with at most `limit` items in flight.
    pub fn for_each_bounded<T, F>(self, items: &[T], limit: usize, f: F)
    where
        T: Sync,
        F: Fn(&T) + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => items.iter().for_each(f),
            Execution::Parallel => par_for_each_bounded(items, limit.max(1), f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_for_each_bounded<T, F>(items: &[T], limit: usize, f: F)
where
    T: Sync,
    F: Fn(&T) + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
        Ok(pool) => pool.install(|| items.par_iter().with_max_len(1).for_each(f)),
        Err(err) => {
            log::warn!("could not build a {limit}-thread pool ({err}); running sequentially");
            items.iter().for_each(f)
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..len).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_for_each_bounded<T, F>(items: &[T], _limit: usize, f: F)
where
    F: Fn(&T),
{
    items.iter().for_each(f)
}
