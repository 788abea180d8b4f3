//! Order-preserving data-parallel map.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out over
//! the rayon pool. Without it every call runs sequentially. Results always
//! come back in input order, so reductions done by the caller over the
//! returned vector are deterministic either way.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work concurrently.
    pub fn is_concurrent(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_concurrent() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Like [`map`], stopping at the first error in input order.
pub fn try_map<T, U, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<U, E> + Sync + Send,
{
    map(exec, items, f).into_iter().collect()
}
