//! Order-preserving fan-out over examples.

use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

/// Maps `f` over `items` on a pool of `workers` threads. Results keep input
/// order, so the output never depends on the worker count.
pub fn ordered_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    match ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// Per-example outcome of an offline build: kept items plus skipped ids.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport<T> {
    pub items: Vec<T>,
    pub skipped: Vec<(String, String)>,
}

/// Maximum fraction of examples an offline build may skip.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

impl<T> BuildReport<T> {
    pub fn skip_fraction(&self) -> f64 {
        let total = self.items.len() + self.skipped.len();
        if total == 0 {
            0.0
        } else {
            self.skipped.len() as f64 / total as f64
        }
    }
}
