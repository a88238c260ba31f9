//! Execution helpers: data-parallel maps with a sequential fallback, and
//! deterministic float reductions.
//!
//! Every parallel loop in this crate maps an index range to per-item values,
//! collects them in index order, and reduces sequentially. Combined with
//! per-item RNG substreams this makes all numeric output independent of the
//! number of worker threads.

use serde::{Deserialize, Serialize};

/// How to run a data-parallel loop.
///
/// `Auto` uses rayon when the `parallel` feature is enabled (the default) and
/// is identical to `Sequential` otherwise.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Auto,
    Sequential,
}

/// Maps `0..n` to a vector, preserving index order.
pub fn map_range<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    match mode {
        ExecMode::Auto => map_range_auto(n, f),
        ExecMode::Sequential => (0..n).map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
fn map_range_auto<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_range_auto<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_range`]; returns the first error by index order.
pub fn try_map_range<U, E, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<U>, E>
where
    U: Send,
    E: Send,
    F: Fn(usize) -> Result<U, E> + Send + Sync,
{
    let items = map_range(mode, n, f);
    items.into_iter().collect()
}

/// Sums a slice with fixed-shape pairwise recursion.
///
/// The reduction tree depends only on the slice length, so the result is
/// reproducible and insensitive to how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean via [`pairwise_sum`]; 0.0 for an empty slice.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let seq = map_range(ExecMode::Sequential, 1000, |i| i * i);
        let auto = map_range(ExecMode::Auto, 1000, |i| i * i);
        assert_eq!(seq, auto);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..257).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
