//! Deterministic chunked parallel map-reduce.
//!
//! Work is cut into fixed-size chunks independent of the worker count; each
//! chunk folds into its own accumulator and accumulators are merged in chunk
//! order. Results are therefore bitwise identical for any number of workers.

use rayon::prelude::*;

/// Resolves the worker count: explicit value, then the `WORKERS` variable,
/// then the number of available cores.
pub fn resolve_workers(requested: Option<usize>) -> usize {
    requested
        .filter(|&w| w > 0)
        .or_else(|| {
            std::env::var("WORKERS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&w| w > 0)
        })
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Execution context shared by all Monte Carlo drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    pub workers: usize,
    pub chunk: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Exec {
            workers: resolve_workers(None),
            chunk: 1024,
        }
    }
}

impl Exec {
    pub fn with_workers(workers: usize) -> Self {
        Exec {
            workers: workers.max(1),
            ..Exec::default()
        }
    }

    /// Folds `total` items in chunks. `fold(chunk_index, range)` builds the
    /// accumulator of one chunk; `merge` folds chunk results left to right.
    pub fn map_reduce<A, F, M>(&self, total: u64, fold: F, init: A, merge: M) -> A
    where
        A: Send,
        F: Fn(u64, std::ops::Range<u64>) -> A + Sync + Send,
        M: Fn(A, A) -> A,
    {
        let chunk = self.chunk.max(1) as u64;
        let n_chunks = total.div_ceil(chunk);
        let run = || -> Vec<A> {
            (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let lo = c * chunk;
                    let hi = (lo + chunk).min(total);
                    fold(c, lo..hi)
                })
                .collect()
        };
        let parts = if self.workers <= 1 {
            (0..n_chunks)
                .map(|c| {
                    let lo = c * chunk;
                    fold(c, lo..(lo + chunk).min(total))
                })
                .collect()
        } else {
            match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
                Ok(pool) => pool.install(run),
                Err(_) => run(),
            }
        };
        parts.into_iter().fold(init, merge)
    }

    /// Parallel map over `0..total` preserving index order.
    pub fn map_indexed<T, F>(&self, total: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        self.map_reduce(
            total,
            |_, range| range.map(&f).collect::<Vec<T>>(),
            Vec::with_capacity(total as usize),
            |mut acc, mut part| {
                acc.append(&mut part);
                acc
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worker_count_does_not_change_result() {
        let f = |_: u64, r: std::ops::Range<u64>| r.map(|i| (i as f64).sqrt()).sum::<f64>();
        let one = Exec { workers: 1, chunk: 7 }.map_reduce(1000, f, 0.0, |a, b| a + b);
        let four = Exec { workers: 4, chunk: 7 }.map_reduce(1000, f, 0.0, |a, b| a + b);
        assert_eq!(one.to_bits(), four.to_bits());
        let v = Exec { workers: 3, chunk: 5 }.map_indexed(23, |i| i * 2);
        assert_eq!(v, (0..23).map(|i| i * 2).collect::<Vec<_>>());
    }
}
