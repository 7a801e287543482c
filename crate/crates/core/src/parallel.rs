//! Data-parallel helpers with a sequential fallback.
//!
//! Everything here is deterministic: element-wise maps write disjoint outputs,
//! and reductions sum fixed-size chunks first and then combine the partial sums
//! in index order, so results are bitwise identical between [`Execution`] modes
//! and across thread counts.
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] silently runs
//! sequentially.

/// Chunk length used for deterministic reductions and chunked maps.
pub const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
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

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f(chunk_index, chunk)` to consecutive mutable chunks of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }

    /// Sums `f(i)` over `0..n` with a fixed chunked reduction order.
    pub fn sum_range<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK);
        let partial = self.map_range(chunks, |c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            (start..end).map(&f).sum::<f64>()
        });
        partial.into_iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_identical_across_modes() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let n = 3 * CHUNK + 17;
        let a = Execution::Sequential.sum_range(n, f);
        let b = Execution::Parallel.sum_range(n, f);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn map_preserves_order() {
        let v = Execution::Parallel.map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunked_map_touches_everything_once() {
        let mut data = vec![0usize; 10_001];
        Execution::Parallel.for_each_chunk_mut(&mut data, 64, |ci, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x += ci * 64 + j;
            }
        });
        assert!(data.iter().enumerate().all(|(i, &x)| x == i));
    }
}
