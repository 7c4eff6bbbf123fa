//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel entry point takes an [`Exec`] and must produce results that
//! are bit-identical to the sequential path. Work is split into chunks whose
//! boundaries depend only on the input length, never on the thread count, and
//! partial results are combined in chunk order.
//!
//! Without the `parallel` feature, [`Exec::Parallel`] silently runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    /// True when this policy will actually fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over a slice.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Runs `f(chunk_index, chunk)` over fixed-size mutable chunks.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Chunk size used when a reduction is split for parallel evaluation.
pub const REDUCE_CHUNK: usize = 16;
