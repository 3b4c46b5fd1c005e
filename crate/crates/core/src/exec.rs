//! Execution strategy for the data-parallel inner loops (kernel matrix
//! assembly, per-row probit expectations, benchmark partitions).
//!
//! Every loop produces results indexed by position, so the output is
//! bitwise identical whichever strategy runs it.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to run a data-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Plain single-threaded iteration.
    Sequential,
    /// rayon work-stealing iteration. Falls back to sequential when the
    /// crate is built without the `parallel` feature.
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

/// Map `f` over `0..n`, collecting results in index order.
pub(crate) fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Run `f(chunk_index, chunk)` over consecutive `chunk_len` slices of `data`.
/// Used to fill column-major matrix storage one column per chunk.
pub(crate) fn for_each_chunk_mut<F>(exec: Execution, data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    match exec {
        Execution::Sequential => {
            for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
                f(i, chunk);
            }
        }
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                data.par_chunks_mut(chunk_len)
                    .enumerate()
                    .for_each(|(i, chunk)| f(i, chunk));
            }
            #[cfg(not(feature = "parallel"))]
            {
                for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
                    f(i, chunk);
                }
            }
        }
    }
}
