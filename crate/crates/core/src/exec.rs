//! Node-parallel kernels with a sequential fallback.
//!
//! Every helper here produces bitwise identical results in both modes: the
//! per-node work is independent, and reductions use a fixed block partition
//! whose partial sums are combined in order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Block size (in items) used for deterministic reductions.
pub const REDUCTION_BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon work-stealing over nodes. Falls back to sequential execution
    /// when the crate is built without the `parallel` feature.
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

/// Calls `f(node, values)` for each `width`-sized chunk of `data`.
pub fn for_each_node<F>(exec: Exec, data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(n, c)| f(n, c)),
        _ => data
            .chunks_mut(width)
            .enumerate()
            .for_each(|(n, c)| f(n, c)),
    }
}

/// Fallible variant of [`for_each_node`]. On failure the error of the
/// lowest-numbered failing node is returned regardless of scheduling.
pub fn try_for_each_node<F, E>(exec: Exec, data: &mut [f64], width: usize, f: F) -> Result<(), E>
where
    F: Fn(usize, &mut [f64]) -> Result<(), E> + Sync + Send,
    E: Send,
{
    let first = match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data
            .par_chunks_mut(width)
            .enumerate()
            .filter_map(|(n, c)| f(n, c).err().map(|e| (n, e)))
            .min_by_key(|(n, _)| *n),
        _ => data
            .chunks_mut(width)
            .enumerate()
            .find_map(|(n, c)| f(n, c).err().map(|e| (n, e))),
    };
    match first {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

/// [`try_for_each_node`] over two arrays chunked in lockstep: `data` by
/// `width` and `aux` by `aux_width`.
pub fn try_for_each_node_zip<F, E>(
    exec: Exec,
    data: &mut [f64],
    width: usize,
    aux: &mut [f64],
    aux_width: usize,
    f: F,
) -> Result<(), E>
where
    F: Fn(usize, &mut [f64], &mut [f64]) -> Result<(), E> + Sync + Send,
    E: Send,
{
    assert_eq!(data.len() / width, aux.len() / aux_width);
    let first = match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => data
            .par_chunks_mut(width)
            .zip(aux.par_chunks_mut(aux_width))
            .enumerate()
            .filter_map(|(n, (c, a))| f(n, c, a).err().map(|e| (n, e)))
            .min_by_key(|(n, _)| *n),
        _ => data
            .chunks_mut(width)
            .zip(aux.chunks_mut(aux_width))
            .enumerate()
            .find_map(|(n, (c, a))| f(n, c, a).err().map(|e| (n, e))),
    };
    match first {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

/// Sum of `f(i)` for `i in 0..n` with a fixed summation order.
pub fn chunked_sum<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let blocks = n.div_ceil(REDUCTION_BLOCK);
    let block_sum = |b: usize| {
        let start = b * REDUCTION_BLOCK;
        let end = (start + REDUCTION_BLOCK).min(n);
        (start..end).fold(0.0, |acc, i| acc + f(i))
    };
    let partials: Vec<f64> = match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..blocks).into_par_iter().map(block_sum).collect(),
        _ => (0..blocks).map(block_sum).collect(),
    };
    partials.into_iter().fold(0.0, |acc, x| acc + x)
}

/// `(0..n).map(f).collect()` with optional parallelism; order is preserved.
pub fn map_collect<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}
