//! Execution strategy for the data-parallel loops of the crate.
//!
//! Every parallel loop in the crate is an indexed map whose results are
//! collected in index order; reductions over the collected values are then
//! done sequentially. This keeps the output independent of scheduling.

use std::sync::atomic::{AtomicU8, Ordering};

/// How indexed maps are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Rayon work stealing; identical to `Sequential` when the crate is built
    /// without the `parallel` feature.
    Parallel,
}

const UNSET: u8 = 0;
const SEQ: u8 = 1;
const PAR: u8 = 2;

static GLOBAL: AtomicU8 = AtomicU8::new(UNSET);

/// Environment variable capping worker threads. `1` selects sequential mode.
pub const THREADS_ENV: &str = "NOISYLAB_THREADS";

impl Exec {
    /// The process-wide mode: set explicitly via [`Exec::set_global`], else
    /// derived from `NOISYLAB_THREADS` (1 means sequential), else parallel.
    pub fn current() -> Exec {
        match GLOBAL.load(Ordering::Relaxed) {
            SEQ => Exec::Sequential,
            PAR => Exec::Parallel,
            _ => {
                let mode = match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
                    Some(1) => Exec::Sequential,
                    _ => Exec::Parallel,
                };
                mode.set_global();
                mode
            }
        }
    }

    pub fn set_global(self) {
        let v = match self {
            Exec::Sequential => SEQ,
            Exec::Parallel => PAR,
        };
        GLOBAL.store(v, Ordering::Relaxed);
    }

    /// `(0..n).map(f).collect()` under this mode.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => par_map(n, f),
        }
    }

    /// Applies `f(index, chunk)` to consecutive `chunk_len`-sized chunks.
    pub fn for_each_chunk<T, F>(self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk_len == 0 {
            return;
        }
        match self {
            Exec::Sequential => data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c)),
            Exec::Parallel => par_chunks(data, chunk_len, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_chunks<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
fn par_chunks<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Configures the rayon global pool from `NOISYLAB_THREADS` (no-op without
/// the `parallel` feature or when the pool is already initialised).
pub fn init_threads_from_env() {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = threads {
        if n == 1 {
            Exec::Sequential.set_global();
        }
        #[cfg(feature = "parallel")]
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let a = Exec::Sequential.map(100, |i| (i as f64).sqrt());
        let b = Exec::Parallel.map(100, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }

    #[test]
    fn chunks_cover_all() {
        let mut v = vec![0usize; 10];
        Exec::Parallel.for_each_chunk(&mut v, 3, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
    }
}
