//! Global parallel-loop width.
//!
//! Every batched kernel in the crate routes its outer loop through
//! [`for_each_block`], which runs sequentially when the width is 1 and on a
//! shared rayon pool otherwise. Loops only ever write disjoint blocks and never
//! reduce across blocks, so results are bit-identical for any width.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

static THREADS: AtomicUsize = AtomicUsize::new(1);
static POOL: RwLock<Option<Arc<rayon::ThreadPool>>> = RwLock::new(None);

/// Sets the number of worker threads. `0` selects the hardware concurrency.
pub fn set_num_threads(n: usize) {
    let n = if n == 0 { std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1) } else { n };
    THREADS.store(n, Ordering::SeqCst);
    let mut pool = POOL.write().unwrap_or_else(|e| e.into_inner());
    *pool = if n > 1 { rayon::ThreadPoolBuilder::new().num_threads(n).build().ok().map(Arc::new) } else { None };
}

pub fn num_threads() -> usize {
    THREADS.load(Ordering::SeqCst)
}

fn pool() -> Option<Arc<rayon::ThreadPool>> {
    if num_threads() <= 1 {
        return None;
    }
    POOL.read().ok().and_then(|p| p.clone())
}

/// Calls `f(index, block)` for every `chunk`-sized block of `data`.
pub fn for_each_block<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    match pool() {
        Some(pool) => pool.install(|| data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c))),
        None => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// Maps `0..n` through `f`, preserving index order in the output.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match pool() {
        Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        None => (0..n).map(f).collect(),
    }
}
