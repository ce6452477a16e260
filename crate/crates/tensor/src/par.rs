//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper hands each worker a disjoint output slice or index, so results do
//! not depend on how work is scheduled. With the `parallel` feature disabled, or
//! with [`set_exec`] set to [`Exec::Sequential`], everything runs on the calling thread.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Selects the process-wide execution mode. `Parallel` is a no-op without the feature.
pub fn set_exec(exec: Exec) {
    PARALLEL.store(
        cfg!(feature = "parallel") && exec == Exec::Parallel,
        Ordering::Relaxed,
    );
}

pub fn exec() -> Exec {
    if PARALLEL.load(Ordering::Relaxed) {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

// Below this many elements the rayon overhead dominates.
const MIN_PAR_WORK: usize = 1 << 14;

/// Calls `f(chunk_index, chunk)` for each `chunk_len`-sized piece of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && data.len() >= MIN_PAR_WORK && data.len() > chunk_len {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_range`]; the first error by index wins.
pub fn try_map_range<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_match_between_modes() {
        let run = |mode| {
            set_exec(mode);
            let mut v = vec![0u64; 100_000];
            for_each_chunk(&mut v, 37, |i, c| {
                for (j, x) in c.iter_mut().enumerate() {
                    *x = (i * 37 + j) as u64 * 3;
                }
            });
            v
        };
        let a = run(Exec::Sequential);
        let b = run(Exec::Parallel);
        set_exec(Exec::Parallel);
        assert_eq!(a, b);
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
