//! Per-distribution loops that run sequentially or on the rayon pool, and
//! fixed-order reductions across distributions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable read for the default thread budget.
pub const THREADS_ENV: &str = "WBARY_THREADS";

/// Below this many plan entries per sweep the loops stay sequential.
const PAR_MIN_WORK: usize = 1 << 16;

/// Order in which per-distribution vectors are summed. Both orders are fixed,
/// so results do not depend on the thread count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionOrder {
    /// Left to right in `t`.
    #[default]
    Sequential,
    /// Balanced binary tree over `t`.
    Pairwise,
}

/// Thread budget from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Whether the per-t loops of a solve with `work` plan entries should use rayon.
pub(crate) fn use_parallel(threads: Option<usize>, work: usize) -> bool {
    let n = threads.or_else(threads_from_env).unwrap_or_else(rayon::current_num_threads);
    n > 1 && work >= PAR_MIN_WORK
}

/// Runs `f` inside a pool of `threads` workers, or the global pool when `None`.
pub(crate) fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads.or_else(threads_from_env) {
        Some(n) if n != rayon::current_num_threads() => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidOption(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

pub(crate) fn for_each<A: Send>(par: bool, a: &mut [A], f: impl Fn(usize, &mut A) + Sync + Send) {
    if par {
        a.par_iter_mut().enumerate().for_each(|(t, x)| f(t, x));
    } else {
        a.iter_mut().enumerate().for_each(|(t, x)| f(t, x));
    }
}

pub(crate) fn for_each_pair<A: Send, B: Send>(
    par: bool,
    a: &mut [A],
    b: &mut [B],
    f: impl Fn(usize, &mut A, &mut B) + Sync + Send,
) {
    debug_assert_eq!(a.len(), b.len());
    if par {
        a.par_iter_mut()
            .zip(b.par_iter_mut())
            .enumerate()
            .for_each(|(t, (x, y))| f(t, x, y));
    } else {
        a.iter_mut().zip(b.iter_mut()).enumerate().for_each(|(t, (x, y))| f(t, x, y));
    }
}

pub(crate) fn map<A: Sync, R: Send>(par: bool, a: &[A], f: impl Fn(usize, &A) -> R + Sync + Send) -> Vec<R> {
    if par {
        a.par_iter().enumerate().map(|(t, x)| f(t, x)).collect()
    } else {
        a.iter().enumerate().map(|(t, x)| f(t, x)).collect()
    }
}

/// `Σ_t get(t)` for `n` vectors of length `len`, in the given order.
pub(crate) fn sum_vectors<'a>(order: ReductionOrder, n: usize, len: usize, get: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
    let mut out = vec![0.0; len];
    match order {
        ReductionOrder::Sequential => {
            for t in 0..n {
                add_into(&mut out, get(t));
            }
        }
        ReductionOrder::Pairwise => {
            if n > 0 {
                out = tree(&get, 0, n, len);
            }
        }
    }
    out
}

fn tree<'a>(get: &impl Fn(usize) -> &'a [f64], lo: usize, hi: usize, len: usize) -> Vec<f64> {
    if hi - lo == 1 {
        return get(lo).to_vec();
    }
    let mid = lo + (hi - lo) / 2;
    let mut left = tree(get, lo, mid, len);
    let right = tree(get, mid, hi, len);
    add_into(&mut left, &right);
    left
}

/// `Σ_t x_t` for scalars, in the given order.
pub(crate) fn sum_scalars(order: ReductionOrder, xs: &[f64]) -> f64 {
    match order {
        ReductionOrder::Sequential => xs.iter().sum(),
        ReductionOrder::Pairwise => pairwise(xs),
    }
}

fn pairwise(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise(&xs[..n / 2]) + pairwise(&xs[n / 2..]),
    }
}

#[inline]
pub(crate) fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_agree_on_exact_data() {
        let vs: Vec<Vec<f64>> = (0..7).map(|t| vec![t as f64, 2.0 * t as f64]).collect();
        let a = sum_vectors(ReductionOrder::Sequential, 7, 2, |t| &vs[t]);
        let b = sum_vectors(ReductionOrder::Pairwise, 7, 2, |t| &vs[t]);
        assert_eq!(a, vec![21.0, 42.0]);
        assert_eq!(a, b);
        assert_eq!(sum_scalars(ReductionOrder::Pairwise, &[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(sum_vectors(ReductionOrder::Pairwise, 0, 3, |t| &vs[t]), vec![0.0; 3]);
    }

    #[test]
    fn sequential_and_parallel_loops_match() {
        let mut a = vec![0usize; 100];
        let mut b = vec![0usize; 100];
        for_each(true, &mut a, |t, x| *x = t * t);
        for_each(false, &mut b, |t, x| *x = t * t);
        assert_eq!(a, b);
        assert_eq!(map(true, &a, |t, x| x + t), map(false, &b, |t, x| x + t));
    }
}
