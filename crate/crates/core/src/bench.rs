//! Per-iteration timing of sGS-ADMM as the number of distributions grows.

use serde::{Deserialize, Serialize};

use crate::datagen::gen_case1;
use crate::error::{Error, Result};
use crate::sgs_admm::{self, SgsOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub n: usize,
    pub iterations: usize,
    /// Best wall time over the repeats.
    pub seconds: f64,
    pub per_iteration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub m: usize,
    pub m_prime: usize,
    pub d: usize,
    pub seed: u64,
    pub iterations: usize,
    pub repeats: usize,
    pub threads: Option<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            m: 20,
            m_prime: 10,
            d: 3,
            seed: 1,
            iterations: 1000,
            repeats: 3,
            threads: None,
        }
    }
}

/// Times a fixed number of iterations (residual checks included) on a Case 1
/// instance for each `N` in `ns`, which must be strictly increasing.
pub fn bench_scaling(ns: &[usize], opts: &BenchOptions) -> Result<Vec<BenchPoint>> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidOption("N values must be strictly increasing".into()));
    }
    if opts.iterations == 0 || opts.repeats == 0 {
        return Err(Error::InvalidOption("iterations and repeats must be positive".into()));
    }
    let sgs = SgsOptions {
        // never met, so every run performs exactly `iterations` steps
        tol: f64::MIN_POSITIVE,
        max_iter: opts.iterations,
        threads: opts.threads,
        ..SgsOptions::default()
    };
    ns.iter()
        .map(|&n| {
            let inst = gen_case1(n, opts.m, opts.m_prime, opts.d, opts.seed)?;
            let mut best = f64::INFINITY;
            for _ in 0..opts.repeats {
                let (_, _, rep) = sgs_admm::solve(&inst, &sgs)?;
                best = best.min(rep.wall_time);
            }
            Ok(BenchPoint {
                n,
                iterations: opts.iterations,
                seconds: best,
                per_iteration: best / opts.iterations as f64,
            })
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs`; `None` with fewer than two distinct `x`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
