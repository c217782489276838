//! Barycenters with free support points: alternate between a fixed-support
//! solve for `(w, {Π})` and the closed-form support update for `p = 2`.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::badmm::{solve_badmm_from, BadmmOptions, BadmmState};
use crate::datagen::rng;
use crate::error::{Error, Result};
use crate::ibp::{solve_ibp, IbpOptions};
use crate::matrix::Mat;
use crate::model::{
    eta_feas, objective_of_plans, BarycenterInstance, DiscreteDistribution, Method, ParamEcho, PrimalSolution,
    SolveReport, Trace,
};
use crate::sgs_admm::{solve_from, DualIterate, SgsOptions};

pub const KMEANS_MAX_ITER: usize = 100;
pub const TRACE_COLUMNS: [&str; 4] = ["outer", "objective", "change", "elapsed"];

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centres.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `m` centroids of `points` by Lloyd's algorithm from k-means++ seeds.
/// One replicate, at most [`KMEANS_MAX_ITER`] sweeps. Empty clusters keep their centre.
pub fn init_supports_kmeans(points: &[Vec<f64>], m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidInput("k-means needs m >= 1".into()));
    }
    if points.len() < m {
        return Err(Error::InvalidInput(format!(
            "k-means pool has {} points, fewer than m = {m}",
            points.len()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("k-means points of differing dimension".into()));
    }
    let mut rng = rng(seed);
    let mut centres = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < m {
        let k = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(&mut rng),
            Err(_) => rng.random_range(0..points.len()),
        };
        centres.push(points[k].clone());
        let c = centres.last().expect("just pushed");
        for (x, p) in d2.iter_mut().zip(points) {
            *x = x.min(sq_dist(p, c));
        }
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let k = nearest(p, &centres).0;
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; m];
        let mut counts = vec![0usize; m];
        for (&k, p) in assign.iter().zip(points) {
            counts[k] += 1;
            sums[k].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for ((c, s), &n) in centres.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
    }
    Ok(centres)
}

/// `x_i = Σ_t Σ_j π⁽ᵗ⁾_ij q⁽ᵗ⁾_j / Σ_t Σ_j π⁽ᵗ⁾_ij`. Rows with no mass keep `previous[i]`
/// and are listed in the second return value.
///
/// This is the exact minimizer over `X` for squared Euclidean costs with equal
/// `γ_t`; for unequal `γ_t` pass plans already multiplied by `γ_t`.
pub fn update_supports(
    plans: &[Mat],
    distributions: &[DiscreteDistribution],
    previous: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if plans.len() != distributions.len() {
        return Err(Error::Dimension(format!(
            "{} plans for {} distributions",
            plans.len(),
            distributions.len()
        )));
    }
    let m = previous.len();
    let d = previous.first().map_or(0, Vec::len);
    for (t, (p, q)) in plans.iter().zip(distributions).enumerate() {
        if p.shape() != (m, q.len()) || q.dim() != d {
            return Err(Error::Dimension(format!("plan {t} does not match its distribution")));
        }
    }
    let mut out = previous.to_vec();
    let mut flagged = Vec::new();
    for i in 0..m {
        let mut mass = 0.0;
        let mut acc = vec![0.0; d];
        for (p, q) in plans.iter().zip(distributions) {
            for (&pij, qj) in p.row(i).iter().zip(&q.supports) {
                mass += pij;
                acc.iter_mut().zip(qj).for_each(|(a, x)| *a += pij * x);
            }
        }
        if mass > 0.0 {
            out[i] = acc.into_iter().map(|x| x / mass).collect();
        } else {
            flagged.push(i);
        }
    }
    Ok((out, flagged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "solver")]
pub enum InnerSolver {
    Sgs,
    Badmm,
    Ibp { epsilon: f64 },
    Oracle,
}

impl InnerSolver {
    /// Inner iteration caps used when none is given.
    pub fn default_max_iter(self) -> usize {
        match self {
            InnerSolver::Sgs | InnerSolver::Badmm => 10,
            InnerSolver::Ibp { epsilon } if epsilon > 1e-3 => 100,
            InnerSolver::Ibp { .. } => 1000,
            InnerSolver::Oracle => 1,
        }
    }

    pub fn method(self) -> Method {
        match self {
            InnerSolver::Sgs => Method::Sgs,
            InnerSolver::Badmm => Method::Badmm,
            InnerSolver::Ibp { .. } => Method::Ibp,
            InnerSolver::Oracle => Method::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeSupportOptions {
    pub m: usize,
    pub inner: InnerSolver,
    /// `None` uses [`InnerSolver::default_max_iter`].
    pub inner_max_iter: Option<usize>,
    /// Relative successive change of the objective that stops the outer loop.
    pub tol: f64,
    pub max_outer: usize,
    pub warm_start: bool,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for FreeSupportOptions {
    fn default() -> Self {
        Self {
            m: 10,
            inner: InnerSolver::Sgs,
            inner_max_iter: None,
            tol: 1e-5,
            max_outer: 100,
            warm_start: true,
            seed: 0,
            threads: None,
        }
    }
}

impl FreeSupportOptions {
    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidOption("m must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidOption(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_outer == 0 || self.inner_max_iter == Some(0) {
            return Err(Error::InvalidOption("iteration caps must be positive".into()));
        }
        if let InnerSolver::Ibp { epsilon } = self.inner {
            if !(epsilon > 0.0) {
                return Err(Error::InvalidOption(format!("epsilon = {epsilon} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeSupportResult {
    pub barycenter: DiscreteDistribution,
    pub plans: Vec<Mat>,
    /// Objective after each outer iteration's support update.
    pub objectives: Vec<f64>,
    pub report: SolveReport,
}

enum Warm {
    None,
    Sgs(DualIterate),
    Badmm(BadmmState),
}

/// Drops zero-weight support points; they carry no mass in any plan.
fn strip_zeros(d: &DiscreteDistribution) -> DiscreteDistribution {
    let keep: Vec<usize> = (0..d.len()).filter(|&j| d.weights[j] > 0.0).collect();
    DiscreteDistribution {
        weights: keep.iter().map(|&j| d.weights[j]).collect(),
        supports: keep.iter().map(|&j| d.supports[j].clone()).collect(),
    }
}

fn inner_solve(
    inst: &BarycenterInstance,
    opts: &FreeSupportOptions,
    warm: &mut Warm,
) -> Result<(PrimalSolution, SolveReport)> {
    let max_iter = opts.inner_max_iter.unwrap_or_else(|| opts.inner.default_max_iter());
    match opts.inner {
        InnerSolver::Sgs => {
            let o = SgsOptions {
                max_iter,
                check_every: max_iter.min(50),
                threads: opts.threads,
                ..SgsOptions::default()
            };
            let start = match warm {
                Warm::Sgs(d) if opts.warm_start => Some(&*d),
                _ => None,
            };
            let (sol, dual, rep) = solve_from(inst, &o, start)?;
            *warm = Warm::Sgs(dual);
            Ok((sol, rep))
        }
        InnerSolver::Badmm => {
            let o = BadmmOptions {
                max_iter,
                check_every: max_iter.min(200),
                threads: opts.threads,
                ..BadmmOptions::default()
            };
            let start = match warm {
                Warm::Badmm(s) if opts.warm_start => Some(&*s),
                _ => None,
            };
            let (sol, state, rep) = solve_badmm_from(inst, &o, start)?;
            *warm = Warm::Badmm(state);
            Ok((sol, rep))
        }
        InnerSolver::Ibp { epsilon } => {
            let o = IbpOptions {
                epsilon,
                max_iter,
                threads: opts.threads,
                ..IbpOptions::default()
            };
            solve_ibp(inst, &o)
        }
        InnerSolver::Oracle => crate::lp_oracle::solve(inst),
    }
}

/// Alternating minimization over `(X, w, {Π})` for `p = 2`, starting from
/// k-means centres of the pooled support points.
pub fn solve_free(
    distributions: &[DiscreteDistribution],
    gammas: Option<Vec<f64>>,
    opts: &FreeSupportOptions,
) -> Result<FreeSupportResult> {
    opts.validate()?;
    if distributions.is_empty() {
        return Err(Error::InvalidInput("no input distributions".into()));
    }
    let start = Instant::now();
    let dists: Vec<DiscreteDistribution> = distributions.iter().map(strip_zeros).collect();
    let n = dists.len();
    let gammas = gammas.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let pool: Vec<Vec<f64>> = dists.iter().flat_map(|d| d.supports.iter().cloned()).collect();
    let mut x = init_supports_kmeans(&pool, opts.m, opts.seed)?;

    let mut warm = Warm::None;
    let mut trace = Trace::new(TRACE_COLUMNS.to_vec());
    let mut objectives: Vec<f64> = Vec::new();
    let mut inner_iters = 0;
    let mut converged = false;
    let mut flagged_rows = 0;
    let mut last: Option<(PrimalSolution, SolveReport)> = None;
    for outer in 1..=opts.max_outer {
        let inst = BarycenterInstance::from_distributions(&dists, x.clone(), 2.0, Some(gammas.clone()))?;
        let (sol, rep) = inner_solve(&inst, opts, &mut warm).map_err(|e| Error::Inner {
            outer,
            source: Box::new(e),
        })?;
        inner_iters += rep.iterations;
        let weighted: Vec<Mat> = sol
            .plans
            .iter()
            .zip(&gammas)
            .map(|(p, &g)| p.map(|v| g * v.max(0.0)))
            .collect();
        let (x_new, flagged) = update_supports(&weighted, &dists, &x)?;
        flagged_rows += flagged.len();
        x = x_new;
        let updated = BarycenterInstance::from_distributions(&dists, x.clone(), 2.0, Some(gammas.clone()))?;
        let obj: f64 = objective_of_plans(&updated, &sol.plans);
        let change = match objectives.last() {
            Some(&prev) if prev == obj => 0.0,
            Some(&prev) => (obj - prev).abs() / prev.abs(),
            None => f64::INFINITY,
        };
        objectives.push(obj);
        trace.push(vec![outer as f64, obj, change, start.elapsed().as_secs_f64()]);
        last = Some((sol, rep));
        if change < opts.tol || obj == 0.0 {
            converged = true;
            break;
        }
    }

    let (sol, inner_rep) = last.expect("at least one outer iteration");
    let final_inst = BarycenterInstance::from_distributions(&dists, x.clone(), 2.0, Some(gammas))?;
    let mut notes = vec![format!("inner solver {}; {inner_iters} inner iterations", opts.inner.method())];
    if flagged_rows > 0 {
        notes.push(format!("{flagged_rows} support updates skipped for rows without mass"));
    }
    let report = SolveReport {
        method: opts.inner.method(),
        objective: objective_of_plans(&final_inst, &sol.plans),
        eta_feas: eta_feas(&sol.w, &sol.plans, final_inst.marginals()),
        residuals: None,
        scaled_residuals: None,
        iterations: objectives.len(),
        wall_time: start.elapsed().as_secs_f64(),
        converged,
        params: ParamEcho {
            tol: Some(opts.tol),
            ..inner_rep.params
        },
        marginal_audit: None,
        notes,
        trace,
    };
    let w = sol.w.iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
    let barycenter = DiscreteDistribution::normalized(w, x)?;
    Ok(FreeSupportResult {
        barycenter,
        plans: sol.plans,
        objectives,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn kmeans_exact_pool() {
        let pool = vec![vec![0.0, 1.0], vec![5.0, 5.0], vec![-3.0, 2.0]];
        let mut c = init_supports_kmeans(&pool, 3, 4).unwrap();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = pool.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, want);
    }

    #[test]
    fn kmeans_two_clusters() {
        let mut r = rng(1);
        let mut pool = Vec::new();
        for k in 0..40 {
            let base = if k % 2 == 0 { -50.0 } else { 50.0 };
            pool.push(vec![base + r.random::<f64>(), r.random::<f64>()]);
        }
        let c = init_supports_kmeans(&pool, 2, 9).unwrap();
        assert!(c[0][0].signum() != c[1][0].signum());
        for p in &pool {
            let (k, _) = nearest(p, &c);
            assert_eq!(c[k][0].signum(), p[0].signum());
        }
        assert_eq!(c, init_supports_kmeans(&pool, 2, 9).unwrap());
    }

    #[test]
    fn kmeans_errors() {
        assert!(init_supports_kmeans(&pts(&[1.0]), 2, 0).is_err());
        assert!(init_supports_kmeans(&pts(&[1.0]), 0, 0).is_err());
        assert!(init_supports_kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0).is_err());
        // duplicates still give m centres
        assert_eq!(init_supports_kmeans(&pts(&[1.0, 1.0, 1.0]), 2, 0).unwrap().len(), 2);
    }

    #[test]
    fn support_update_examples() {
        let d = DiscreteDistribution::new(vec![0.5, 0.5], vec![vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let p = Mat::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let (x, f) = update_supports(&[p], &[d], &[vec![9.0, 9.0], vec![9.0, 9.0]]).unwrap();
        assert_eq!(x, vec![vec![0.0, 0.0], vec![2.0, 2.0]]);
        assert!(f.is_empty());

        let d = DiscreteDistribution::new(vec![0.5, 0.5], pts(&[0.0, 4.0])).unwrap();
        let p = Mat::from_rows(&[vec![0.25, 0.25], vec![0.0, 0.0]]).unwrap();
        let (x, f) = update_supports(&[p], &[d], &pts(&[7.0, 7.0])).unwrap();
        assert_eq!(x, pts(&[2.0, 7.0]));
        assert_eq!(f, vec![1]);
    }

    fn mainpro(dists: &[DiscreteDistribution], x: &[Vec<f64>], plans: &[Mat]) -> f64 {
        let inst = BarycenterInstance::from_distributions(dists, x.to_vec(), 2.0, None).unwrap();
        objective_of_plans(&inst, plans)
    }

    proptest! {
        #[test]
        fn support_update_matches_weighted_mean_and_descends(seed in 0u64..1000) {
            let mut r = rng(seed);
            let dists: Vec<DiscreteDistribution> = (0..2)
                .map(|_| DiscreteDistribution::normalized(
                    (0..3).map(|_| 1.0 - r.random::<f64>()).collect(),
                    (0..3).map(|_| vec![r.random::<f64>() * 4.0, r.random::<f64>()]).collect(),
                ).unwrap())
                .collect();
            let plans: Vec<Mat> = (0..2).map(|_| Mat::from_fn(4, 3, |_, _| r.random::<f64>())).collect();
            let x0: Vec<Vec<f64>> = (0..4).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
            let (x, _) = update_supports(&plans, &dists, &x0).unwrap();
            for i in 0..4 {
                let mut num = [0.0; 2];
                let mut den = 0.0;
                for t in 0..2 {
                    for j in 0..3 {
                        let p = plans[t].get(i, j);
                        den += p;
                        num[0] += p * dists[t].supports[j][0];
                        num[1] += p * dists[t].supports[j][1];
                    }
                }
                prop_assert!((x[i][0] - num[0] / den).abs() < 1e-12);
                prop_assert!((x[i][1] - num[1] / den).abs() < 1e-12);
            }
            prop_assert!(mainpro(&dists, &x, &plans) <= mainpro(&dists, &x0, &plans) + 1e-12);
        }
    }

    #[test]
    fn self_barycenter_with_oracle() {
        let mut r = rng(3);
        let d = DiscreteDistribution::normalized(
            (0..5).map(|_| 1.0 - r.random::<f64>()).collect(),
            (0..5).map(|_| vec![r.random::<f64>() * 10.0, r.random::<f64>() * 10.0]).collect(),
        )
        .unwrap();
        let opts = FreeSupportOptions {
            m: 5,
            inner: InnerSolver::Oracle,
            ..FreeSupportOptions::default()
        };
        let res = solve_free(&[d.clone()], None, &opts).unwrap();
        assert!(res.report.objective <= 1e-6);
        let twice = solve_free(&[d.clone(), d], None, &opts).unwrap();
        assert!(twice.report.objective <= 1e-6);
    }

    #[test]
    fn one_point_between_two_masses() {
        let a = DiscreteDistribution::new(vec![1.0], pts(&[0.0])).unwrap();
        let b = DiscreteDistribution::new(vec![1.0], pts(&[2.0])).unwrap();
        for inner in [InnerSolver::Oracle, InnerSolver::Sgs, InnerSolver::Badmm, InnerSolver::Ibp { epsilon: 0.01 }] {
            let opts = FreeSupportOptions {
                m: 1,
                inner,
                ..FreeSupportOptions::default()
            };
            let res = solve_free(&[a.clone(), b.clone()], None, &opts).unwrap();
            assert!((res.barycenter.supports[0][0] - 1.0).abs() < 1e-6, "{inner:?}");
            assert!((res.report.objective - 1.0).abs() < 1e-6, "{inner:?}");
        }
    }

    #[test]
    fn oracle_objectives_do_not_increase() {
        let data = crate::datagen::case1_data(3, 4, 5, 2, 8).unwrap();
        let opts = FreeSupportOptions {
            m: 4,
            inner: InnerSolver::Oracle,
            ..FreeSupportOptions::default()
        };
        let res = solve_free(&data.distributions, None, &opts).unwrap();
        for w in res.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", res.objectives);
        }
    }

    #[test]
    fn invalid_options() {
        let a = DiscreteDistribution::new(vec![1.0], pts(&[0.0])).unwrap();
        let bad = FreeSupportOptions { m: 0, ..FreeSupportOptions::default() };
        assert!(solve_free(&[a.clone()], None, &bad).is_err());
        let bad = FreeSupportOptions { m: 2, ..FreeSupportOptions::default() };
        assert!(solve_free(&[a], None, &bad).is_err());
    }
}
