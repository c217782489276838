use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::feasibility_residual;

fn random_instance(seed: u64, n: usize, m: usize, mt: usize) -> BarycenterInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = (0..n).map(|_| Mat::from_fn(m, mt, |_, _| rng.random::<f64>())).collect();
    let marginals = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..mt).map(|_| 0.1 + rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    BarycenterInstance::new(costs, marginals, vec![1.0 / n as f64; n]).unwrap()
}

/// A generic mid-run state: a few iterations from the origin.
fn warmed(inst: &BarycenterInstance, iters: usize, beta: f64) -> (DualIterate, IterationWorkspace) {
    let mut it = DualIterate::zeros(inst);
    let mut ws = IterationWorkspace::new(inst, &it);
    for _ in 0..iters {
        iterate_once(inst, &mut it, &mut ws, beta, 1.618).unwrap();
    }
    (it, ws)
}

fn col(m: &Mat) -> Vec<f64> {
    m.col_sums()
}

#[test]
fn scaling_examples() {
    let inst = BarycenterInstance::new(
        vec![Mat::from_rows(&[vec![3.0], vec![4.0]]).unwrap()],
        vec![vec![1.0]],
        vec![1.0],
    )
    .unwrap();
    let (s, k) = scale_instance(&inst);
    assert_eq!(k, 5.0);
    assert_eq!(s.cost(0).to_rows(), vec![vec![0.6], vec![0.8]]);

    let unit = inst.scaled_costs(0.2);
    let (s, k) = scale_instance(&unit);
    assert!((k - 1.0).abs() < 1e-15);
    assert!(s.cost(0).as_slice().iter().zip(unit.cost(0).as_slice()).all(|(a, b)| (a - b).abs() < 1e-15));

    let two = BarycenterInstance::new(
        vec![Mat::filled(1, 1, 1.0), Mat::filled(1, 2, 2.0)],
        vec![vec![1.0], vec![0.5, 0.5]],
        vec![0.5, 0.5],
    )
    .unwrap();
    let (s, k) = scale_instance(&two);
    assert_eq!(k, 3.0);
    assert_eq!(s.cost(1).to_rows(), vec![vec![2.0 / 3.0, 2.0 / 3.0]]);

    let zero = BarycenterInstance::new(vec![Mat::zeros(2, 2)], vec![vec![0.5, 0.5]], vec![1.0]).unwrap();
    assert_eq!(scale_instance(&zero).1, 1.0);
}

#[test]
fn penalty_rule() {
    assert_eq!(update_penalty(1.0, 1.0, 1.0), 1.0);
    assert!((update_penalty(1.0, 1.0, 10.0) - 1.1).abs() < 1e-15);
    assert!((update_penalty(1.0, 1.0, 100.0) - 1.5).abs() < 1e-15);
    assert_eq!(update_penalty(1.0, 1.0, 1000.0), 2.0);
    assert!((update_penalty(1.0, 10.0, 1.0) - 1.0 / 1.1).abs() < 1e-15);
    assert_eq!(update_penalty(4.0, 1000.0, 1.0), 2.0);
    assert_eq!(update_penalty(3.0, 0.0, 1.0), 3.0);
    assert_eq!(update_penalty(3.0, 1.0, 0.0), 3.0);
}

#[test]
fn step1_examples() {
    let inst = BarycenterInstance::new(
        vec![Mat::from_rows(&[vec![0.5], vec![-0.2]]).unwrap()],
        vec![vec![1.0]],
        vec![1.0],
    )
    .unwrap();
    let mut it = DualIterate::zeros(&inst);
    let mut ws = IterationWorkspace::new(&inst, &it);
    step1(&mut it, &mut ws, 1.0).unwrap();
    assert_eq!(it.blocks[0].v.to_rows(), vec![vec![0.5], vec![0.0]]);
    assert_eq!(ws.blocks[0].b.to_rows(), vec![vec![0.0], vec![-0.2]]);

    step2a(&inst, &it, &mut ws, 1.0);
    assert!((ws.blocks[0].z_tilde[0] + 0.4).abs() < 1e-15);

    let inst3 = BarycenterInstance::new(vec![Mat::filled(3, 1, 1.0)], vec![vec![1.0]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&inst3);
    it.blocks[0].y = vec![1.2, 0.4, -0.3];
    let mut ws = IterationWorkspace::new(&inst3, &it);
    step1(&mut it, &mut ws, 1.0).unwrap();
    assert!(it.u.iter().zip([0.3, 0.3, -0.3]).all(|(a, b)| (a - b).abs() < 1e-15));
    // D̃ = 1 + y ≥ 0.7 everywhere: nothing clipped
    assert!(ws.blocks[0].b.as_slice().iter().all(|&x| x == 0.0));
    assert_eq!(it.blocks[0].v, ws.blocks[0].d_tilde);
}

#[test]
fn step2a_vanishing_correction() {
    let inst = BarycenterInstance::new(vec![Mat::filled(2, 1, 1.0)], vec![vec![1.0]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&inst);
    it.blocks[0].z = vec![0.7];
    let mut ws = IterationWorkspace::new(&inst, &it);
    step1(&mut it, &mut ws, 1e9).unwrap();
    step2a(&inst, &it, &mut ws, 1e9);
    assert!((ws.blocks[0].z_tilde[0] - 0.7).abs() < 1e-9);
}

#[test]
fn step2c_example() {
    let inst = BarycenterInstance::new(vec![Mat::zeros(2, 1)], vec![vec![1.0]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&inst);
    let mut ws = IterationWorkspace::new(&inst, &it);
    ws.blocks[0].z_tilde = vec![0.5];
    ws.blocks[0].dy = vec![0.2, 0.0];
    step2c(&inst, &mut it, &ws);
    assert!((it.blocks[0].z[0] - 0.4).abs() < 1e-15);
    ws.blocks[0].dy = vec![0.0, 0.0];
    step2c(&inst, &mut it, &ws);
    assert_eq!(it.blocks[0].z[0], 0.5);
}

#[test]
fn step3_examples() {
    let inst = BarycenterInstance::new(vec![Mat::zeros(2, 1)], vec![vec![1.0]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&inst);
    let mut ws = IterationWorkspace::new(&inst, &it);
    // V = D̃ and Σy = u: nothing moves
    step3(&inst, &mut it, &mut ws, 1.0, 1.618);
    assert_eq!(it, DualIterate::zeros(&inst));

    it.blocks[0].y = vec![0.1, -0.1];
    it.blocks[0].v = Mat::from_rows(&[vec![0.1], vec![-0.1]]).unwrap();
    step3(&inst, &mut it, &mut ws, 1.0, 1.0);
    assert_eq!(it.lambda, vec![0.1, -0.1]);
    assert_eq!(it.blocks[0].big_lambda.as_slice(), &[0.0, 0.0]);
}

#[test]
fn step2b_trivial_stationary_point() {
    let inst = BarycenterInstance::new(vec![Mat::zeros(2, 2)], vec![vec![0.5, 0.5]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&inst);
    let mut ws = IterationWorkspace::new(&inst, &it);
    // h = β⁻¹λ − u + Σy = 0 and B̃e = 0
    it.lambda = vec![0.0, 0.0];
    it.u = vec![0.0, 0.0];
    ws.blocks[0].b_row = vec![0.0, 0.0];
    // β⁻¹Σa shifts B̃e unless β is huge
    step2b(&inst, &mut it, &mut ws, 1e300);
    assert!(it.blocks[0].y.iter().all(|y| y.abs() < 1e-299));
}

/// Dense minimizer over all `y` of the augmented Lagrangian with `u, V` new
/// and `z = z̃`, by a linear solve of its normal equations.
fn dense_y_oracle(inst: &BarycenterInstance, it: &DualIterate, ws: &IterationWorkspace, beta: f64) -> Vec<Vec<f64>> {
    let (n, m) = (inst.n(), inst.m());
    let dim = n * m;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for t in 0..n {
        let mt = inst.m_t(t) as f64;
        let zt_sum: f64 = ws.blocks[t].z_tilde.iter().sum();
        let vd: Vec<f64> = (0..m)
            .map(|i| {
                (0..inst.m_t(t))
                    .map(|j| it.blocks[t].v.get(i, j) - inst.cost(t).get(i, j))
                    .sum()
            })
            .collect();
        let lam_row = it.blocks[t].big_lambda.row_sums();
        for i in 0..m {
            let r = t * m + i;
            for s in 0..n {
                h[(r, s * m + i)] += beta;
            }
            h[(r, r)] += beta * mt;
            // gradient at y = 0
            let g0 = it.lambda[i] - beta * it.u[i] - lam_row[i] - beta * (vd[i] - zt_sum);
            rhs[r] = -g0;
        }
    }
    let sol = h.lu().solve(&rhs).unwrap();
    (0..n).map(|t| (0..m).map(|i| sol[t * m + i]).collect()).collect()
}

/// `argmin_z` of the augmented Lagrangian with `u, V` new and `y` given.
fn z_oracle(inst: &BarycenterInstance, it: &DualIterate, t: usize, y: &[f64], beta: f64) -> Vec<f64> {
    let m = inst.m() as f64;
    let ysum: f64 = y.iter().sum();
    let vd = Mat::from_fn(inst.m(), inst.m_t(t), |i, j| {
        it.blocks[t].v.get(i, j) - inst.cost(t).get(i, j)
    });
    let vd_col = vd.col_sums();
    let lam_col = col(&it.blocks[t].big_lambda);
    let a = inst.marginal(t);
    (0..a.len())
        .map(|j| (beta * vd_col[j] - beta * ysum + lam_col[j] - a[j]) / (beta * m))
        .collect()
}

#[test]
fn steps_2a_2b_2c_match_dense_minimizers() {
    for seed in 0..8 {
        let inst = random_instance(seed, 3, 4, 5);
        let beta = 0.7 + seed as f64 * 0.3;
        let (mut it, mut ws) = warmed(&inst, 7, beta);
        step1(&mut it, &mut ws, beta).unwrap();
        let y_old: Vec<Vec<f64>> = it.blocks.iter().map(|b| b.y.clone()).collect();

        step2a(&inst, &it, &mut ws, beta);
        for t in 0..inst.n() {
            let want = z_oracle(&inst, &it, t, &y_old[t], beta);
            for (a, b) in ws.blocks[t].z_tilde.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "2a seed {seed}: {a} vs {b}");
            }
        }

        // the y-subproblem is taken at z = z̃
        let want_y = dense_y_oracle(&inst, &it, &ws, beta);
        let st = step2b(&inst, &mut it, &mut ws, beta);
        assert!(st <= 1e-12, "stationarity {st}");
        for t in 0..inst.n() {
            for (a, b) in it.blocks[t].y.iter().zip(&want_y[t]) {
                assert!((a - b).abs() < 1e-10, "2b seed {seed}: {a} vs {b}");
            }
        }

        step2c(&inst, &mut it, &ws);
        for t in 0..inst.n() {
            let y = it.blocks[t].y.clone();
            let want = z_oracle(&inst, &it, t, &y, beta);
            for (a, b) in it.blocks[t].z.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "2c seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn step2b_single_entry_halves_the_correction() {
    let inst = random_instance(3, 1, 1, 1);
    let (mut it, mut ws) = warmed(&inst, 3, 1.0);
    step1(&mut it, &mut ws, 1.0).unwrap();
    step2a(&inst, &it, &mut ws, 1.0);
    let y0 = it.blocks[0].y[0];
    step2b(&inst, &mut it, &mut ws, 1.0);
    let g = ws.h[0] + ws.blocks[0].bt_e[0];
    assert!((it.blocks[0].y[0] - (y0 - g / 2.0)).abs() < 1e-14);
}

#[test]
fn cache_identity_every_iteration() {
    let inst = random_instance(11, 3, 4, 6);
    let beta = 1.3;
    let (mut it, mut ws) = warmed(&inst, 0, beta);
    for _ in 0..40 {
        let lam_before: Vec<Mat> = it.blocks.iter().map(|b| b.big_lambda.clone()).collect();
        let dt_before: Vec<Mat> = ws.blocks.iter().map(|b| b.d_tilde.clone()).collect();
        step1(&mut it, &mut ws, beta).unwrap();
        for t in 0..inst.n() {
            for k in 0..lam_before[t].as_slice().len() {
                let r = dt_before[t].as_slice()[k] - (1.0 / beta) * lam_before[t].as_slice()[k];
                let v = it.blocks[t].v.as_slice()[k];
                let b = ws.blocks[t].b.as_slice()[k];
                assert_eq!(v + b, r);
                assert!(v >= 0.0 && b <= 0.0);
            }
        }
        step2a(&inst, &it, &mut ws, beta);
        step2b(&inst, &mut it, &mut ws, beta);
        step2c(&inst, &mut it, &ws);
        step3(&inst, &mut it, &mut ws, beta, 1.618);
    }
}

#[test]
fn kkt_formula_examples() {
    let inst = BarycenterInstance::new(vec![Mat::zeros(2, 1)], vec![vec![1.0]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&inst);
    it.lambda = vec![2.0, 0.0];
    let r = kkt_residuals(&inst, &it).unwrap();
    assert!((r.eta7 - 1.0 / 3.0).abs() < 1e-15);

    let one = BarycenterInstance::new(vec![Mat::zeros(1, 1)], vec![vec![1.0]], vec![1.0]).unwrap();
    let mut it = DualIterate::zeros(&one);
    it.blocks[0].big_lambda = Mat::filled(1, 1, -0.1);
    let r = kkt_residuals(&one, &it).unwrap();
    assert!((r.eta8 - 0.1 / 1.1).abs() < 1e-15);
    assert_eq!(r.eta_p, r.eta1.max(r.eta2).max(r.eta3).max(r.eta4));
    assert_eq!(r.eta_d, r.eta5.max(r.eta6).max(r.eta7).max(r.eta8));
}

#[test]
fn unscaled_runs_report_the_terminating_residuals() {
    let inst = random_instance(7, 3, 4, 5);
    let opts = SgsOptions { tol: 1e-7, max_iter: 20000, scaling: false, ..Default::default() };
    let (_, _, rep) = solve(&inst, &opts).unwrap();
    assert!(rep.converged);
    assert!(rep.residuals.unwrap().max_kkt() < 1e-7);
}

#[test]
fn zero_cost_instance() {
    let inst = BarycenterInstance::new(vec![Mat::zeros(3, 3)], vec![vec![0.2, 0.3, 0.5]], vec![1.0]).unwrap();
    let (sol, _, rep) = solve(&inst, &SgsOptions::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.objective.abs() < 1e-5);
    assert!(feasibility_residual(&inst, &sol).unwrap() <= 1e-5);
}

#[test]
fn converges_on_small_random_instances() {
    for seed in 0..5 {
        let inst = random_instance(100 + seed, 3, 4, 5);
        let (sol, dual, rep) = solve(&inst, &SgsOptions { tol: 1e-7, max_iter: 20000, ..Default::default() }).unwrap();
        assert!(rep.converged, "seed {seed}");
        let (scaled, kappa) = scale_instance(&inst);
        let mut inner = dual.clone();
        inner.scale_dual(1.0 / kappa);
        assert!(kkt_residuals(&scaled, &inner).unwrap().max_kkt() < 1e-7);
        let r = rep.residuals.unwrap();
        assert!((r.obj_p - r.obj_d).abs() < 1e-5);
        assert!(feasibility_residual(&inst, &sol).unwrap() < 1e-7);
        assert!(rep.iterations <= 20000);
        assert!(rep.wall_time >= 0.0);
    }
}

#[test]
fn deterministic_across_runs_and_orders() {
    let inst = random_instance(5, 6, 5, 4);
    for order in [ReductionOrder::Sequential, ReductionOrder::Pairwise] {
        let opts = SgsOptions { reduction: order, max_iter: 300, ..Default::default() };
        let a = solve(&inst, &opts).unwrap();
        let b = solve(&inst, &opts).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }
}

#[test]
fn parallel_matches_sequential() {
    let inst = random_instance(9, 40, 40, 45);
    let seq = SgsOptions { threads: Some(1), max_iter: 100, ..Default::default() };
    let par = SgsOptions { threads: Some(3), ..seq.clone() };
    let a = solve(&inst, &seq).unwrap();
    let b = solve(&inst, &par).unwrap();
    assert_eq!(a.1, b.1);
}

#[test]
fn scaling_does_not_change_the_answer() {
    let inst = random_instance(21, 3, 4, 5).scaled_costs(3.0);
    let base = SgsOptions { tol: 1e-7, max_iter: 50000, ..Default::default() };
    let (_, _, a) = solve(&inst, &base).unwrap();
    let (_, _, b) = solve(&inst, &SgsOptions { scaling: false, ..base }).unwrap();
    assert!(a.converged && b.converged, "{} {} {:?} {:?}", a.iterations, b.iterations, a.residuals, b.residuals);
    let rel = (a.objective - b.objective).abs() / a.objective.abs();
    assert!(rel < 1e-5, "{rel}");
}

#[test]
fn iteration_cap_returns_flagged_best() {
    let inst = random_instance(2, 4, 6, 6);
    let (_, _, rep) = solve(&inst, &SgsOptions { tol: 1e-14, max_iter: 120, ..Default::default() }).unwrap();
    assert!(!rep.converged);
    assert_eq!(rep.iterations, 120);
    assert!(!rep.notes.is_empty());
    assert_eq!(rep.trace.rows.len(), 3);
}

#[test]
fn warm_start_from_solution_stops_quickly() {
    let inst = random_instance(8, 3, 4, 5);
    let opts = SgsOptions { tol: 1e-6, max_iter: 20000, ..Default::default() };
    let (_, it, cold) = solve(&inst, &opts).unwrap();
    let (_, _, warm) = solve_from(&inst, &opts, Some(&it)).unwrap();
    assert!(warm.converged);
    assert!(warm.iterations <= cold.iterations);
    assert_eq!(warm.iterations, opts.check_every);
}

#[test]
fn invalid_options() {
    let inst = random_instance(1, 1, 2, 2);
    for bad in [
        SgsOptions { tau: 1.7, ..Default::default() },
        SgsOptions { tau: 0.0, ..Default::default() },
        SgsOptions { tol: 0.0, ..Default::default() },
        SgsOptions { beta0: -1.0, ..Default::default() },
        SgsOptions { check_every: 0, ..Default::default() },
    ] {
        assert!(matches!(solve(&inst, &bad), Err(Error::InvalidOption(_))));
    }
}
