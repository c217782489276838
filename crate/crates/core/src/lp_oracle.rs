//! Exact solution of small fixed-support barycenter LPs by a dense revised
//! simplex method.
//!
//! Variables are `w` followed by every plan in row-major order. Constraint
//! rows are `Π⁽ᵗ⁾e − w = 0` for each `(t, i)`, `(Π⁽ᵗ⁾)ᵀe = a⁽ᵗ⁾` for each
//! `(t, j)` and `eᵀw = 1`. One column-marginal row per distribution is
//! implied by the others; the solver drops the last one of each `t`, which
//! pins the corresponding `z` multiplier to zero.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::matrix::{norm, norm_sq, Mat};
use crate::model::{eta_feas, objective_of_plans, BarycenterInstance, Method, ParamEcho, PrimalSolution, SolveReport, Trace};
use crate::sgs_admm::{DualBlock, DualIterate};
use crate::simplex::{project_simplex, support_function};

/// Largest accepted `m · Σ_t m_t`.
pub const MAX_PLAN_ENTRIES: usize = 200_000;

/// Sparse column-wise view of the barycenter LP, `min cᵀx` s.t. `Ax = b`, `x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpStandardForm {
    pub num_rows: usize,
    /// Nonzeros `(row, value)` of each column.
    pub columns: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    pub cost: Vec<f64>,
}

impl LpStandardForm {
    pub fn from_instance(instance: &BarycenterInstance) -> Self {
        let (n, m) = (instance.n(), instance.m());
        let col_offsets = col_row_offsets(instance);
        let sum_row = n * m + instance.total_support();
        let mut columns = Vec::with_capacity(m + m * instance.total_support());
        let mut cost = Vec::with_capacity(columns.capacity());
        for i in 0..m {
            let mut c: Vec<(usize, f64)> = (0..n).map(|t| (t * m + i, -1.0)).collect();
            c.push((sum_row, 1.0));
            columns.push(c);
            cost.push(0.0);
        }
        for t in 0..n {
            let d = instance.cost(t);
            for i in 0..m {
                for j in 0..d.cols() {
                    columns.push(vec![(t * m + i, 1.0), (col_offsets[t] + j, 1.0)]);
                    cost.push(d.get(i, j));
                }
            }
        }
        let mut rhs = vec![0.0; sum_row + 1];
        for t in 0..n {
            for (j, &aj) in instance.marginal(t).iter().enumerate() {
                rhs[col_offsets[t] + j] = aj;
            }
        }
        rhs[sum_row] = 1.0;
        Self {
            num_rows: sum_row + 1,
            columns,
            rhs,
            cost,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.columns.len()
    }
}

fn col_row_offsets(instance: &BarycenterInstance) -> Vec<usize> {
    let mut off = instance.n() * instance.m();
    (0..instance.n())
        .map(|t| {
            let o = off;
            off += instance.m_t(t);
            o
        })
        .collect()
}

/// Optimal primal and dual solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub primal: PrimalSolution,
    /// Dual variables with `D⁽ᵗ⁾ + y⁽ᵗ⁾eᵀ + e(z⁽ᵗ⁾)ᵀ ≥ 0`.
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub objective: f64,
    /// `−max_i(Σ_t y⁽ᵗ⁾)_i − Σ_t⟨z⁽ᵗ⁾, a⁽ᵗ⁾⟩`.
    pub dual_objective: f64,
    pub pivots: usize,
}

impl LpSolution {
    /// The dual-method iterate at this KKT point: `u = Σy`, `V = D + yeᵀ + ezᵀ`, `λ = w`, `Λ = Π`.
    pub fn to_dual_iterate(&self, instance: &BarycenterInstance) -> DualIterate {
        let m = instance.m();
        let mut u = vec![0.0; m];
        for y in &self.y {
            u.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        }
        let blocks = (0..instance.n())
            .map(|t| {
                let (y, z) = (&self.y[t], &self.z[t]);
                DualBlock {
                    v: Mat::from_fn(m, z.len(), |i, j| instance.cost(t).get(i, j) + y[i] + z[j]),
                    y: y.clone(),
                    z: z.clone(),
                    big_lambda: self.primal.plans[t].clone(),
                }
            })
            .collect();
        DualIterate {
            u,
            lambda: self.primal.w.clone(),
            blocks,
        }
    }
}

/// [`solve_lp_exact`] wrapped in the common report; `iterations` counts pivots.
pub fn solve(instance: &BarycenterInstance) -> Result<(PrimalSolution, SolveReport)> {
    let start = Instant::now();
    let lp = solve_lp_exact(instance)?;
    let report = SolveReport {
        method: Method::Oracle,
        objective: lp.objective,
        eta_feas: eta_feas(&lp.primal.w, &lp.primal.plans, instance.marginals()),
        residuals: None,
        scaled_residuals: None,
        iterations: lp.pivots,
        wall_time: start.elapsed().as_secs_f64(),
        converged: true,
        params: ParamEcho::default(),
        marginal_audit: None,
        notes: Vec::new(),
        trace: Trace::default(),
    };
    Ok((lp.primal, report))
}

/// Solves the LP to vertex accuracy.
pub fn solve_lp_exact(instance: &BarycenterInstance) -> Result<LpSolution> {
    let entries = instance.m() * instance.total_support();
    if entries > MAX_PLAN_ENTRIES {
        return Err(Error::TooLarge {
            variables: entries + instance.m(),
            limit: MAX_PLAN_ENTRIES,
        });
    }
    let lp = LpStandardForm::from_instance(instance);
    let (n, m) = (instance.n(), instance.m());
    let col_offsets = col_row_offsets(instance);

    // drop the last column-marginal row of every distribution
    let dropped: Vec<usize> = (0..n).map(|t| col_offsets[t] + instance.m_t(t) - 1).collect();
    let mut keep = vec![usize::MAX; lp.num_rows];
    let mut kept = 0;
    for (r, slot) in keep.iter_mut().enumerate() {
        if !dropped.contains(&r) {
            *slot = kept;
            kept += 1;
        }
    }
    let columns: Vec<Vec<(usize, f64)>> = lp
        .columns
        .iter()
        .map(|c| {
            c.iter()
                .filter(|(r, _)| keep[*r] != usize::MAX)
                .map(|&(r, v)| (keep[r], v))
                .collect()
        })
        .collect();
    let mut rhs = vec![0.0; kept];
    for (r, &k) in keep.iter().enumerate() {
        if k != usize::MAX {
            rhs[k] = lp.rhs[r];
        }
    }

    let cmax = lp.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let cscale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
    let cost: Vec<f64> = lp.cost.iter().map(|c| c * cscale).collect();

    let mut spx = Simplex::new(columns, rhs, cost);
    let crash = crash_basis(instance);
    match spx.install_basis(&crash) {
        Ok(()) => spx.run_from_feasible()?,
        Err(e) => {
            log::debug!("crash basis rejected ({e}); starting from artificials");
            spx = Simplex::new(spx.columns, spx.rhs, spx.cost);
            spx.run()?;
        }
    }

    let x = spx.primal_values();
    let row_duals = spx.row_duals();
    let w: Vec<f64> = x[..m].to_vec();
    let mut plans = Vec::with_capacity(n);
    let mut off = m;
    for t in 0..n {
        let mt = instance.m_t(t);
        plans.push(Mat::from_vec(m, mt, x[off..off + m * mt].to_vec()));
        off += m * mt;
    }
    let dual_of = |r: usize| -> f64 {
        if keep[r] == usize::MAX {
            0.0
        } else {
            row_duals[keep[r]] / cscale
        }
    };
    let y: Vec<Vec<f64>> = (0..n).map(|t| (0..m).map(|i| -dual_of(t * m + i)).collect()).collect();
    let z: Vec<Vec<f64>> = (0..n)
        .map(|t| (0..instance.m_t(t)).map(|j| -dual_of(col_offsets[t] + j)).collect())
        .collect();
    let primal = PrimalSolution { w, plans };
    let objective = objective_of_plans(instance, &primal.plans);
    let dual_objective = dual_value(instance, &y, &z);
    Ok(LpSolution {
        primal,
        y,
        z,
        objective,
        dual_objective,
        pivots: spx.pivots,
    })
}

/// A feasible triangular starting basis: all mass on the barycenter point
/// `i*` with the cheapest product plan, i.e. `w = e_{i*}`, `Π⁽ᵗ⁾ = e_{i*}(a⁽ᵗ⁾)ᵀ`,
/// completed by the degenerate entries `Π⁽ᵗ⁾(i, m_t − 1)` for `i ≠ i*`.
fn crash_basis(instance: &BarycenterInstance) -> Vec<usize> {
    let (n, m) = (instance.n(), instance.m());
    let star = (0..m)
        .map(|i| {
            let c: f64 = (0..n)
                .map(|t| instance.cost(t).row(i).iter().zip(instance.marginal(t)).map(|(d, a)| d * a).sum::<f64>())
                .sum();
            (i, c)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(i, _)| i);
    let mut basis = vec![star];
    let mut off = m;
    for t in 0..n {
        let mt = instance.m_t(t);
        basis.extend((0..mt).map(|j| off + star * mt + j));
        basis.extend((0..m).filter(|&i| i != star).map(|i| off + i * mt + mt - 1));
        off += m * mt;
    }
    basis
}

fn dual_value(instance: &BarycenterInstance, y: &[Vec<f64>], z: &[Vec<f64>]) -> f64 {
    let mut s = vec![0.0; instance.m()];
    for yt in y {
        s.iter_mut().zip(yt).for_each(|(a, b)| *a += b);
    }
    let za: f64 = z
        .iter()
        .zip(instance.marginals())
        .map(|(zt, a)| zt.iter().zip(a).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    -support_function(&s) - za
}

/// Largest relative violation among the four optimality blocks:
/// `w = Pr_Δ(w + Σ_t y⁽ᵗ⁾)`, `Π = (Π − S)₊` with `S = D + yeᵀ + ezᵀ`,
/// `Πe = w` and `Πᵀe = a`.
pub fn verify_kkt(instance: &BarycenterInstance, primal: &PrimalSolution, y: &[Vec<f64>], z: &[Vec<f64>]) -> Result<f64> {
    instance.check_solution(primal)?;
    let (n, m) = (instance.n(), instance.m());
    if y.len() != n || z.len() != n || y.iter().any(|v| v.len() != m) || z.iter().zip(instance.sizes()).any(|(v, s)| v.len() != s) {
        return Err(Error::Dimension("dual multipliers do not match the instance".into()));
    }
    let w = &primal.w;
    let mut sum_y = vec![0.0; m];
    for yt in y {
        sum_y.iter_mut().zip(yt).for_each(|(a, b)| *a += b);
    }
    let shifted: Vec<f64> = w.iter().zip(&sum_y).map(|(a, b)| a + b).collect();
    let p = project_simplex(&shifted)?;
    let simplex_num: f64 = w.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let r1 = simplex_num / (1.0 + norm(w) + norm(&sum_y));

    let (mut comp, mut pi_sq, mut s_sq, mut row, mut col, mut a_sq) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for t in 0..n {
        let d = instance.cost(t);
        let pl = &primal.plans[t];
        for i in 0..m {
            for j in 0..d.cols() {
                let s = d.get(i, j) + y[t][i] + z[t][j];
                let x = pl.get(i, j);
                let r = x - (x - s).max(0.0);
                comp += r * r;
                pi_sq += x * x;
                s_sq += s * s;
            }
        }
        for (rs, wi) in pl.row_sums().iter().zip(w) {
            row += (rs - wi).powi(2);
        }
        for (cs, aj) in pl.col_sums().iter().zip(instance.marginal(t)) {
            col += (cs - aj).powi(2);
        }
        a_sq += norm_sq(instance.marginal(t));
    }
    let (pi_n, s_n) = (pi_sq.sqrt(), s_sq.sqrt());
    let r2 = comp.sqrt() / (1.0 + pi_n + s_n);
    let r3 = row.sqrt() / (1.0 + norm(w) + pi_n);
    let r4 = col.sqrt() / (1.0 + a_sq.sqrt() + pi_n);
    Ok(r1.max(r2).max(r3).max(r4))
}

const PIVOT_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const REFRESH_DUALS: usize = 50;
const REFRESH_PRIMAL: usize = 100;

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

/// Revised simplex with a dense explicit basis inverse, stored column-major.
struct Simplex {
    rows: usize,
    columns: Vec<Vec<(usize, f64)>>,
    /// Rows whose sign was flipped to make the right-hand side nonnegative.
    flipped: Vec<bool>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    binv: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    xb: Vec<f64>,
    duals: Vec<f64>,
    pivots: usize,
}

impl Simplex {
    fn new(mut columns: Vec<Vec<(usize, f64)>>, mut rhs: Vec<f64>, cost: Vec<f64>) -> Self {
        let rows = rhs.len();
        let flipped: Vec<bool> = rhs.iter().map(|&b| b < 0.0).collect();
        for c in &mut columns {
            for (r, v) in c.iter_mut() {
                if flipped[*r] {
                    *v = -*v;
                }
            }
        }
        rhs.iter_mut().for_each(|b| *b = b.abs());
        let nvars = columns.len();
        let mut binv = vec![0.0; rows * rows];
        for r in 0..rows {
            binv[r * rows + r] = 1.0;
        }
        Self {
            rows,
            columns,
            flipped,
            xb: rhs.clone(),
            rhs,
            cost,
            binv,
            basis: (nvars..nvars + rows).collect(),
            in_basis: vec![false; nvars + rows],
            duals: vec![0.0; rows],
            pivots: 0,
        }
    }

    fn nvars(&self) -> usize {
        self.columns.len()
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= self.nvars()
    }

    fn var_cost(&self, var: usize, phase: Phase) -> f64 {
        match (phase, self.is_artificial(var)) {
            (Phase::One, true) => 1.0,
            (Phase::One, false) => 0.0,
            (Phase::Two, true) => 0.0,
            (Phase::Two, false) => self.cost[var],
        }
    }

    #[inline]
    fn binv_col(&self, k: usize) -> &[f64] {
        &self.binv[k * self.rows..(k + 1) * self.rows]
    }

    /// `d = B⁻¹ a_q`.
    fn ftran(&self, var: usize) -> Vec<f64> {
        if self.is_artificial(var) {
            return self.binv_col(var - self.nvars()).to_vec();
        }
        let mut d = vec![0.0; self.rows];
        for &(k, v) in &self.columns[var] {
            for (di, bi) in d.iter_mut().zip(self.binv_col(k)) {
                *di += v * bi;
            }
        }
        d
    }

    fn refresh_duals(&mut self, phase: Phase) {
        let cb: Vec<f64> = self.basis.iter().map(|&v| self.var_cost(v, phase)).collect();
        for k in 0..self.rows {
            self.duals[k] = cb.iter().zip(self.binv_col(k)).map(|(a, b)| a * b).sum();
        }
    }

    fn refresh_primal(&mut self) {
        let mut x = vec![0.0; self.rows];
        for (k, &b) in self.rhs.iter().enumerate() {
            if b != 0.0 {
                for (xi, bi) in x.iter_mut().zip(self.binv_col(k)) {
                    *xi += b * bi;
                }
            }
        }
        self.xb = x;
    }

    fn reduced_cost(&self, var: usize, phase: Phase) -> f64 {
        let c = self.var_cost(var, phase);
        c - self.columns[var].iter().map(|&(k, v)| self.duals[k] * v).sum::<f64>()
    }

    fn objective(&self, phase: Phase) -> f64 {
        self.basis.iter().zip(&self.xb).map(|(&v, x)| self.var_cost(v, phase) * x).sum()
    }

    fn run(&mut self) -> Result<()> {
        self.iterate(Phase::One)?;
        self.refresh_primal();
        let infeas = self.objective(Phase::One);
        if infeas > FEAS_TOL {
            return Err(Error::Lp(format!("phase one ended with infeasibility {infeas:e}")));
        }
        for attempt in 0..3 {
            self.iterate(Phase::Two)?;
            if self.verify() {
                return Ok(());
            }
            log::debug!("simplex verification failed (attempt {attempt}); reinverting");
            self.reinvert()?;
            self.refresh_primal();
        }
        Err(Error::Lp("could not reach a verified optimal basis".into()))
    }

    /// Replaces the artificial starting basis by `basis` (structural variables only),
    /// which must be nonsingular and primal feasible.
    fn install_basis(&mut self, basis: &[usize]) -> Result<()> {
        if basis.len() != self.rows || basis.iter().any(|&v| v >= self.nvars()) {
            return Err(Error::Lp("crash basis has the wrong size".into()));
        }
        let old = std::mem::replace(&mut self.basis, basis.to_vec());
        self.in_basis.iter_mut().for_each(|b| *b = false);
        for &v in basis {
            self.in_basis[v] = true;
        }
        let res = self.reinvert().and_then(|()| {
            self.refresh_primal();
            if self.xb.iter().all(|&x| x >= -FEAS_TOL) {
                Ok(())
            } else {
                Err(Error::Lp("crash basis is infeasible".into()))
            }
        });
        if res.is_err() {
            self.basis = old;
        }
        res
    }

    fn run_from_feasible(&mut self) -> Result<()> {
        self.xb.iter_mut().for_each(|x| *x = x.max(0.0));
        for attempt in 0..3 {
            self.iterate(Phase::Two)?;
            if self.verify() {
                return Ok(());
            }
            log::debug!("simplex verification failed (attempt {attempt}); reinverting");
            self.reinvert()?;
            self.refresh_primal();
        }
        Err(Error::Lp("could not reach a verified optimal basis".into()))
    }

    fn iterate(&mut self, phase: Phase) -> Result<()> {
        self.refresh_duals(phase);
        let limit = 50 * (self.rows + self.nvars()) + 10_000;
        let mut stall = 0usize;
        let mut bland = false;
        let mut last_obj = self.objective(phase);
        for step in 0..limit {
            let entering = self.price(phase, bland);
            let Some((q, rc)) = entering else {
                return Ok(());
            };
            let d = self.ftran(q);
            let Some(r) = self.ratio_test(&d, phase, bland) else {
                return Err(Error::Lp("unbounded direction in a bounded problem".into()));
            };
            self.pivot(q, r, &d, rc);
            if (step + 1) % REFRESH_DUALS == 0 {
                self.refresh_duals(phase);
            }
            if (step + 1) % REFRESH_PRIMAL == 0 {
                self.refresh_primal();
            }
            let obj = self.objective(phase);
            if obj < last_obj - 1e-14 * (1.0 + last_obj.abs()) {
                last_obj = obj;
                stall = 0;
                bland = false;
            } else {
                stall += 1;
                if stall > 10 * self.rows {
                    bland = true;
                }
            }
        }
        Err(Error::Lp(format!("pivot limit {limit} reached")))
    }

    fn price(&self, phase: Phase, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for var in 0..self.nvars() {
            if self.in_basis[var] {
                continue;
            }
            let rc = self.reduced_cost(var, phase);
            if rc < -PRICE_TOL {
                if bland {
                    return Some((var, rc));
                }
                if best.is_none_or(|(_, b)| rc < b) {
                    best = Some((var, rc));
                }
            }
        }
        best
    }

    fn ratio_test(&self, d: &[f64], phase: Phase, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &di) in d.iter().enumerate() {
            let art = self.is_artificial(self.basis[i]);
            let ratio = if phase == Phase::Two && art && di.abs() > PIVOT_TOL {
                0.0
            } else if di > PIVOT_TOL {
                self.xb[i].max(0.0) / di
            } else {
                continue;
            };
            best = match best {
                None => Some((i, ratio)),
                Some((j, rb)) => {
                    let tie = (ratio - rb).abs() <= 1e-12 * (1.0 + rb.abs());
                    let better = if tie {
                        if bland {
                            self.basis[i] < self.basis[j]
                        } else {
                            di.abs() > d[j].abs()
                        }
                    } else {
                        ratio < rb
                    };
                    if better {
                        Some((i, ratio))
                    } else {
                        Some((j, rb))
                    }
                }
            };
        }
        best.map(|(i, _)| i)
    }

    fn pivot(&mut self, q: usize, r: usize, d: &[f64], rc: f64) {
        let rows = self.rows;
        let dr = d[r];
        let theta = (self.xb[r].max(0.0) / dr).max(0.0);
        for (x, di) in self.xb.iter_mut().zip(d) {
            *x -= theta * di;
            if *x < 0.0 && *x > -FEAS_TOL {
                *x = 0.0;
            }
        }
        self.xb[r] = theta;

        let f = rc / dr;
        for k in 0..rows {
            let p = self.binv[k * rows + r];
            if p != 0.0 {
                self.duals[k] += f * p;
                let s = p / dr;
                let col = &mut self.binv[k * rows..(k + 1) * rows];
                for (c, di) in col.iter_mut().zip(d) {
                    *c -= s * di;
                }
                col[r] = s;
            }
        }
        let leaving = self.basis[r];
        self.in_basis[leaving] = false;
        self.in_basis[q] = true;
        self.basis[r] = q;
        self.pivots += 1;
    }

    /// Builds `B` from the basis and inverts it by Gauss-Jordan elimination.
    fn reinvert(&mut self) -> Result<()> {
        let n = self.rows;
        // row-major augmented work matrix
        let mut a = vec![0.0; n * n];
        for (pos, &var) in self.basis.iter().enumerate() {
            if self.is_artificial(var) {
                a[(var - self.nvars()) * n + pos] = 1.0;
            } else {
                for &(k, v) in &self.columns[var] {
                    a[k * n + pos] = v;
                }
            }
        }
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a[x * n + c].abs().total_cmp(&a[y * n + c].abs()))
                .expect("nonempty");
            if a[p * n + c].abs() < 1e-13 {
                return Err(Error::Lp("singular basis on reinversion".into()));
            }
            if p != c {
                for k in 0..n {
                    a.swap(p * n + k, c * n + k);
                    inv.swap(p * n + k, c * n + k);
                }
            }
            let piv = a[c * n + c];
            for k in 0..n {
                a[c * n + k] /= piv;
                inv[c * n + k] /= piv;
            }
            for i in 0..n {
                if i != c {
                    let f = a[i * n + c];
                    if f != 0.0 {
                        for k in 0..n {
                            a[i * n + k] -= f * a[c * n + k];
                            inv[i * n + k] -= f * inv[c * n + k];
                        }
                    }
                }
            }
        }
        // inv is row-major B⁻¹; store column-major
        for i in 0..n {
            for k in 0..n {
                self.binv[k * n + i] = inv[i * n + k];
            }
        }
        Ok(())
    }

    fn basis_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (pos, &var) in self.basis.iter().enumerate() {
            if self.is_artificial(var) {
                out[var - self.nvars()] += x[pos];
            } else {
                for &(k, v) in &self.columns[var] {
                    out[k] += v * x[pos];
                }
            }
        }
        out
    }

    fn basis_t_times(&self, y: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|&var| {
                if self.is_artificial(var) {
                    y[var - self.nvars()]
                } else {
                    self.columns[var].iter().map(|&(k, v)| v * y[k]).sum()
                }
            })
            .collect()
    }

    fn apply_binv(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (k, &rk) in r.iter().enumerate() {
            if rk != 0.0 {
                for (o, b) in out.iter_mut().zip(self.binv_col(k)) {
                    *o += rk * b;
                }
            }
        }
        out
    }

    fn apply_binv_t(&self, r: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|k| self.binv_col(k).iter().zip(r).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Refines `x_B` and the duals against the basis and checks optimality.
    fn verify(&mut self) -> bool {
        self.refresh_primal();
        self.refresh_duals(Phase::Two);
        for _ in 0..2 {
            let bx = self.basis_times(&self.xb);
            let res: Vec<f64> = self.rhs.iter().zip(&bx).map(|(b, x)| b - x).collect();
            let corr = self.apply_binv(&res);
            self.xb.iter_mut().zip(&corr).for_each(|(x, c)| *x += c);

            let cb: Vec<f64> = self.basis.iter().map(|&v| self.var_cost(v, Phase::Two)).collect();
            let bty = self.basis_t_times(&self.duals);
            let res: Vec<f64> = cb.iter().zip(&bty).map(|(c, x)| c - x).collect();
            let corr = self.apply_binv_t(&res);
            self.duals.iter_mut().zip(&corr).for_each(|(y, c)| *y += c);
        }
        let bx = self.basis_times(&self.xb);
        let primal_ok = self.rhs.iter().zip(&bx).all(|(b, x)| (b - x).abs() <= 1e-12);
        let nonneg = self
            .basis
            .iter()
            .zip(&self.xb)
            .all(|(&v, &x)| x >= -1e-12 && !(self.is_artificial(v) && x > 1e-12));
        let dual_ok = (0..self.nvars()).all(|v| self.in_basis[v] || self.reduced_cost(v, Phase::Two) >= -1e-10);
        primal_ok && nonneg && dual_ok
    }

    fn primal_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.nvars()];
        for (&var, &v) in self.basis.iter().zip(&self.xb) {
            if !self.is_artificial(var) {
                x[var] = v.max(0.0);
            }
        }
        x
    }

    /// Multipliers of the original (unflipped) rows.
    fn row_duals(&self) -> Vec<f64> {
        self.duals
            .iter()
            .zip(&self.flipped)
            .map(|(&y, &f)| if f { -y } else { y })
            .collect()
    }
}
