//! Iterative Bregman projections for the entropically regularized
//! barycenter problem, in plain scaling form and in a log-domain form that
//! stays finite for small `ε`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{rel_change, Mat};
use crate::model::{eta_feas, objective_of_plans, BarycenterInstance, Method, ParamEcho, PrimalSolution, SolveReport, Trace};
use crate::par::{self, ReductionOrder};

/// `ε` at or below which [`IbpMode`] selection picks the log domain.
pub const LOG_DOMAIN_THRESHOLD: f64 = 1e-3;

pub const TRACE_COLUMNS: [&str; 6] = ["iter", "dw", "du", "dv", "change", "elapsed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IbpMode {
    Standard,
    Log,
}

impl IbpMode {
    pub fn for_epsilon(epsilon: f64) -> Self {
        if epsilon <= LOG_DOMAIN_THRESHOLD {
            IbpMode::Log
        } else {
            IbpMode::Standard
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IbpMode::Standard => "standard",
            IbpMode::Log => "log",
        }
    }
}

impl std::str::FromStr for IbpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(IbpMode::Standard),
            "log" | "log-domain" | "log_domain" => Ok(IbpMode::Log),
            other => Err(Error::InvalidOption(format!("unknown IBP mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpOptions {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// `None` picks from `epsilon`.
    pub mode: Option<IbpMode>,
    pub check_every: usize,
    /// Divide all costs by their largest entry before forming kernels.
    pub normalize_costs: bool,
    /// Check the marginal identities every this many iterations.
    pub audit_every: Option<usize>,
    pub threads: Option<usize>,
    pub reduction: ReductionOrder,
}

impl Default for IbpOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            tol: 1e-8,
            max_iter: 10_000,
            mode: None,
            check_every: 10,
            normalize_costs: true,
            audit_every: None,
            threads: None,
            reduction: ReductionOrder::Sequential,
        }
    }
}

impl IbpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidOption(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidOption(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 || self.check_every == 0 || self.audit_every == Some(0) {
            return Err(Error::InvalidOption("iteration counts must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_mode(&self) -> IbpMode {
        self.mode.unwrap_or_else(|| IbpMode::for_epsilon(self.epsilon))
    }
}

fn check_marginals(instance: &BarycenterInstance) -> Result<()> {
    for (t, a) in instance.marginals().iter().enumerate() {
        if let Some(j) = a.iter().position(|&x| x <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "marginal {t} has a zero entry at {j}; run presolve reduction first"
            )));
        }
    }
    Ok(())
}

/// Largest cost entry, or 1 when all costs vanish.
pub fn cost_normalizer(instance: &BarycenterInstance) -> f64 {
    let mx = instance
        .costs()
        .iter()
        .flat_map(|d| d.as_slice().iter().copied())
        .fold(0.0, f64::max);
    if mx > 0.0 {
        mx
    } else {
        1.0
    }
}

/// Relative sup-norm deviation `‖x − target‖∞ / ‖target‖∞`.
pub fn marginal_error(x: &[f64], target: &[f64]) -> f64 {
    let num = x.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let den = target.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn matvec(k: &Mat, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = k.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn matvec_t(k: &Mat, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (i, &ui) in u.iter().enumerate() {
        for (o, &kij) in out.iter_mut().zip(k.row(i)) {
            *o += kij * ui;
        }
    }
}

/// Row and column sums of `Diag(u) K Diag(v)`, formed entry by entry.
fn plan_sums(k: &Mat, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; u.len()];
    let mut cols = vec![0.0; v.len()];
    for (i, &ui) in u.iter().enumerate() {
        for (j, (&kij, &vj)) in k.row(i).iter().zip(v).enumerate() {
            let p = ui * kij * vj;
            rows[i] += p;
            cols[j] += p;
        }
    }
    (rows, cols)
}

#[derive(Debug, Clone)]
struct ScalingBlock {
    kernel: Mat,
    u: Vec<f64>,
    v: Vec<f64>,
    kv: Vec<f64>,
    ktu: Vec<f64>,
    log_w: Vec<f64>,
    audit: f64,
}

/// Scaling-form state: `w`, `u⁽ᵗ⁾`, `v⁽ᵗ⁾` and kernels `Ξ_t = exp(−D⁽ᵗ⁾/ε)`.
#[derive(Debug, Clone)]
pub struct IbpState {
    pub w: Vec<f64>,
    blocks: Vec<ScalingBlock>,
    marginals: Vec<Vec<f64>>,
    epsilon: f64,
    par: bool,
    order: ReductionOrder,
}

impl IbpState {
    /// Starts from `w = e/m`, `v = e`. Fails when a kernel entry underflows,
    /// since the scaling form can no longer represent the regularized plan.
    pub fn new(instance: &BarycenterInstance, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidOption(format!("epsilon = {epsilon} must be positive")));
        }
        check_marginals(instance)?;
        let m = instance.m();
        let mut blocks = Vec::with_capacity(instance.n());
        for t in 0..instance.n() {
            let kernel = instance.cost(t).map(|d| (-d / epsilon).exp());
            if kernel.as_slice().iter().any(|&x| !(x >= f64::MIN_POSITIVE)) {
                return Err(Error::Instability(format!(
                    "kernel exp(-D/eps) underflows for distribution {t} at eps = {epsilon}; use log-domain mode"
                )));
            }
            let mt = instance.m_t(t);
            blocks.push(ScalingBlock {
                kernel,
                u: vec![1.0; m],
                v: vec![1.0; mt],
                kv: vec![0.0; m],
                ktu: vec![0.0; mt],
                log_w: vec![0.0; m],
                audit: 0.0,
            });
        }
        Ok(Self {
            w: vec![1.0 / m as f64; m],
            blocks,
            marginals: instance.marginals().to_vec(),
            epsilon,
            par: false,
            order: ReductionOrder::Sequential,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn u(&self, t: usize) -> &[f64] {
        &self.blocks[t].u
    }

    pub fn v(&self, t: usize) -> &[f64] {
        &self.blocks[t].v
    }

    pub fn kernel(&self, t: usize) -> &Mat {
        &self.blocks[t].kernel
    }

    /// One sweep: `u ← w./(Ξv)`, `v ← a./(Ξᵀu)`, then `w` as the geometric mean
    /// of `u⊙(Ξv)` over `t` (accumulated as a sum of logs).
    pub fn iterate(&mut self) -> Result<()> {
        self.sweep(false).map(|_| ())
    }

    /// Same sweep, also returning the largest relative violation of the
    /// marginal identities measured on the materialized plans.
    pub fn iterate_audited(&mut self) -> Result<f64> {
        self.sweep(true)
    }

    fn sweep(&mut self, audit: bool) -> Result<f64> {
        let w = &self.w;
        let marginals = &self.marginals;
        let results: Vec<Option<String>> = {
            let blocks = &mut self.blocks;
            let mut out = vec![None; blocks.len()];
            par::for_each_pair(self.par, blocks, &mut out, |t, b, err| {
                *err = scaling_block_step(b, w, &marginals[t], audit).err().map(|e| format!("distribution {t}: {e}"));
            });
            out
        };
        if let Some(msg) = results.into_iter().flatten().next() {
            return Err(Error::Instability(format!("{msg}; use log-domain mode")));
        }
        let n = self.blocks.len() as f64;
        let sum = par::sum_vectors(self.order, self.blocks.len(), self.w.len(), |t| &self.blocks[t].log_w);
        let audit_max = self.blocks.iter().map(|b| b.audit).fold(0.0, f64::max);
        for (wi, s) in self.w.iter_mut().zip(sum) {
            *wi = (s / n).exp();
        }
        if self.w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Instability("barycenter weights left (0, inf); use log-domain mode".into()));
        }
        Ok(audit_max)
    }

    /// `Π⁽ᵗ⁾ = Diag(u⁽ᵗ⁾) Ξ_t Diag(v⁽ᵗ⁾)`.
    pub fn plans(&self) -> Vec<Mat> {
        self.blocks
            .iter()
            .map(|b| {
                let (m, mt) = b.kernel.shape();
                Mat::from_fn(m, mt, |i, j| b.u[i] * b.kernel.get(i, j) * b.v[j])
            })
            .collect()
    }
}

fn positive_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && *v > 0.0)
}

fn scaling_block_step(b: &mut ScalingBlock, w: &[f64], a: &[f64], audit: bool) -> std::result::Result<(), &'static str> {
    matvec(&b.kernel, &b.v, &mut b.kv);
    if !positive_finite(&b.kv) {
        return Err("K v left (0, inf)");
    }
    for ((u, wi), kv) in b.u.iter_mut().zip(w).zip(&b.kv) {
        *u = wi / kv;
    }
    if !positive_finite(&b.u) {
        return Err("u left (0, inf)");
    }
    b.audit = 0.0;
    if audit {
        let (rows, _) = plan_sums(&b.kernel, &b.u, &b.v);
        b.audit = marginal_error(&rows, w);
    }
    matvec_t(&b.kernel, &b.u, &mut b.ktu);
    if !positive_finite(&b.ktu) {
        return Err("K^T u left (0, inf)");
    }
    for ((v, aj), k) in b.v.iter_mut().zip(a).zip(&b.ktu) {
        *v = aj / k;
    }
    if !positive_finite(&b.v) {
        return Err("v left (0, inf)");
    }
    if audit {
        let (_, cols) = plan_sums(&b.kernel, &b.u, &b.v);
        b.audit = b.audit.max(marginal_error(&cols, a));
    }
    matvec(&b.kernel, &b.v, &mut b.kv);
    for ((l, u), kv) in b.log_w.iter_mut().zip(&b.u).zip(&b.kv) {
        *l = (u * kv).ln();
    }
    if b.log_w.iter().any(|x| !x.is_finite()) {
        return Err("u (K v) left (0, inf)");
    }
    Ok(())
}

/// `ε·log Σ_j exp(x_j/ε)` with the maximum shifted out.
fn eps_lse(eps: f64, xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let s: f64 = xs.map(|x| ((x - mx) / eps).exp()).sum();
    mx + eps * s.ln()
}

#[derive(Debug, Clone)]
struct LogBlock {
    cost: Mat,
    u: Vec<f64>,
    v: Vec<f64>,
    eps_log_a: Vec<f64>,
    w_part: Vec<f64>,
    audit: f64,
}

/// Log-domain state: `w̃ = ε log w`, `ũ = ε log u`, `ṽ = ε log v`, `ã = ε log a`.
#[derive(Debug, Clone)]
pub struct IbpLogState {
    pub w_tilde: Vec<f64>,
    blocks: Vec<LogBlock>,
    epsilon: f64,
    par: bool,
    order: ReductionOrder,
}

impl IbpLogState {
    /// Starts from `w̃ = ε log(e/m)`, `ũ = ṽ = 0`.
    pub fn new(instance: &BarycenterInstance, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidOption(format!("epsilon = {epsilon} must be positive")));
        }
        check_marginals(instance)?;
        let m = instance.m();
        let blocks = (0..instance.n())
            .map(|t| LogBlock {
                cost: instance.cost(t).clone(),
                u: vec![0.0; m],
                v: vec![0.0; instance.m_t(t)],
                eps_log_a: instance.marginal(t).iter().map(|a| epsilon * a.ln()).collect(),
                w_part: vec![0.0; m],
                audit: 0.0,
            })
            .collect();
        Ok(Self {
            w_tilde: vec![epsilon * (1.0 / m as f64).ln(); m],
            blocks,
            epsilon,
            par: false,
            order: ReductionOrder::Sequential,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn u_tilde(&self, t: usize) -> &[f64] {
        &self.blocks[t].u
    }

    pub fn v_tilde(&self, t: usize) -> &[f64] {
        &self.blocks[t].v
    }

    pub fn w(&self) -> Vec<f64> {
        self.w_tilde.iter().map(|x| (x / self.epsilon).exp()).collect()
    }

    pub fn u(&self, t: usize) -> Vec<f64> {
        self.blocks[t].u.iter().map(|x| (x / self.epsilon).exp()).collect()
    }

    pub fn v(&self, t: usize) -> Vec<f64> {
        self.blocks[t].v.iter().map(|x| (x / self.epsilon).exp()).collect()
    }

    pub fn iterate(&mut self) {
        self.sweep(false);
    }

    pub fn iterate_audited(&mut self) -> f64 {
        self.sweep(true)
    }

    fn sweep(&mut self, audit: bool) -> f64 {
        let eps = self.epsilon;
        let w = &self.w_tilde;
        par::for_each(self.par, &mut self.blocks, |_, b| log_block_step(b, w, eps, audit));
        let n = self.blocks.len() as f64;
        let sum = par::sum_vectors(self.order, self.blocks.len(), self.w_tilde.len(), |t| &self.blocks[t].w_part);
        for (wi, s) in self.w_tilde.iter_mut().zip(sum) {
            *wi = s / n;
        }
        self.blocks.iter().map(|b| b.audit).fold(0.0, f64::max)
    }

    /// `Π_ij = exp((ũ_i − D_ij + ṽ_j)/ε)`.
    pub fn plans(&self) -> Vec<Mat> {
        let eps = self.epsilon;
        self.blocks
            .iter()
            .map(|b| {
                let (m, mt) = b.cost.shape();
                Mat::from_fn(m, mt, |i, j| ((b.u[i] - b.cost.get(i, j) + b.v[j]) / eps).exp())
            })
            .collect()
    }
}

fn log_plan_sums(b: &LogBlock, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (m, mt) = b.cost.shape();
    let mut rows = vec![0.0; m];
    let mut cols = vec![0.0; mt];
    for i in 0..m {
        for j in 0..mt {
            let p = ((b.u[i] - b.cost.get(i, j) + b.v[j]) / eps).exp();
            rows[i] += p;
            cols[j] += p;
        }
    }
    (rows, cols)
}

fn log_block_step(b: &mut LogBlock, w_tilde: &[f64], eps: f64, audit: bool) {
    let (m, mt) = b.cost.shape();
    for i in 0..m {
        let row = b.cost.row(i);
        let lse = eps_lse(eps, row.iter().zip(&b.v).map(|(d, v)| v - d));
        b.u[i] = w_tilde[i] - lse;
    }
    b.audit = 0.0;
    if audit {
        let (rows, _) = log_plan_sums(b, eps);
        let w: Vec<f64> = w_tilde.iter().map(|x| (x / eps).exp()).collect();
        b.audit = marginal_error(&rows, &w);
    }
    for j in 0..mt {
        let cost = &b.cost;
        let lse = eps_lse(eps, b.u.iter().enumerate().map(|(i, u)| u - cost.get(i, j)));
        b.v[j] = b.eps_log_a[j] - lse;
    }
    if audit {
        let (_, cols) = log_plan_sums(b, eps);
        let a: Vec<f64> = b.eps_log_a.iter().map(|x| (x / eps).exp()).collect();
        b.audit = b.audit.max(marginal_error(&cols, &a));
    }
    for i in 0..m {
        let row = b.cost.row(i);
        b.w_part[i] = b.u[i] + eps_lse(eps, row.iter().zip(&b.v).map(|(d, v)| v - d));
    }
}

enum Engine {
    Scaling(IbpState),
    Log(IbpLogState),
}

impl Engine {
    fn step(&mut self, audit: bool) -> Result<f64> {
        match self {
            Engine::Scaling(s) => s.sweep(audit),
            Engine::Log(s) => Ok(s.sweep(audit)),
        }
    }

    /// Copies of `(w, {u}, {v})` in the variables the mode iterates on.
    fn snapshot(&self) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self {
            Engine::Scaling(s) => (
                s.w.clone(),
                s.blocks.iter().map(|b| b.u.clone()).collect(),
                s.blocks.iter().map(|b| b.v.clone()).collect(),
            ),
            Engine::Log(s) => (
                s.w_tilde.clone(),
                s.blocks.iter().map(|b| b.u.clone()).collect(),
                s.blocks.iter().map(|b| b.v.clone()).collect(),
            ),
        }
    }

    fn primal(&self) -> PrimalSolution {
        match self {
            Engine::Scaling(s) => PrimalSolution { w: s.w.clone(), plans: s.plans() },
            Engine::Log(s) => PrimalSolution { w: s.w(), plans: s.plans() },
        }
    }
}

/// Runs IBP to the successive-change tolerance. The returned plans solve the
/// entropically regularized problem, not the LP.
pub fn solve_ibp(instance: &BarycenterInstance, opts: &IbpOptions) -> Result<(PrimalSolution, SolveReport)> {
    opts.validate()?;
    check_marginals(instance)?;
    let start = Instant::now();
    let mode = opts.resolved_mode();
    let scale = if opts.normalize_costs { cost_normalizer(instance) } else { 1.0 };
    let work = if scale == 1.0 { instance.clone() } else { instance.divided_costs(scale) };
    let par_loops = par::use_parallel(opts.threads, instance.m() * instance.total_support());
    let mut notes = vec!["solves the entropically regularized problem".to_string()];
    if opts.mode.is_none() && mode == IbpMode::Log {
        notes.push(format!("log-domain mode selected automatically for epsilon = {}", opts.epsilon));
    }
    if opts.normalize_costs {
        notes.push(format!("costs divided by their maximum {scale:e} before forming kernels"));
    }

    par::with_pool(opts.threads, || {
        let mut engine = match mode {
            IbpMode::Standard => {
                let mut s = IbpState::new(&work, opts.epsilon)?;
                s.par = par_loops;
                s.order = opts.reduction;
                Engine::Scaling(s)
            }
            IbpMode::Log => {
                let mut s = IbpLogState::new(&work, opts.epsilon)?;
                s.par = par_loops;
                s.order = opts.reduction;
                Engine::Log(s)
            }
        };
        let mut trace = Trace::new(TRACE_COLUMNS.to_vec());
        let mut audit_max: Option<f64> = None;
        let mut converged = false;
        let mut iterations = 0;
        let mut prev = None;
        for k in 1..=opts.max_iter {
            if k % opts.check_every == 0 {
                prev = Some(engine.snapshot());
            }
            let audit = opts.audit_every.is_some_and(|a| k == 1 || k % a == 0);
            let viol = engine.step(audit)?;
            if audit {
                audit_max = Some(audit_max.map_or(viol, |x: f64| x.max(viol)));
            }
            iterations = k;
            if let Some((w0, u0, v0)) = prev.take() {
                let (w1, u1, v1) = engine.snapshot();
                let dw = rel_change([w1.as_slice()], [w0.as_slice()]);
                let du = rel_change(u1.iter().map(Vec::as_slice), u0.iter().map(Vec::as_slice));
                let dv = rel_change(v1.iter().map(Vec::as_slice), v0.iter().map(Vec::as_slice));
                let change = dw.max(du).max(dv);
                trace.push(vec![k as f64, dw, du, dv, change, start.elapsed().as_secs_f64()]);
                if change < opts.tol {
                    converged = true;
                    break;
                }
            }
        }
        let sol = engine.primal();
        if sol.w.iter().chain(sol.plans.iter().flat_map(|p| p.as_slice())).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("IBP iterate"));
        }
        let report = SolveReport {
            method: Method::Ibp,
            objective: objective_of_plans(instance, &sol.plans),
            eta_feas: eta_feas(&sol.w, &sol.plans, instance.marginals()),
            residuals: None,
            scaled_residuals: None,
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            converged,
            params: ParamEcho {
                epsilon: Some(opts.epsilon),
                ibp_mode: Some(mode.as_str().to_string()),
                tol: Some(opts.tol),
                ..ParamEcho::default()
            },
            marginal_audit: audit_max,
            notes,
            trace,
        };
        Ok((sol, report))
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_case1;

    fn tiny(seed: u64) -> BarycenterInstance {
        let inst = gen_case1(3, 4, 5, 2, seed).unwrap();
        let s = cost_normalizer(&inst);
        inst.divided_costs(s)
    }

    #[test]
    fn mode_selection() {
        assert_eq!(IbpMode::for_epsilon(0.1), IbpMode::Standard);
        assert_eq!(IbpMode::for_epsilon(0.01), IbpMode::Standard);
        assert_eq!(IbpMode::for_epsilon(0.001), IbpMode::Log);
        assert_eq!("log".parse::<IbpMode>().unwrap(), IbpMode::Log);
        assert!("x".parse::<IbpMode>().is_err());
    }

    #[test]
    fn zero_cost_column_identity() {
        let inst = BarycenterInstance::new(vec![Mat::zeros(2, 2)], vec![vec![0.3, 0.7]], vec![1.0]).unwrap();
        let mut s = IbpState::new(&inst, 0.1).unwrap();
        let v = s.iterate_audited().unwrap();
        assert!(v < 1e-15);
        let cols = s.plans()[0].col_sums();
        assert!((cols[0] - 0.3).abs() < 1e-15 && (cols[1] - 0.7).abs() < 1e-15);
        assert_eq!(s.kernel(0).as_slice(), &[1.0; 4]);
    }

    #[test]
    fn single_term_geometric_mean() {
        let inst = tiny(3);
        let inst = BarycenterInstance::new(vec![inst.cost(0).clone()], vec![inst.marginal(0).to_vec()], vec![1.0]).unwrap();
        let mut s = IbpState::new(&inst, 0.1).unwrap();
        s.iterate().unwrap();
        let mut kv = vec![0.0; 4];
        matvec(s.kernel(0), s.v(0), &mut kv);
        for i in 0..4 {
            let direct = s.u(0)[i] * kv[i];
            assert!((s.w[i] - direct).abs() <= 1e-15 * direct);
        }
    }

    #[test]
    fn hand_iteration_2x2() {
        // Ξ = [[1, .5], [.5, 1]] from D = [[0, ln 2], [ln 2, 0]] at ε = 1, a = (0.3, 0.7)
        let l2 = 2f64.ln();
        let inst = BarycenterInstance::new(
            vec![Mat::from_rows(&[vec![0.0, l2], vec![l2, 0.0]]).unwrap()],
            vec![vec![0.3, 0.7]],
            vec![1.0],
        )
        .unwrap();
        let mut s = IbpState::new(&inst, 1.0).unwrap();
        s.iterate().unwrap();
        // Ξv = (1.5, 1.5), u = (1/3, 1/3), Ξᵀu = (0.5, 0.5), v = (0.6, 1.4)
        // Ξv = (1.3, 1.7), w = u ⊙ Ξv = (1.3/3, 1.7/3)
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(s.u(0), &[1.0 / 3.0, 1.0 / 3.0]));
        assert!(close(s.v(0), &[0.6, 1.4]));
        assert!(close(&s.w, &[1.3 / 3.0, 1.7 / 3.0]));
    }

    #[test]
    fn log_matches_standard() {
        for seed in 1..=3 {
            let inst = tiny(seed);
            let mut a = IbpState::new(&inst, 0.1).unwrap();
            let mut b = IbpLogState::new(&inst, 0.1).unwrap();
            for _ in 0..50 {
                a.iterate().unwrap();
                b.iterate();
            }
            let rel = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs() / p.abs()).fold(0.0, f64::max);
            assert!(rel(&a.w, &b.w()) < 1e-8);
            for t in 0..3 {
                assert!(rel(a.u(t), &b.u(t)) < 1e-8);
                assert!(rel(a.v(t), &b.v(t)) < 1e-8);
            }
        }
    }

    #[test]
    fn zero_cost_log_weights_stay_normalized() {
        let inst = BarycenterInstance::new(vec![Mat::zeros(3, 2); 2], vec![vec![0.4, 0.6], vec![0.5, 0.5]], vec![0.5, 0.5]).unwrap();
        let mut s = IbpLogState::new(&inst, 0.05).unwrap();
        for _ in 0..5 {
            s.iterate();
            assert!((s.w().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn underflow_is_flagged() {
        let d = Mat::from_fn(4, 3, |i, j| 10.0 + (i + j) as f64);
        let inst = BarycenterInstance::new(vec![d], vec![vec![0.2, 0.3, 0.5]], vec![1.0]).unwrap();
        assert!(matches!(IbpState::new(&inst, 0.001), Err(Error::Instability(_))));
        let opts = IbpOptions {
            epsilon: 0.001,
            mode: Some(IbpMode::Standard),
            normalize_costs: false,
            ..IbpOptions::default()
        };
        assert!(matches!(solve_ibp(&inst, &opts), Err(Error::Instability(_))));
        let opts = IbpOptions { mode: Some(IbpMode::Log), max_iter: 200, ..opts };
        let (sol, _) = solve_ibp(&inst, &opts).unwrap();
        assert!(sol.w.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rejects_zero_marginal() {
        let inst = BarycenterInstance::new(vec![Mat::zeros(2, 2)], vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert!(matches!(IbpState::new(&inst, 0.1), Err(Error::InvalidInput(_))));
        assert!(IbpLogState::new(&inst, 0.1).is_err());
    }

    #[test]
    fn solve_reports_and_audits() {
        let inst = gen_case1(3, 4, 5, 2, 9).unwrap();
        for eps in [0.1, 0.001] {
            let opts = IbpOptions {
                epsilon: eps,
                audit_every: Some(7),
                ..IbpOptions::default()
            };
            let (sol, rep) = solve_ibp(&inst, &opts).unwrap();
            assert_eq!(rep.method, Method::Ibp);
            assert!(rep.iterations <= opts.max_iter);
            assert!(rep.marginal_audit.unwrap() < 1e-12, "{:?}", rep.marginal_audit);
            assert!((primal_objective_of(&inst, &sol) - rep.objective).abs() < 1e-12);
            assert_eq!(rep.params.ibp_mode.as_deref(), Some(if eps < 0.01 { "log" } else { "standard" }));
            if eps < 0.01 {
                assert!(rep.notes.iter().any(|n| n.contains("automatically")));
            }
        }
    }

    fn primal_objective_of(inst: &BarycenterInstance, sol: &PrimalSolution) -> f64 {
        crate::model::primal_objective(inst, sol).unwrap()
    }

    #[test]
    fn parallel_matches_sequential() {
        let inst = tiny(4);
        let mut a = IbpState::new(&inst, 0.05).unwrap();
        let mut b = a.clone();
        b.par = true;
        for _ in 0..20 {
            a.iterate().unwrap();
            b.iterate().unwrap();
        }
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn invalid_options() {
        let inst = tiny(1);
        for o in [
            IbpOptions { epsilon: 0.0, ..IbpOptions::default() },
            IbpOptions { tol: -1.0, ..IbpOptions::default() },
            IbpOptions { check_every: 0, ..IbpOptions::default() },
        ] {
            assert!(matches!(solve_ibp(&inst, &o), Err(Error::InvalidOption(_))));
        }
    }
}
