//! Bregman ADMM on the split form `Π⁽ᵗ⁾ = Γ⁽ᵗ⁾`, with KL proximal terms.
//! Column constraints live on `Π`, row constraints and `w` on `Γ`. Every
//! update is a closed-form diagonal scaling, carried out in log space.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ibp::marginal_error;
use crate::matrix::{rel_change, Mat};
use crate::model::{eta3, eta4, eta_feas, objective_of_plans, BarycenterInstance, Method, ParamEcho, PrimalSolution, SolveReport, Trace};
use crate::par::{self, ReductionOrder};

pub const TRACE_COLUMNS: [&str; 8] = ["iter", "feas", "dw", "pi_gamma", "dpi", "dgamma", "dlambda", "elapsed"];

/// How `w` is formed from the per-distribution row masses `w̃⁽ᵗ⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WRule {
    /// Normalized arithmetic mean.
    R1,
    /// Normalized square of the sum of square roots.
    #[default]
    R2,
    /// Normalized geometric mean (the exact KL minimizer).
    Geometric,
}

impl WRule {
    pub fn as_str(self) -> &'static str {
        match self {
            WRule::R1 => "r1",
            WRule::R2 => "r2",
            WRule::Geometric => "geometric",
        }
    }
}

impl std::str::FromStr for WRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r1" => Ok(WRule::R1),
            "r2" => Ok(WRule::R2),
            "geometric" | "geo" => Ok(WRule::Geometric),
            other => Err(Error::InvalidOption(format!("unknown w-rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadmmOptions {
    /// `None` uses [`default_rho`].
    pub rho: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub check_every: usize,
    pub w_rule: WRule,
    /// Check the marginal identities every this many iterations.
    pub audit_every: Option<usize>,
    pub threads: Option<usize>,
    pub reduction: ReductionOrder,
}

impl Default for BadmmOptions {
    fn default() -> Self {
        Self {
            rho: None,
            tol: 1e-5,
            max_iter: 3000,
            check_every: 200,
            w_rule: WRule::R2,
            audit_every: None,
            threads: None,
            reduction: ReductionOrder::Sequential,
        }
    }
}

impl BadmmOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rho {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidOption(format!("rho = {r} must be positive")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidOption(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 || self.check_every == 0 || self.audit_every == Some(0) {
            return Err(Error::InvalidOption("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// Twice the mean cost entry; 1 when every cost is zero.
pub fn default_rho(instance: &BarycenterInstance) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for d in instance.costs() {
        s += d.sum();
        n += d.as_slice().len();
    }
    let r = 2.0 * s / n as f64;
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    pi: Mat,
    gamma: Mat,
    /// `ln Π` and `ln Γ`, kept alongside so the updates take no entrywise logarithms.
    log_pi: Mat,
    log_gamma: Mat,
    lambda: Mat,
    /// `ln Π + Λ/ρ`, shared by the `w̃` and `Γ` formulas.
    r: Mat,
    /// `ln w̃⁽ᵗ⁾`.
    lw: Vec<f64>,
    /// Row maxima of `r`.
    row_max: Vec<f64>,
    audit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BadmmState {
    pub w: Vec<f64>,
    pub rho: f64,
    blocks: Vec<Block>,
    par: bool,
    order: ReductionOrder,
}

impl BadmmState {
    /// `w = e/m`, `Γ⁽ᵗ⁾ = w(a⁽ᵗ⁾)ᵀ`, `Π⁽ᵗ⁾ = Γ⁽ᵗ⁾`, `Λ⁽ᵗ⁾ = 0`.
    pub fn new(instance: &BarycenterInstance, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidOption(format!("rho = {rho} must be positive")));
        }
        let m = instance.m();
        let w = vec![1.0 / m as f64; m];
        let blocks = (0..instance.n())
            .map(|t| {
                let g = Mat::outer(&w, instance.marginal(t));
                let lg = g.map(f64::ln);
                let mt = instance.m_t(t);
                Block {
                    pi: g.clone(),
                    gamma: g,
                    log_pi: lg.clone(),
                    log_gamma: lg,
                    lambda: Mat::zeros(m, mt),
                    r: Mat::zeros(m, mt),
                    lw: vec![0.0; m],
                    row_max: vec![0.0; m],
                    audit: 0.0,
                }
            })
            .collect();
        Ok(Self {
            w,
            rho,
            blocks,
            par: false,
            order: ReductionOrder::Sequential,
        })
    }

    pub fn pi(&self, t: usize) -> &Mat {
        &self.blocks[t].pi
    }

    pub fn gamma(&self, t: usize) -> &Mat {
        &self.blocks[t].gamma
    }

    pub fn lambda(&self, t: usize) -> &Mat {
        &self.blocks[t].lambda
    }

    pub fn set_lambda(&mut self, t: usize, lambda: Mat) -> Result<()> {
        if lambda.shape() != self.blocks[t].lambda.shape() {
            return Err(Error::Dimension(format!("multiplier {t} has shape {:?}", lambda.shape())));
        }
        self.blocks[t].lambda = lambda;
        Ok(())
    }

    pub fn plans(&self) -> Vec<Mat> {
        self.blocks.iter().map(|b| b.pi.clone()).collect()
    }

    pub fn gammas(&self) -> Vec<Mat> {
        self.blocks.iter().map(|b| b.gamma.clone()).collect()
    }

    fn check_shapes(&self, instance: &BarycenterInstance) -> Result<()> {
        let ok = self.w.len() == instance.m()
            && self.blocks.len() == instance.n()
            && self.blocks.iter().enumerate().all(|(t, b)| b.pi.shape() == (instance.m(), instance.m_t(t)));
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("BADMM state does not match the instance".into()))
        }
    }
}

fn pi_block(b: &mut Block, d: &Mat, a: &[f64], rho: f64, audit: bool) -> std::result::Result<(), String> {
    let (m, mt) = d.shape();
    let inv = 1.0 / rho;
    // s = ln Γ − (D + Λ)/ρ, held in `r`
    let mut mx = vec![f64::NEG_INFINITY; mt];
    for i in 0..m {
        let (lg, dr, lam) = (b.log_gamma.row(i), d.row(i), b.lambda.row(i));
        for (j, s) in b.r.row_mut(i).iter_mut().enumerate() {
            *s = lg[j] - (dr[j] + lam[j]) * inv;
            mx[j] = mx[j].max(*s);
        }
    }
    // a zero-mass column stays zero whatever the kernel does
    for (j, x) in mx.iter_mut().enumerate() {
        if !x.is_finite() {
            if a[j] != 0.0 {
                return Err(format!("column {j} of the Pi-update kernel vanishes"));
            }
            *x = 0.0;
        }
    }
    let mut tot = vec![0.0; mt];
    for i in 0..m {
        let (s, pi) = (b.r.row(i), b.pi.row_mut(i));
        for j in 0..mt {
            pi[j] = (s[j] - mx[j]).exp();
            tot[j] += pi[j];
        }
    }
    let scale: Vec<f64> = a.iter().zip(&tot).map(|(&aj, t)| if aj == 0.0 { 0.0 } else { aj / t }).collect();
    let shift: Vec<f64> = scale.iter().zip(&mx).map(|(c, x)| c.ln() - x).collect();
    for i in 0..m {
        let s = b.r.row(i);
        for (j, p) in b.pi.row_mut(i).iter_mut().enumerate() {
            *p *= scale[j];
        }
        for (j, lp) in b.log_pi.row_mut(i).iter_mut().enumerate() {
            *lp = s[j] + shift[j];
        }
    }
    b.audit = if audit { marginal_error(&b.pi.col_sums(), a) } else { 0.0 };
    Ok(())
}

/// `Π⁽ᵗ⁾ ← (Γ⁽ᵗ⁾ ⊙ exp(−(D⁽ᵗ⁾ + Λ⁽ᵗ⁾)/ρ)) Diag(u⁽ᵗ⁾)` with `u` fixing the column sums to `a⁽ᵗ⁾`.
/// Returns the largest relative column-sum deviation.
pub fn badmm_pi_update(state: &mut BadmmState, instance: &BarycenterInstance) -> Result<f64> {
    pi_update(state, instance, true)
}

fn pi_update(state: &mut BadmmState, instance: &BarycenterInstance, audit: bool) -> Result<f64> {
    state.check_shapes(instance)?;
    let rho = state.rho;
    let mut errs = vec![None; state.blocks.len()];
    par::for_each_pair(state.par, &mut state.blocks, &mut errs, |t, b, e| {
        *e = pi_block(b, instance.cost(t), instance.marginal(t), rho, audit).err();
    });
    if let Some((t, msg)) = errs.into_iter().enumerate().find_map(|(t, e)| e.map(|e| (t, e))) {
        return Err(Error::Instability(format!("distribution {t}: {msg}")));
    }
    Ok(state.blocks.iter().map(|b| b.audit).fold(0.0, f64::max))
}

/// Sets `r = ln Π + Λ/ρ` and `lw = ln((Π ⊙ exp(Λ/ρ))e)`, leaving the
/// row-shifted exponentials `exp(r_ij − max_j r_ij)` in `Γ` for [`gamma_block`].
fn row_masses(b: &mut Block, rho: f64) {
    let m = b.pi.rows();
    let inv = 1.0 / rho;
    for i in 0..m {
        let (lp, lam, r) = (b.log_pi.row(i), b.lambda.row(i), b.r.row_mut(i));
        let mut mx = f64::NEG_INFINITY;
        for (j, x) in r.iter_mut().enumerate() {
            *x = lp[j] + lam[j] * inv;
            mx = mx.max(*x);
        }
        b.row_max[i] = mx;
        b.lw[i] = if mx.is_finite() {
            let mut tot = 0.0;
            for (e, x) in b.gamma.row_mut(i).iter_mut().zip(r.iter()) {
                *e = (x - mx).exp();
                tot += *e;
            }
            mx + tot.ln()
        } else {
            f64::NEG_INFINITY
        };
    }
}

fn gamma_block(b: &mut Block, w: &[f64], audit: bool) -> std::result::Result<(), String> {
    for i in 0..w.len() {
        if w[i] == 0.0 {
            b.gamma.row_mut(i).iter_mut().for_each(|g| *g = 0.0);
            b.log_gamma.row_mut(i).iter_mut().for_each(|g| *g = f64::NEG_INFINITY);
            continue;
        }
        if !b.lw[i].is_finite() {
            return Err(format!("row {i} has zero mass but w_{i} = {}", w[i]));
        }
        let shift = w[i].ln() - b.lw[i];
        let factor = (b.row_max[i] + shift).exp();
        b.gamma.row_mut(i).iter_mut().for_each(|g| *g *= factor);
        for (lg, x) in b.log_gamma.row_mut(i).iter_mut().zip(b.r.row(i)) {
            *lg = x + shift;
        }
    }
    b.audit = if audit { marginal_error(&b.gamma.row_sums(), w) } else { 0.0 };
    Ok(())
}

/// `ln` of `Σ_i exp(x_i)` with the maximum shifted out.
fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Log of the unnormalized `w` for each rule, from `ln w̃⁽ᵗ⁾_i`.
fn combine(rule: WRule, lws: &[&[f64]], i: usize) -> f64 {
    let it = lws.iter().map(move |lw| lw[i]);
    match rule {
        WRule::R1 => lse(it),
        WRule::R2 => 2.0 * lse(it.map(|x| 0.5 * x)),
        WRule::Geometric => it.sum::<f64>() / lws.len() as f64,
    }
}

/// Forms `w̃⁽ᵗ⁾ = (Π⁽ᵗ⁾ ⊙ exp(Λ⁽ᵗ⁾/ρ))e`, combines them into `w` by `rule`, and sets
/// `Γ⁽ᵗ⁾ = Diag(v⁽ᵗ⁾)(Π⁽ᵗ⁾ ⊙ exp(Λ⁽ᵗ⁾/ρ))` with row sums `w`.
/// Returns the largest relative row-sum deviation.
pub fn badmm_gamma_w_update(state: &mut BadmmState, instance: &BarycenterInstance, rule: WRule) -> Result<f64> {
    gamma_w_update(state, instance, rule, true)
}

fn gamma_w_update(state: &mut BadmmState, instance: &BarycenterInstance, rule: WRule, audit: bool) -> Result<f64> {
    state.check_shapes(instance)?;
    let rho = state.rho;
    par::for_each(state.par, &mut state.blocks, |_, b| row_masses(b, rho));
    let m = state.w.len();
    let logw: Vec<f64> = {
        let lws: Vec<&[f64]> = state.blocks.iter().map(|b| b.lw.as_slice()).collect();
        (0..m).map(|i| combine(rule, &lws, i)).collect()
    };
    let z = lse(logw.iter().copied());
    if !z.is_finite() {
        return Err(Error::Instability("all barycenter row masses vanished".into()));
    }
    for (wi, l) in state.w.iter_mut().zip(&logw) {
        *wi = (l - z).exp();
    }
    let w = &state.w;
    let mut errs = vec![None; state.blocks.len()];
    par::for_each_pair(state.par, &mut state.blocks, &mut errs, |_, b, e| {
        *e = gamma_block(b, w, audit).err();
    });
    if let Some((t, msg)) = errs.into_iter().enumerate().find_map(|(t, e)| e.map(|e| (t, e))) {
        return Err(Error::Instability(format!("distribution {t}: {msg}")));
    }
    let mut audit_max = state.blocks.iter().map(|b| b.audit).fold(0.0, f64::max);
    if audit {
        audit_max = audit_max.max((state.w.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(audit_max)
}

/// `Λ⁽ᵗ⁾ ← Λ⁽ᵗ⁾ + ρ(Π⁽ᵗ⁾ − Γ⁽ᵗ⁾)`.
pub fn badmm_multiplier_update(state: &mut BadmmState) {
    let rho = state.rho;
    par::for_each(state.par, &mut state.blocks, |_, b| {
        for ((l, p), g) in b.lambda.as_mut_slice().iter_mut().zip(b.pi.as_slice()).zip(b.gamma.as_slice()) {
            *l += rho * (p - g);
        }
    });
}

fn iterate(state: &mut BadmmState, instance: &BarycenterInstance, rule: WRule, audit: bool) -> Result<f64> {
    let a1 = pi_update(state, instance, audit)?;
    let a2 = gamma_w_update(state, instance, rule, audit)?;
    badmm_multiplier_update(state);
    Ok(a1.max(a2))
}

fn mats<'a>(blocks: &'a [Block], f: impl Fn(&'a Block) -> &'a Mat + 'a) -> impl Iterator<Item = &'a [f64]> + 'a {
    blocks.iter().map(move |b| f(b).as_slice())
}

pub fn solve_badmm(instance: &BarycenterInstance, opts: &BadmmOptions) -> Result<(PrimalSolution, SolveReport)> {
    solve_badmm_from(instance, opts, None).map(|(sol, _, rep)| (sol, rep))
}

/// Runs BADMM, optionally continuing from an earlier state of matching shape.
/// Returns the final state for warm starts.
pub fn solve_badmm_from(
    instance: &BarycenterInstance,
    opts: &BadmmOptions,
    warm: Option<&BadmmState>,
) -> Result<(PrimalSolution, BadmmState, SolveReport)> {
    opts.validate()?;
    let start = Instant::now();
    let rho = opts.rho.unwrap_or_else(|| default_rho(instance));
    let mut state = match warm {
        Some(s) => {
            s.check_shapes(instance)?;
            BadmmState { rho, ..s.clone() }
        }
        None => BadmmState::new(instance, rho)?,
    };
    state.par = par::use_parallel(opts.threads, instance.m() * instance.total_support());
    state.order = opts.reduction;

    par::with_pool(opts.threads, || {
        let mut trace = Trace::new(TRACE_COLUMNS.to_vec());
        let mut audit_max: Option<f64> = None;
        let mut converged = false;
        let mut iterations = 0;
        for k in 1..=opts.max_iter {
            let check = k % opts.check_every == 0;
            let prev = check.then(|| state.clone());
            let audit = opts.audit_every.is_some_and(|a| k == 1 || k % a == 0);
            let viol = iterate(&mut state, instance, opts.w_rule, audit)?;
            if audit {
                audit_max = Some(audit_max.map_or(viol, |x: f64| x.max(viol)));
            }
            iterations = k;
            if let Some(p) = prev {
                let gammas = state.gammas();
                let plans = state.plans();
                let feas = eta3(&state.w, &gammas).max(eta4(&plans, instance.marginals()));
                let dw = rel_change([state.w.as_slice()], [p.w.as_slice()]);
                let pg = rel_change(mats(&state.blocks, |b| &b.pi), mats(&state.blocks, |b| &b.gamma));
                let dpi = rel_change(mats(&state.blocks, |b| &b.pi), mats(&p.blocks, |b| &b.pi));
                let dg = rel_change(mats(&state.blocks, |b| &b.gamma), mats(&p.blocks, |b| &b.gamma));
                let dl = rel_change(mats(&state.blocks, |b| &b.lambda), mats(&p.blocks, |b| &b.lambda));
                trace.push(vec![k as f64, feas, dw, pg, dpi, dg, dl, start.elapsed().as_secs_f64()]);
                if [feas, dw, pg, dpi, dg, dl].iter().all(|&x| x < opts.tol) {
                    converged = true;
                    break;
                }
            }
        }
        let sol = PrimalSolution {
            w: state.w.clone(),
            plans: state.plans(),
        };
        if sol.plans.iter().any(|p| !p.all_finite()) {
            return Err(Error::NonFinite("BADMM plan"));
        }
        let report = SolveReport {
            method: Method::Badmm,
            objective: objective_of_plans(instance, &sol.plans),
            eta_feas: eta_feas(&sol.w, &sol.plans, instance.marginals()),
            residuals: None,
            scaled_residuals: None,
            iterations,
            wall_time: start.elapsed().as_secs_f64(),
            converged,
            params: ParamEcho {
                rho: Some(rho),
                w_rule: Some(opts.w_rule.as_str().to_string()),
                tol: Some(opts.tol),
                ..ParamEcho::default()
            },
            marginal_audit: audit_max,
            notes: Vec::new(),
            trace,
        };
        Ok((sol, state, report))
    })?
}
