//! Symmetric Gauss-Seidel ADMM on the dual of the fixed-support barycenter LP.
//!
//! The dual variables are `u`, `V⁽ᵗ⁾ ≥ 0`, `y⁽ᵗ⁾` and `z⁽ᵗ⁾`, coupled by
//! `Σ_t y⁽ᵗ⁾ = u` and `V⁽ᵗ⁾ = D⁽ᵗ⁾ + y⁽ᵗ⁾eᵀ + e(z⁽ᵗ⁾)ᵀ`. The multipliers
//! `λ` and `Λ⁽ᵗ⁾` of those constraints converge to the barycenter weights and
//! the transport plans, which is what [`solve`] returns as the primal solution.

mod residuals;
mod steps;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use residuals::{kkt_residuals, ResidualReport};
pub use steps::{iterate_once, step1, step2a, step2b, step2c, step3, IterationWorkspace, WorkBlock};

use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::model::{BarycenterInstance, Method, ParamEcho, PrimalSolution, SolveReport, Trace};
use crate::par::{self, ReductionOrder};

/// Upper end of the admissible dual step length, `(1 + √5) / 2`.
pub const TAU_MAX: f64 = 1.618_033_988_749_895;

/// Columns of the convergence trace written at each checkpoint.
pub const TRACE_COLUMNS: [&str; 15] = [
    "iter", "eta1", "eta2", "eta3", "eta4", "eta5", "eta6", "eta7", "eta8", "eta_p", "eta_d", "eta_gap", "beta",
    "elapsed", "step2b",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgsOptions {
    pub beta0: f64,
    pub tau: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub check_every: usize,
    pub penalty_update: bool,
    pub scaling: bool,
    /// Worker threads; `None` uses the environment variable or the global pool.
    pub threads: Option<usize>,
    pub reduction: ReductionOrder,
}

impl Default for SgsOptions {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            tau: 1.618,
            tol: 1e-5,
            max_iter: 3000,
            check_every: 50,
            penalty_update: true,
            scaling: true,
            threads: None,
            reduction: ReductionOrder::Sequential,
        }
    }
}

impl SgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::InvalidOption(format!("beta0 = {} must be positive", self.beta0)));
        }
        if !(self.tau > 0.0 && self.tau < TAU_MAX) {
            return Err(Error::InvalidOption(format!("tau = {} must lie in (0, {TAU_MAX})", self.tau)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidOption(format!("tol = {} must be positive", self.tol)));
        }
        if self.check_every == 0 {
            return Err(Error::InvalidOption("check_every must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidOption("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-distribution part of the dual iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBlock {
    pub v: Mat,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Multiplier `Λ⁽ᵗ⁾`; converges to the transport plan.
    pub big_lambda: Mat,
}

/// The full iterate `(u, {V}, {y}, {z}, λ, {Λ})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub u: Vec<f64>,
    /// Multiplier `λ`; converges to the barycenter weights.
    pub lambda: Vec<f64>,
    pub blocks: Vec<DualBlock>,
}

impl DualIterate {
    /// All variables at zero.
    pub fn zeros(instance: &BarycenterInstance) -> Self {
        let m = instance.m();
        Self {
            u: vec![0.0; m],
            lambda: vec![0.0; m],
            blocks: (0..instance.n())
                .map(|t| {
                    let mt = instance.m_t(t);
                    DualBlock {
                        v: Mat::zeros(m, mt),
                        y: vec![0.0; m],
                        z: vec![0.0; mt],
                        big_lambda: Mat::zeros(m, mt),
                    }
                })
                .collect(),
        }
    }

    /// `(w, {Π}) = (λ, {Λ})`.
    pub fn primal(&self) -> PrimalSolution {
        PrimalSolution {
            w: self.lambda.clone(),
            plans: self.blocks.iter().map(|b| b.big_lambda.clone()).collect(),
        }
    }

    /// Multiplies the dual variables `u, V, y, z` by `s`, leaving the multipliers alone.
    pub fn scale_dual(&mut self, s: f64) {
        self.u.iter_mut().for_each(|x| *x *= s);
        for b in &mut self.blocks {
            b.v.scale_in_place(s);
            b.y.iter_mut().for_each(|x| *x *= s);
            b.z.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub(crate) fn check_shapes(&self, instance: &BarycenterInstance) -> Result<()> {
        let m = instance.m();
        let ok = self.u.len() == m
            && self.lambda.len() == m
            && self.blocks.len() == instance.n()
            && self.blocks.iter().enumerate().all(|(t, b)| {
                let shape = (m, instance.m_t(t));
                b.v.shape() == shape && b.big_lambda.shape() == shape && b.y.len() == m && b.z.len() == shape.1
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("dual iterate does not match the instance".into()))
        }
    }

    fn all_finite(&self) -> bool {
        self.u.iter().chain(&self.lambda).all(|x| x.is_finite())
            && self.blocks.iter().all(|b| {
                b.v.all_finite() && b.big_lambda.all_finite() && b.y.iter().chain(&b.z).all(|x| x.is_finite())
            })
    }
}

/// Divides every cost matrix by `κ = ‖[D⁽¹⁾, …, D⁽ᴺ⁾]‖_F`. All-zero costs give `κ = 1`.
pub fn scale_instance(instance: &BarycenterInstance) -> (BarycenterInstance, f64) {
    let kappa = instance.costs().iter().map(Mat::frob_sq).sum::<f64>().sqrt();
    if kappa > 0.0 {
        (instance.divided_costs(kappa), kappa)
    } else {
        (instance.clone(), 1.0)
    }
}

/// Adaptive penalty: `χ = η_D / η_P`; grow `β` when `χ > 2`, shrink it when
/// `1/χ > 2`, by a factor of 1.1, 1.5 or 2 depending on how unbalanced `χ` is.
/// Returns `β` unchanged when either residual is zero.
pub fn update_penalty(beta: f64, eta_p: f64, eta_d: f64) -> f64 {
    if !(eta_p > 0.0 && eta_d > 0.0) {
        return beta;
    }
    let chi = eta_d / eta_p;
    let imbalance = chi.max(1.0 / chi);
    let sigma = if imbalance <= 50.0 {
        1.1
    } else if imbalance > 500.0 {
        2.0
    } else {
        1.5
    };
    if chi > 2.0 {
        sigma * beta
    } else if 1.0 / chi > 2.0 {
        beta / sigma
    } else {
        beta
    }
}

/// Solves from the origin.
pub fn solve(instance: &BarycenterInstance, options: &SgsOptions) -> Result<(PrimalSolution, DualIterate, SolveReport)> {
    solve_from(instance, options, None)
}

/// Solves starting from `warm` (given in the units of `instance`), or from the origin.
///
/// With scaling enabled the tolerance is tested on the residuals of the scaled
/// problem; the report carries the residuals of the original one.
pub fn solve_from(
    instance: &BarycenterInstance,
    options: &SgsOptions,
    warm: Option<&DualIterate>,
) -> Result<(PrimalSolution, DualIterate, SolveReport)> {
    options.validate()?;
    if let Some(w) = warm {
        w.check_shapes(instance)?;
    }
    par::with_pool(options.threads, || run(instance, options, warm))?
}

fn run(
    instance: &BarycenterInstance,
    options: &SgsOptions,
    warm: Option<&DualIterate>,
) -> Result<(PrimalSolution, DualIterate, SolveReport)> {
    let start = Instant::now();
    let (scaled, kappa) = if options.scaling {
        scale_instance(instance)
    } else {
        (instance.clone(), 1.0)
    };
    let work = instance.m() * instance.total_support();
    let par_loops = par::use_parallel(options.threads, work);
    let order = options.reduction;

    let mut it = match warm {
        Some(w) => {
            let mut w = w.clone();
            w.scale_dual(1.0 / kappa);
            w
        }
        None => DualIterate::zeros(&scaled),
    };
    let mut ws = IterationWorkspace::with_options(&scaled, &it, par_loops, order);
    let mut beta = options.beta0;
    let mut trace = Trace::new(TRACE_COLUMNS.to_vec());
    let mut best: Option<(DualIterate, ResidualReport, ResidualReport, usize)> = None;
    let mut last: Option<(ResidualReport, ResidualReport)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=options.max_iter {
        let st = iterate_once(&scaled, &mut it, &mut ws, beta, options.tau)?;
        iterations = k;
        if k % options.check_every != 0 && k != options.max_iter {
            continue;
        }
        if !it.all_finite() {
            return Err(Error::NonFinite("sgs iterate"));
        }
        let res = residuals::residuals_with_scale(instance, &it, kappa, par_loops, order);
        // termination and the penalty follow the problem actually iterated on
        let inner = if kappa == 1.0 {
            res
        } else {
            residuals::residuals_with_scale(&scaled, &it, 1.0, par_loops, order)
        };
        let mut row = vec![k as f64];
        row.extend(res.etas());
        row.extend([res.eta_p, res.eta_d, res.eta_gap, beta, start.elapsed().as_secs_f64(), st]);
        trace.push(row);
        last = Some((res, inner));
        let score = inner.max_kkt();
        if score < options.tol {
            converged = true;
            break;
        }
        if best.as_ref().is_none_or(|b| score < b.2.max_kkt()) {
            best = Some((it.clone(), res, inner, k));
        }
        if options.penalty_update {
            beta = update_penalty(beta, inner.eta_p, inner.eta_d);
            if !(1e-8..=1e8).contains(&beta) {
                log::warn!("penalty parameter beta = {beta:e} at iteration {k}");
            }
        }
    }

    let (mut final_it, res, inner) = if converged {
        let (r, i) = last.expect("checkpoint recorded");
        (it, r, i)
    } else {
        match best {
            Some((b, r, i, k)) => {
                log::debug!("returning checkpoint from iteration {k}");
                (b, r, i)
            }
            None => {
                let r = residuals::residuals_with_scale(instance, &it, kappa, par_loops, order);
                let i = residuals::residuals_with_scale(&scaled, &it, 1.0, par_loops, order);
                (it, r, i)
            }
        }
    };
    final_it.scale_dual(kappa);
    let solution = final_it.primal();
    let mut notes = Vec::new();
    if !converged {
        notes.push(format!(
            "stopped at the iteration cap; returned the best checkpoint (max residual {:.3e})",
            inner.max_kkt()
        ));
    }
    let report = SolveReport {
        method: Method::Sgs,
        objective: res.obj_p,
        eta_feas: res.eta_feas,
        residuals: Some(res),
        scaled_residuals: (kappa != 1.0).then_some(inner),
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
        params: ParamEcho {
            beta_initial: Some(options.beta0),
            beta_final: Some(beta),
            tau: Some(options.tau),
            kappa: Some(kappa),
            tol: Some(options.tol),
            ..Default::default()
        },
        marginal_audit: None,
        notes,
        trace,
    };
    Ok((solution, final_it, report))
}

#[cfg(test)]
mod tests;
