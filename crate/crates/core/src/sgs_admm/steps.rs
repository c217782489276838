//! The closed-form updates of one sGS-ADMM iteration.
//!
//! Order within an iteration: [`step1`] (u, V), [`step2a`] (z̃), [`step2b`] (y),
//! [`step2c`] (z), [`step3`] (multipliers and the `D̃` cache).

use super::DualIterate;
use crate::error::Result;
use crate::matrix::{norm, Mat};
use crate::model::BarycenterInstance;
use crate::par::{self, ReductionOrder};
use crate::simplex::prox_support_function;

/// Per-distribution scratch data of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkBlock {
    /// `D̃ = D + y eᵀ + e zᵀ` at the current `(y, z)`.
    pub d_tilde: Mat,
    /// `B = min(D̃ − β⁻¹Λ, 0)`.
    pub b: Mat,
    /// `B e`, length `m`.
    pub b_row: Vec<f64>,
    /// `Bᵀ e`, length `m_t`.
    pub b_col: Vec<f64>,
    /// `B̃ e = B e − (1/m)(eᵀBe + β⁻¹⟨e, a⟩) e`, length `m`.
    pub bt_e: Vec<f64>,
    /// Intermediate `z̃` from step 2a.
    pub z_tilde: Vec<f64>,
    /// `y_new − y_old` from step 2b.
    pub dy: Vec<f64>,
    weighted: Vec<f64>,
}

/// Cached quantities shared by the steps of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationWorkspace {
    pub blocks: Vec<WorkBlock>,
    /// `Σ_t y⁽ᵗ⁾` at the start of the iteration.
    pub sum_y: Vec<f64>,
    /// `h = β⁻¹λ − u_new + Σ_t y⁽ᵗ⁾_old`.
    pub h: Vec<f64>,
    /// `b̃` of step 2b.
    pub b_tilde: Vec<f64>,
    /// Largest relative step-2b stationarity residual of the last iteration.
    pub stationarity: f64,
    pub(crate) par: bool,
    pub(crate) order: ReductionOrder,
}

impl IterationWorkspace {
    /// Workspace with `D̃` built from the `(y, z)` of `iterate`.
    pub fn new(instance: &BarycenterInstance, iterate: &DualIterate) -> Self {
        Self::with_options(instance, iterate, false, ReductionOrder::Sequential)
    }

    pub(crate) fn with_options(
        instance: &BarycenterInstance,
        iterate: &DualIterate,
        par: bool,
        order: ReductionOrder,
    ) -> Self {
        let m = instance.m();
        let blocks = iterate
            .blocks
            .iter()
            .enumerate()
            .map(|(t, blk)| {
                let mt = instance.m_t(t);
                let mut d_tilde = instance.cost(t).clone();
                add_outer_sum(&mut d_tilde, &blk.y, &blk.z);
                WorkBlock {
                    d_tilde,
                    b: Mat::zeros(m, mt),
                    b_row: vec![0.0; m],
                    b_col: vec![0.0; mt],
                    bt_e: vec![0.0; m],
                    z_tilde: vec![0.0; mt],
                    dy: vec![0.0; m],
                    weighted: vec![0.0; m],
                }
            })
            .collect();
        Self {
            blocks,
            sum_y: vec![0.0; m],
            h: vec![0.0; m],
            b_tilde: vec![0.0; m],
            stationarity: 0.0,
            par,
            order,
        }
    }
}

fn add_outer_sum(d: &mut Mat, y: &[f64], z: &[f64]) {
    for (i, &yi) in y.iter().enumerate() {
        for (x, zj) in d.row_mut(i).iter_mut().zip(z) {
            *x += yi + zj;
        }
    }
}

/// u ← Prox_{β⁻¹δ*}(β⁻¹λ + Σy); V ← max(D̃ − β⁻¹Λ, 0), caching `B = min(·, 0)`.
pub fn step1(iterate: &mut DualIterate, ws: &mut IterationWorkspace, beta: f64) -> Result<()> {
    let m = iterate.lambda.len();
    ws.sum_y = par::sum_vectors(ws.order, iterate.blocks.len(), m, |t| &iterate.blocks[t].y);
    let s: Vec<f64> = iterate.lambda.iter().zip(&ws.sum_y).map(|(l, y)| l / beta + y).collect();
    iterate.u = prox_support_function(&s, beta)?;
    let inv = 1.0 / beta;
    par::for_each_pair(ws.par, &mut iterate.blocks, &mut ws.blocks, |_, blk, wb| {
        let cols = wb.b_col.len();
        wb.b_col.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            let dt = wb.d_tilde.row(i);
            let lam = blk.big_lambda.row(i);
            let v = blk.v.row_mut(i);
            let b = wb.b.row_mut(i);
            let mut rs = 0.0;
            for j in 0..cols {
                let r = dt[j] - inv * lam[j];
                if r >= 0.0 {
                    v[j] = r;
                    b[j] = 0.0;
                } else {
                    v[j] = 0.0;
                    b[j] = r;
                    rs += r;
                    wb.b_col[j] += r;
                }
            }
            wb.b_row[i] = rs;
        }
    });
    Ok(())
}

/// z̃⁽ᵗ⁾ ← z⁽ᵗ⁾ − (1/m)(β⁻¹a⁽ᵗ⁾ + (B⁽ᵗ⁾)ᵀe).
pub fn step2a(instance: &BarycenterInstance, iterate: &DualIterate, ws: &mut IterationWorkspace, beta: f64) {
    let inv_m = 1.0 / instance.m() as f64;
    for (t, (blk, wb)) in iterate.blocks.iter().zip(ws.blocks.iter_mut()).enumerate() {
        let a = instance.marginal(t);
        for j in 0..a.len() {
            wb.z_tilde[j] = blk.z[j] - inv_m * (a[j] / beta + wb.b_col[j]);
        }
    }
}

/// y⁽ᵗ⁾ ← y⁽ᵗ⁾ − (1/m_t)(b̃ + h + B̃⁽ᵗ⁾e), all `t` at once.
///
/// Stores `y_new − y_old` in each block and returns the largest relative
/// residual of the coupled stationarity condition
/// `Σ_ℓ Δy⁽ˡ⁾ + m_t Δy⁽ᵗ⁾ + h + B̃⁽ᵗ⁾e = 0`, normalized by
/// `1 + ‖h‖ + ‖B̃⁽ᵗ⁾e‖ + m_t‖Δy⁽ᵗ⁾‖`.
pub fn step2b(instance: &BarycenterInstance, iterate: &mut DualIterate, ws: &mut IterationWorkspace, beta: f64) -> f64 {
    let m = instance.m();
    let inv_m = 1.0 / m as f64;
    let inv_b = 1.0 / beta;
    for ((h, l), (u, s)) in ws.h.iter_mut().zip(&iterate.lambda).zip(iterate.u.iter().zip(&ws.sum_y)) {
        *h = inv_b * l - u + s;
    }
    let mut s_inv = 0.0;
    for (t, wb) in ws.blocks.iter_mut().enumerate() {
        let mt = instance.m_t(t) as f64;
        s_inv += 1.0 / mt;
        let a_sum: f64 = instance.marginal(t).iter().sum();
        let shift = inv_m * (wb.b_row.iter().sum::<f64>() + inv_b * a_sum);
        for i in 0..m {
            wb.bt_e[i] = wb.b_row[i] - shift;
            wb.weighted[i] = wb.bt_e[i] / mt;
        }
    }
    let acc = par::sum_vectors(ws.order, ws.blocks.len(), m, |t| &ws.blocks[t].weighted);
    for i in 0..m {
        ws.b_tilde[i] = -(s_inv * ws.h[i] + acc[i]) / (1.0 + s_inv);
    }
    for (t, (blk, wb)) in iterate.blocks.iter_mut().zip(ws.blocks.iter_mut()).enumerate() {
        let inv_mt = 1.0 / instance.m_t(t) as f64;
        for i in 0..m {
            let d = -inv_mt * (ws.b_tilde[i] + ws.h[i] + wb.bt_e[i]);
            wb.dy[i] = d;
            blk.y[i] += d;
        }
    }
    let sum_dy = par::sum_vectors(ws.order, ws.blocks.len(), m, |t| &ws.blocks[t].dy);
    let h_norm = norm(&ws.h);
    let mut worst: f64 = 0.0;
    for (t, wb) in ws.blocks.iter().enumerate() {
        let mt = instance.m_t(t) as f64;
        let mut r2 = 0.0;
        for i in 0..m {
            let r = sum_dy[i] + mt * wb.dy[i] + ws.h[i] + wb.bt_e[i];
            r2 += r * r;
        }
        let scale = 1.0 + h_norm + norm(&wb.bt_e) + mt * norm(&wb.dy);
        worst = worst.max(r2.sqrt() / scale);
    }
    ws.stationarity = worst;
    worst
}

/// z⁽ᵗ⁾ ← z̃⁽ᵗ⁾ − (1/m)(eᵀΔy⁽ᵗ⁾) e.
pub fn step2c(instance: &BarycenterInstance, iterate: &mut DualIterate, ws: &IterationWorkspace) {
    let inv_m = 1.0 / instance.m() as f64;
    for (blk, wb) in iterate.blocks.iter_mut().zip(&ws.blocks) {
        let shift = inv_m * wb.dy.iter().sum::<f64>();
        for (z, zt) in blk.z.iter_mut().zip(&wb.z_tilde) {
            *z = zt - shift;
        }
    }
}

/// λ ← λ + τβ(Σy − u); refreshes `D̃` at the new `(y, z)`; Λ⁽ᵗ⁾ ← Λ⁽ᵗ⁾ + τβ(V⁽ᵗ⁾ − D̃⁽ᵗ⁾).
pub fn step3(instance: &BarycenterInstance, iterate: &mut DualIterate, ws: &mut IterationWorkspace, beta: f64, tau: f64) {
    let m = iterate.lambda.len();
    let step = tau * beta;
    let sum_y = par::sum_vectors(ws.order, iterate.blocks.len(), m, |t| &iterate.blocks[t].y);
    for ((l, s), u) in iterate.lambda.iter_mut().zip(&sum_y).zip(&iterate.u) {
        *l += step * (s - u);
    }
    par::for_each_pair(ws.par, &mut iterate.blocks, &mut ws.blocks, |t, blk, wb| {
        let d = instance.cost(t);
        for i in 0..m {
            let yi = blk.y[i];
            let dr = d.row(i);
            let dt = wb.d_tilde.row_mut(i);
            let v = blk.v.row(i);
            let lam = blk.big_lambda.row_mut(i);
            for (j, zj) in blk.z.iter().enumerate() {
                let x = dr[j] + yi + zj;
                dt[j] = x;
                lam[j] += step * (v[j] - x);
            }
        }
    });
}

/// One full iteration; returns the step-2b stationarity residual.
pub fn iterate_once(
    instance: &BarycenterInstance,
    iterate: &mut DualIterate,
    ws: &mut IterationWorkspace,
    beta: f64,
    tau: f64,
) -> Result<f64> {
    step1(iterate, ws, beta)?;
    step2a(instance, iterate, ws, beta);
    let st = step2b(instance, iterate, ws, beta);
    step2c(instance, iterate, ws);
    step3(instance, iterate, ws, beta, tau);
    Ok(st)
}
