//! Relative KKT residuals of the dual problem and the duality gap.

use serde::{Deserialize, Serialize};

use super::DualIterate;
use crate::error::Result;
use crate::matrix::{norm, norm_sq};
use crate::model::BarycenterInstance;
use crate::par::{self, ReductionOrder};
use crate::simplex::{project_simplex, support_function};

/// The eight KKT residuals, their aggregates and both objective values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub eta5: f64,
    pub eta6: f64,
    pub eta7: f64,
    pub eta8: f64,
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_gap: f64,
    pub eta_feas: f64,
    pub obj_p: f64,
    pub obj_d: f64,
}

impl ResidualReport {
    /// `max{η_P, η_D, η_gap}`, the quantity compared against the tolerance.
    pub fn max_kkt(&self) -> f64 {
        self.eta_p.max(self.eta_d).max(self.eta_gap)
    }

    pub fn all_finite(&self) -> bool {
        self.etas().iter().all(|x| x.is_finite()) && self.obj_p.is_finite() && self.obj_d.is_finite()
    }

    pub fn etas(&self) -> [f64; 8] {
        [
            self.eta1, self.eta2, self.eta3, self.eta4, self.eta5, self.eta6, self.eta7, self.eta8,
        ]
    }
}

/// Residuals of `iterate` on `instance`.
///
/// The primal objective is `Σ⟨D⁽ᵗ⁾, Λ⁽ᵗ⁾⟩` and the dual objective is
/// `−max_i(Σ_t y⁽ᵗ⁾)_i − Σ_t⟨z⁽ᵗ⁾, a⁽ᵗ⁾⟩`, a lower bound on the LP optimum
/// whenever `V⁽ᵗ⁾ = D⁽ᵗ⁾ + y⁽ᵗ⁾eᵀ + e(z⁽ᵗ⁾)ᵀ ≥ 0`.
pub fn kkt_residuals(instance: &BarycenterInstance, iterate: &DualIterate) -> Result<ResidualReport> {
    iterate.check_shapes(instance)?;
    Ok(residuals_with_scale(instance, iterate, 1.0, false, ReductionOrder::Sequential))
}

#[derive(Default)]
struct Partial {
    eta2_num: f64,
    v_sq: f64,
    lam_sq: f64,
    d_sq: f64,
    row_num: f64,
    col_num: f64,
    a_sq: f64,
    eq_num: f64,
    neg_sq: f64,
    y_sq: f64,
    z_sq: f64,
    obj_p: f64,
    za: f64,
}

/// Residuals when the dual quantities `u, V, y, z` of `iterate` live in a
/// problem whose costs were divided by `kappa`; `instance` holds the original costs.
pub(crate) fn residuals_with_scale(
    instance: &BarycenterInstance,
    iterate: &DualIterate,
    kappa: f64,
    par_loops: bool,
    order: ReductionOrder,
) -> ResidualReport {
    let lambda = &iterate.lambda;
    let parts = par::map(par_loops, &iterate.blocks, |t, blk| {
        let d = instance.cost(t);
        let a = instance.marginal(t);
        let (mt, cols) = (a.len(), d.cols());
        let mut p = Partial::default();
        let mut col = vec![0.0; mt];
        for i in 0..d.rows() {
            let (vr, lr, dr) = (blk.v.row(i), blk.big_lambda.row(i), d.row(i));
            let yi = kappa * blk.y[i];
            let mut rs = 0.0;
            for j in 0..cols {
                let v = kappa * vr[j];
                let l = lr[j];
                let dd = dr[j];
                let r2 = v - (v - l).max(0.0);
                p.eta2_num += r2 * r2;
                p.v_sq += v * v;
                p.lam_sq += l * l;
                p.d_sq += dd * dd;
                let e = v - dd - yi - kappa * blk.z[j];
                p.eq_num += e * e;
                if l < 0.0 {
                    p.neg_sq += l * l;
                }
                p.obj_p += dd * l;
                rs += l;
                col[j] += l;
            }
            let r = rs - lambda[i];
            p.row_num += r * r;
        }
        for j in 0..mt {
            let c = col[j] - a[j];
            p.col_num += c * c;
            p.za += kappa * blk.z[j] * a[j];
        }
        p.a_sq = norm_sq(a);
        p.y_sq = kappa * kappa * norm_sq(&blk.y);
        p.z_sq = kappa * kappa * norm_sq(&blk.z);
        p
    });
    let sum = |f: fn(&Partial) -> f64| -> f64 {
        let xs: Vec<f64> = parts.iter().map(f).collect();
        par::sum_scalars(order, &xs)
    };
    let eta2_num = sum(|p| p.eta2_num).sqrt();
    let v_n = sum(|p| p.v_sq).sqrt();
    let lam_n = sum(|p| p.lam_sq).sqrt();
    let d_n = sum(|p| p.d_sq).sqrt();
    let row_num = sum(|p| p.row_num).sqrt();
    let col_num = sum(|p| p.col_num).sqrt();
    let a_n = sum(|p| p.a_sq).sqrt();
    let eq_num = sum(|p| p.eq_num).sqrt();
    let neg_n = sum(|p| p.neg_sq).sqrt();
    let y_n = sum(|p| p.y_sq).sqrt();
    let z_n = sum(|p| p.z_sq).sqrt();
    let obj_p = sum(|p| p.obj_p);
    let za = sum(|p| p.za);

    let m = lambda.len();
    let mut sum_y = par::sum_vectors(order, iterate.blocks.len(), m, |t| &iterate.blocks[t].y);
    sum_y.iter_mut().for_each(|x| *x *= kappa);
    let u: Vec<f64> = iterate.u.iter().map(|x| kappa * x).collect();

    let lam_norm = norm(lambda);
    let u_norm = norm(&u);
    let shifted: Vec<f64> = lambda.iter().zip(&u).map(|(l, u)| l + u).collect();
    let eta1 = match project_simplex(&shifted) {
        Ok(p) => {
            let d: f64 = lambda.iter().zip(&p).map(|(l, p)| (l - p) * (l - p)).sum();
            d.sqrt() / (1.0 + lam_norm + u_norm)
        }
        Err(_) => f64::NAN,
    };
    let eta2 = eta2_num / (1.0 + v_n + lam_n);
    let eta3 = row_num / (1.0 + lam_norm + lam_n);
    let eta4 = col_num / (1.0 + a_n + lam_n);
    let dy: f64 = sum_y.iter().zip(&u).map(|(s, u)| (s - u) * (s - u)).sum();
    let eta5 = dy.sqrt() / (1.0 + norm(&sum_y) + u_norm);
    let eta6 = eq_num / (1.0 + d_n + v_n + y_n + z_n);
    let lam_sum: f64 = lambda.iter().sum();
    let lam_neg: f64 = lambda.iter().map(|x| x.min(0.0).powi(2)).sum::<f64>().sqrt();
    let eta7 = ((lam_sum - 1.0).abs() + lam_neg) / (1.0 + lam_norm);
    let eta8 = neg_n / (1.0 + lam_n);
    let obj_d = -support_function(&sum_y) - za;
    let eta_gap = (obj_p - obj_d).abs() / (1.0 + obj_p.abs() + obj_d.abs());
    ResidualReport {
        eta1,
        eta2,
        eta3,
        eta4,
        eta5,
        eta6,
        eta7,
        eta8,
        eta_p: eta1.max(eta2).max(eta3).max(eta4),
        eta_d: eta5.max(eta6).max(eta7).max(eta8),
        eta_gap,
        eta_feas: eta3.max(eta4).max(eta7).max(eta8),
        obj_p,
        obj_d,
    }
}
