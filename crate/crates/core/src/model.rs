//! Distributions, barycenter instances, solutions and the quantities every
//! solver reports against: the transport objective and the primal
//! feasibility residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm, norm_sq, Mat};
use crate::sgs_admm::ResidualReport;

/// Inputs whose weights sum to 1 within this tolerance are renormalized exactly.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A finitely supported probability distribution in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub weights: Vec<f64>,
    /// One point per weight; all points share the same dimension.
    pub supports: Vec<Vec<f64>>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>, supports: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("distribution has no support points".into()));
        }
        if weights.len() != supports.len() {
            return Err(Error::Dimension(format!(
                "{} weights but {} support points",
                weights.len(),
                supports.len()
            )));
        }
        let d = supports[0].len();
        if supports.iter().any(|p| p.len() != d) {
            return Err(Error::Dimension("support points of differing dimension".into()));
        }
        if supports.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("support points"));
        }
        let weights = normalize_weights(weights, "distribution weights")?;
        Ok(Self { weights, supports })
    }

    /// Divides nonnegative `weights` by their sum first.
    pub fn normalized(weights: Vec<f64>, supports: Vec<Vec<f64>>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidInput(format!("weights sum to {s}")));
        }
        Self::new(weights.into_iter().map(|x| x / s).collect(), supports)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.supports.first().map_or(0, Vec::len)
    }
}

/// Checks nonnegativity and unit sum (within [`WEIGHT_SUM_TOL`]) and divides by the sum.
pub fn normalize_weights(mut w: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what}: non-finite entry")));
    }
    if w.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidInput(format!("{what}: negative entry")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidInput(format!("{what}: weights sum to {s}, not 1")));
    }
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// The fixed-support barycenter LP: `N` cost matrices `D⁽ᵗ⁾` (already
/// multiplied by `γ_t`) of shape `m × m_t` and their column marginals `a⁽ᵗ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterInstance {
    cost_matrices: Vec<Mat>,
    marginals: Vec<Vec<f64>>,
    gammas: Vec<f64>,
    barycenter_supports: Option<Vec<Vec<f64>>>,
}

impl BarycenterInstance {
    pub fn new(cost_matrices: Vec<Mat>, marginals: Vec<Vec<f64>>, gammas: Vec<f64>) -> Result<Self> {
        let n = cost_matrices.len();
        if n == 0 {
            return Err(Error::InvalidInput("instance needs at least one distribution".into()));
        }
        if marginals.len() != n || gammas.len() != n {
            return Err(Error::Dimension(format!(
                "{} cost matrices, {} marginals, {} gammas",
                n,
                marginals.len(),
                gammas.len()
            )));
        }
        let m = cost_matrices[0].rows();
        if m == 0 {
            return Err(Error::InvalidInput("barycenter support is empty".into()));
        }
        let mut normalized = Vec::with_capacity(n);
        for (t, (d, a)) in cost_matrices.iter().zip(marginals).enumerate() {
            if d.rows() != m || d.cols() != a.len() || a.is_empty() {
                return Err(Error::Dimension(format!(
                    "cost matrix {t} is {}x{}, expected {m}x{}",
                    d.rows(),
                    d.cols(),
                    a.len()
                )));
            }
            if !d.all_finite() {
                return Err(Error::NonFinite("cost matrix"));
            }
            normalized.push(normalize_weights(a, &format!("marginal {t}"))?);
        }
        if gammas.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidInput("gammas must be positive".into()));
        }
        let gs: f64 = gammas.iter().sum();
        if (gs - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("gammas sum to {gs}, not 1")));
        }
        Ok(Self {
            cost_matrices,
            marginals: normalized,
            gammas: gammas.iter().map(|g| g / gs).collect(),
            barycenter_supports: None,
        })
    }

    /// Builds `D⁽ᵗ⁾ = γ_t 𝒟(X, Q⁽ᵗ⁾)` from the distributions and barycenter supports.
    /// `gammas` defaults to `1/N` each.
    pub fn from_distributions(
        distributions: &[DiscreteDistribution],
        barycenter_supports: Vec<Vec<f64>>,
        p: f64,
        gammas: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = distributions.len();
        let gammas = gammas.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if gammas.len() != n {
            return Err(Error::Dimension(format!("{} gammas for {n} distributions", gammas.len())));
        }
        let costs = distributions
            .iter()
            .zip(&gammas)
            .map(|(dist, &g)| build_cost_matrix(&barycenter_supports, &dist.supports, p, g))
            .collect::<Result<Vec<_>>>()?;
        let marginals = distributions.iter().map(|d| d.weights.clone()).collect();
        let mut inst = Self::new(costs, marginals, gammas)?;
        inst.barycenter_supports = Some(barycenter_supports);
        Ok(inst)
    }

    pub fn with_barycenter_supports(mut self, supports: Vec<Vec<f64>>) -> Result<Self> {
        if supports.len() != self.m() {
            return Err(Error::Dimension(format!(
                "{} barycenter supports for m = {}",
                supports.len(),
                self.m()
            )));
        }
        self.barycenter_supports = Some(supports);
        Ok(self)
    }

    /// Number of input distributions `N`.
    pub fn n(&self) -> usize {
        self.cost_matrices.len()
    }

    /// Barycenter support size `m`.
    pub fn m(&self) -> usize {
        self.cost_matrices[0].rows()
    }

    /// Support size `m_t` of distribution `t`.
    pub fn m_t(&self, t: usize) -> usize {
        self.marginals[t].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.marginals.iter().map(Vec::len).collect()
    }

    pub fn total_support(&self) -> usize {
        self.marginals.iter().map(Vec::len).sum()
    }

    pub fn cost(&self, t: usize) -> &Mat {
        &self.cost_matrices[t]
    }

    pub fn costs(&self) -> &[Mat] {
        &self.cost_matrices
    }

    pub fn marginal(&self, t: usize) -> &[f64] {
        &self.marginals[t]
    }

    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn barycenter_supports(&self) -> Option<&[Vec<f64>]> {
        self.barycenter_supports.as_deref()
    }

    /// Same marginals and gammas with every cost matrix multiplied by `s`.
    pub fn scaled_costs(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.cost_matrices.iter_mut().for_each(|d| d.scale_in_place(s));
        out
    }

    /// Same marginals and gammas with every cost matrix divided by `s`.
    pub fn divided_costs(&self, s: f64) -> Self {
        let mut out = self.clone();
        for d in &mut out.cost_matrices {
            d.as_mut_slice().iter_mut().for_each(|x| *x /= s);
        }
        out
    }

    pub(crate) fn from_parts_unchecked(
        cost_matrices: Vec<Mat>,
        marginals: Vec<Vec<f64>>,
        gammas: Vec<f64>,
        barycenter_supports: Option<Vec<Vec<f64>>>,
    ) -> Self {
        Self {
            cost_matrices,
            marginals,
            gammas,
            barycenter_supports,
        }
    }

    pub(crate) fn check_solution(&self, sol: &PrimalSolution) -> Result<()> {
        if sol.w.len() != self.m() || sol.plans.len() != self.n() {
            return Err(Error::Dimension(format!(
                "solution has |w| = {} and {} plans; instance has m = {}, N = {}",
                sol.w.len(),
                sol.plans.len(),
                self.m(),
                self.n()
            )));
        }
        for (t, p) in sol.plans.iter().enumerate() {
            if p.shape() != self.cost(t).shape() {
                return Err(Error::Dimension(format!(
                    "plan {t} is {:?}, cost is {:?}",
                    p.shape(),
                    self.cost(t).shape()
                )));
            }
        }
        Ok(())
    }
}

/// Barycenter weights `w` and transport plans `Π⁽ᵗ⁾`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub w: Vec<f64>,
    pub plans: Vec<Mat>,
}

impl PrimalSolution {
    /// The product coupling `Π⁽ᵗ⁾ = w (a⁽ᵗ⁾)ᵀ`, feasible for any `w` in the simplex.
    pub fn product(instance: &BarycenterInstance, w: Vec<f64>) -> Self {
        let plans = instance.marginals().iter().map(|a| Mat::outer(&w, a)).collect();
        Self { w, plans }
    }
}

/// Solver that produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgs,
    Ibp,
    Badmm,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgs => "sgs",
            Method::Ibp => "ibp",
            Method::Badmm => "badmm",
            Method::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgs" => Ok(Method::Sgs),
            "ibp" => Ok(Method::Ibp),
            "badmm" => Ok(Method::Badmm),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::InvalidOption(format!("unknown method {other:?}"))),
        }
    }
}

/// Parameters a run was performed with, echoed for reporting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamEcho {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ibp_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

/// Per-checkpoint convergence trace. Column names are method specific.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Outcome of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    /// `Σ_t ⟨D⁽ᵗ⁾, Π⁽ᵗ⁾⟩` on the instance as given (unscaled).
    pub objective: f64,
    /// `max{η₃, η₄, η₇, η₈}` of the returned primal point.
    pub eta_feas: f64,
    /// Full KKT residuals; only the dual-based solvers produce these.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualReport>,
    /// Residuals of the cost-scaled problem that the termination test used,
    /// when scaling was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled_residuals: Option<ResidualReport>,
    pub iterations: usize,
    pub wall_time: f64,
    pub converged: bool,
    pub params: ParamEcho,
    /// Largest relative violation of the construction-time marginal identities
    /// observed at sampled iterations (IBP and BADMM with auditing enabled).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_audit: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub trace: Trace,
}

/// `D(i, j) = γ ‖x_i − q_j‖_p^p`.
pub fn build_cost_matrix(x: &[Vec<f64>], q: &[Vec<f64>], p: f64, gamma: f64) -> Result<Mat> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("cost exponent p = {p} must be >= 1")));
    }
    let d = x.first().or(q.first()).map_or(0, Vec::len);
    if x.iter().chain(q).any(|pt| pt.len() != d) {
        return Err(Error::Dimension("barycenter and distribution points differ in dimension".into()));
    }
    if x.iter().chain(q).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("support points"));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(u, v)| {
                let r = (u - v).abs();
                if p == 2.0 {
                    r * r
                } else if p == 1.0 {
                    r
                } else {
                    r.powf(p)
                }
            })
            .sum()
    };
    Ok(Mat::from_fn(x.len(), q.len(), |i, j| gamma * dist(&x[i], &q[j])))
}

/// `Σ_t ⟨D⁽ᵗ⁾, Π⁽ᵗ⁾⟩`.
pub fn primal_objective(instance: &BarycenterInstance, sol: &PrimalSolution) -> Result<f64> {
    instance.check_solution(sol)?;
    Ok(objective_of_plans(instance, &sol.plans))
}

pub(crate) fn objective_of_plans(instance: &BarycenterInstance, plans: &[Mat]) -> f64 {
    instance.costs().iter().zip(plans).map(|(d, p)| d.dot(p)).sum()
}

/// `max{η₃(w, Π), η₄(Π), η₇(w), η₈(Π)}`.
pub fn feasibility_residual(instance: &BarycenterInstance, sol: &PrimalSolution) -> Result<f64> {
    instance.check_solution(sol)?;
    Ok(eta_feas(&sol.w, &sol.plans, instance.marginals()))
}

pub(crate) fn eta_feas(w: &[f64], plans: &[Mat], marginals: &[Vec<f64>]) -> f64 {
    let f = PlanNorms::new(plans);
    eta_row_marginals(w, plans, f.frob)
        .max(eta_col_marginals(plans, marginals, f.frob))
        .max(eta_simplex(w))
        .max(f.neg / (1.0 + f.frob))
}

/// `‖{Π⁽ᵗ⁾}‖_F` and `‖min([Π⁽¹⁾,…], 0)‖_F` computed in one pass.
pub(crate) struct PlanNorms {
    pub frob: f64,
    pub neg: f64,
}

impl PlanNorms {
    pub fn new(plans: &[Mat]) -> Self {
        let (mut sq, mut neg) = (0.0, 0.0);
        for x in plans.iter().flat_map(|p| p.as_slice()) {
            sq += x * x;
            if *x < 0.0 {
                neg += x * x;
            }
        }
        Self {
            frob: sq.sqrt(),
            neg: neg.sqrt(),
        }
    }
}

/// η₃: `‖{Π⁽ᵗ⁾e − w}‖ / (1 + ‖w‖ + ‖{Π⁽ᵗ⁾}‖_F)`.
pub fn eta3(w: &[f64], plans: &[Mat]) -> f64 {
    eta_row_marginals(w, plans, PlanNorms::new(plans).frob)
}

/// η₄: `‖{(Π⁽ᵗ⁾)ᵀe − a⁽ᵗ⁾}‖ / (1 + ‖{a⁽ᵗ⁾}‖ + ‖{Π⁽ᵗ⁾}‖_F)`.
pub fn eta4(plans: &[Mat], marginals: &[Vec<f64>]) -> f64 {
    eta_col_marginals(plans, marginals, PlanNorms::new(plans).frob)
}

/// η₇: `(|eᵀw − 1| + ‖min(w, 0)‖) / (1 + ‖w‖)`.
pub fn eta7(w: &[f64]) -> f64 {
    eta_simplex(w)
}

/// η₈: `‖min([Π⁽¹⁾,…,Π⁽ᴺ⁾], 0)‖_F / (1 + ‖{Π⁽ᵗ⁾}‖_F)`.
pub fn eta8(plans: &[Mat]) -> f64 {
    let f = PlanNorms::new(plans);
    f.neg / (1.0 + f.frob)
}

fn eta_row_marginals(w: &[f64], plans: &[Mat], plan_frob: f64) -> f64 {
    let mut num = 0.0;
    for p in plans {
        for (s, wi) in p.row_sums().iter().zip(w) {
            num += (s - wi) * (s - wi);
        }
    }
    num.sqrt() / (1.0 + norm(w) + plan_frob)
}

fn eta_col_marginals(plans: &[Mat], marginals: &[Vec<f64>], plan_frob: f64) -> f64 {
    let mut num = 0.0;
    let mut a_sq = 0.0;
    for (p, a) in plans.iter().zip(marginals) {
        for (s, aj) in p.col_sums().iter().zip(a) {
            num += (s - aj) * (s - aj);
        }
        a_sq += norm_sq(a);
    }
    num.sqrt() / (1.0 + a_sq.sqrt() + plan_frob)
}

fn eta_simplex(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let neg: f64 = w.iter().map(|x| x.min(0.0).powi(2)).sum::<f64>().sqrt();
    ((s - 1.0).abs() + neg) / (1.0 + norm(w))
}
