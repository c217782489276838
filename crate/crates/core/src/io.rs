//! JSON instance and solution files, and CSV convergence traces.
//!
//! An instance file either lists distributions,
//! `{"N", "m", "p", "gammas", "distributions": [{"weights", "supports"}], "barycenter_supports"}`,
//! or carries the LP data directly, `{"cost_matrices", "marginals", "gammas"}`.
//! Cost matrices are nested row arrays.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{kmeans_supports, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::model::{self, BarycenterInstance, DiscreteDistribution, Method, PrimalSolution, SolveReport, Trace};
use crate::sgs_admm::ResidualReport;

/// Default ground cost exponent.
pub const DEFAULT_P: f64 = 2.0;

/// Tolerance on `eᵀw = 1` when a solution file is loaded back.
pub const SOLUTION_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<DistributionEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barycenter_supports: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_matrices: Option<Vec<Mat>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Vec<Vec<f64>>>,
}

/// Unvalidated distribution as it appears in a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionEntry {
    pub weights: Vec<f64>,
    pub supports: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_dataset(data: &Dataset) -> Self {
        Self {
            n: Some(data.distributions.len()),
            m: Some(data.barycenter_supports.len()),
            p: Some(data.p),
            gammas: data.gammas.clone(),
            distributions: Some(
                data.distributions
                    .iter()
                    .map(|d| DistributionEntry {
                        weights: d.weights.clone(),
                        supports: d.supports.clone(),
                    })
                    .collect(),
            ),
            barycenter_supports: Some(data.barycenter_supports.clone()),
            ..Self::default()
        }
    }

    /// Precomputed form.
    pub fn from_instance(instance: &BarycenterInstance) -> Self {
        Self {
            n: Some(instance.n()),
            m: Some(instance.m()),
            gammas: Some(instance.gammas().to_vec()),
            barycenter_supports: instance.barycenter_supports().map(<[_]>::to_vec),
            cost_matrices: Some(instance.costs().to_vec()),
            marginals: Some(instance.marginals().to_vec()),
            ..Self::default()
        }
    }

    pub fn has_distributions(&self) -> bool {
        self.distributions.is_some()
    }

    /// Validated distributions; an error for the precomputed form.
    pub fn validated_distributions(&self) -> Result<Vec<DiscreteDistribution>> {
        let entries = self
            .distributions
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("instance file has no \"distributions\"".into()))?;
        if let Some(n) = self.n {
            if n != entries.len() {
                return Err(Error::Dimension(format!("N = {n} but {} distributions", entries.len())));
            }
        }
        entries
            .iter()
            .enumerate()
            .map(|(t, e)| {
                DiscreteDistribution::new(e.weights.clone(), e.supports.clone())
                    .map_err(|err| Error::InvalidInput(format!("distribution {t}: {err}")))
            })
            .collect()
    }

    /// Builds the instance. Missing barycenter supports are chosen as `m`
    /// k-means centres of the pooled support points, seeded by `seed`.
    pub fn to_instance(&self, seed: u64) -> Result<BarycenterInstance> {
        match (&self.distributions, &self.cost_matrices) {
            (Some(_), Some(_)) => Err(Error::InvalidInput(
                "instance file has both \"distributions\" and \"cost_matrices\"".into(),
            )),
            (None, None) => Err(Error::InvalidInput(
                "instance file needs \"distributions\" or \"cost_matrices\"".into(),
            )),
            (Some(_), None) => {
                if self.marginals.is_some() {
                    return Err(Error::InvalidInput("\"marginals\" belongs to the precomputed form".into()));
                }
                let dists = self.validated_distributions()?;
                let supports = match (&self.barycenter_supports, self.m) {
                    (Some(s), Some(m)) if s.len() != m => {
                        return Err(Error::Dimension(format!("m = {m} but {} barycenter supports", s.len())))
                    }
                    (Some(s), _) => s.clone(),
                    (None, Some(m)) => kmeans_supports(&dists, m, seed)?,
                    (None, None) => {
                        return Err(Error::InvalidInput(
                            "need \"barycenter_supports\" or \"m\" to choose them".into(),
                        ))
                    }
                };
                let p = self.p.unwrap_or(DEFAULT_P);
                BarycenterInstance::from_distributions(&dists, supports, p, self.gammas.clone())
            }
            (None, Some(costs)) => {
                let marginals = self
                    .marginals
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("\"cost_matrices\" needs \"marginals\"".into()))?;
                let n = costs.len();
                if let Some(fn_) = self.n {
                    if fn_ != n {
                        return Err(Error::Dimension(format!("N = {fn_} but {n} cost matrices")));
                    }
                }
                let gammas = self.gammas.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
                let inst = BarycenterInstance::new(costs.clone(), marginals, gammas)?;
                if let Some(m) = self.m {
                    if m != inst.m() {
                        return Err(Error::Dimension(format!("m = {m} but cost matrices have {} rows", inst.m())));
                    }
                }
                match &self.barycenter_supports {
                    Some(s) => inst.with_barycenter_supports(s.clone()),
                    None => Ok(inst),
                }
            }
        }
    }
}

/// Maps a JSON error to [`Error::Parse`] with its position in `origin`.
fn parse_error(origin: &str, e: serde_json::Error) -> Error {
    let msg = e.to_string();
    // serde_json appends " at line L column C"; the position is reported separately
    let message = match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg,
    };
    Error::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message,
    }
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| parse_error(origin, e))
}

pub fn parse_instance(text: &str, origin: &str) -> Result<InstanceFile> {
    parse_json(text, origin)
}

pub fn read_instance_file(path: &Path) -> Result<InstanceFile> {
    let text = fs::read_to_string(path)?;
    parse_instance(&text, &path.display().to_string())
}

pub fn read_instance(path: &Path, seed: u64) -> Result<BarycenterInstance> {
    read_instance_file(path)?.to_instance(seed)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Primal feasibility residuals of a solution, plus the full KKT set when
/// the solver produced one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionResiduals {
    pub eta3: f64,
    pub eta4: f64,
    pub eta7: f64,
    pub eta8: f64,
    pub eta_feas: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt: Option<ResidualReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub method: Method,
    pub w: Vec<f64>,
    pub objective: f64,
    pub residuals: SolutionResiduals,
    pub iterations: usize,
    pub converged: bool,
    /// Support sizes `m_t`, so that plans can be checked without the instance.
    pub sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barycenter_supports: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<Mat>>,
}

impl SolutionFile {
    pub fn new(
        instance: &BarycenterInstance,
        solution: &PrimalSolution,
        report: &SolveReport,
        emit_plans: bool,
    ) -> Result<Self> {
        instance.check_solution(solution)?;
        let (w, plans) = (&solution.w, &solution.plans);
        Ok(Self {
            method: report.method,
            w: w.clone(),
            objective: model::primal_objective(instance, solution)?,
            residuals: SolutionResiduals {
                eta3: model::eta3(w, plans),
                eta4: model::eta4(plans, instance.marginals()),
                eta7: model::eta7(w),
                eta8: model::eta8(plans),
                eta_feas: model::feasibility_residual(instance, solution)?,
                kkt: report.residuals,
            },
            iterations: report.iterations,
            converged: report.converged,
            sizes: instance.sizes(),
            barycenter_supports: instance.barycenter_supports().map(<[_]>::to_vec),
            plans: emit_plans.then(|| plans.clone()),
        })
    }

    /// Structural checks that need no instance: finite values, plan shapes
    /// `m × m_t`, and for converged runs `w` on the simplex within [`SOLUTION_SUM_TOL`].
    pub fn validate(&self) -> Result<()> {
        let m = self.w.len();
        if m == 0 {
            return Err(Error::InvalidInput("solution has an empty w".into()));
        }
        if self.w.iter().any(|x| !x.is_finite()) || !self.objective.is_finite() {
            return Err(Error::NonFinite("solution file"));
        }
        let r = &self.residuals;
        if [r.eta3, r.eta4, r.eta7, r.eta8, r.eta_feas].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidInput("residuals must be finite and nonnegative".into()));
        }
        // a run stopped at its cap may leave w off the simplex; its residuals say by how much
        if self.converged {
            if self.w.iter().any(|&x| x < -SOLUTION_SUM_TOL) {
                return Err(Error::InvalidInput("w has a negative entry".into()));
            }
            let s: f64 = self.w.iter().sum();
            if (s - 1.0).abs() > SOLUTION_SUM_TOL {
                return Err(Error::InvalidInput(format!("w sums to {s}")));
            }
        }
        if let Some(b) = &self.barycenter_supports {
            if b.len() != m {
                return Err(Error::Dimension(format!("{} barycenter supports for m = {m}", b.len())));
            }
        }
        if let Some(plans) = &self.plans {
            if plans.len() != self.sizes.len() {
                return Err(Error::Dimension(format!(
                    "{} plans for {} distributions",
                    plans.len(),
                    self.sizes.len()
                )));
            }
            for (t, (p, &mt)) in plans.iter().zip(&self.sizes).enumerate() {
                if p.shape() != (m, mt) {
                    return Err(Error::Dimension(format!("plan {t} is {:?}, expected {:?}", p.shape(), (m, mt))));
                }
                if !p.all_finite() {
                    return Err(Error::NonFinite("plan"));
                }
            }
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus agreement with `instance`: sizes,
    /// and, when plans are present, the recomputed objective and `η_feas`.
    pub fn validate_against(&self, instance: &BarycenterInstance) -> Result<()> {
        self.validate()?;
        if self.w.len() != instance.m() || self.sizes != instance.sizes() {
            return Err(Error::Dimension("solution does not match the instance".into()));
        }
        if let Some(plans) = &self.plans {
            let sol = PrimalSolution {
                w: self.w.clone(),
                plans: plans.clone(),
            };
            let obj = model::primal_objective(instance, &sol)?;
            if (obj - self.objective).abs() > 1e-9 * (1.0 + obj.abs()) {
                return Err(Error::InvalidInput(format!(
                    "stored objective {} differs from recomputed {obj}",
                    self.objective
                )));
            }
            let feas = model::feasibility_residual(instance, &sol)?;
            if (feas - self.residuals.eta_feas).abs() > 1e-9 * (1.0 + feas) {
                return Err(Error::InvalidInput(format!(
                    "stored eta_feas {} differs from recomputed {feas}",
                    self.residuals.eta_feas
                )));
            }
        }
        Ok(())
    }

    pub fn solution(&self) -> Option<PrimalSolution> {
        self.plans.as_ref().map(|plans| PrimalSolution {
            w: self.w.clone(),
            plans: plans.clone(),
        })
    }
}

/// Reads and validates a solution file.
pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let text = fs::read_to_string(path)?;
    let sol: SolutionFile = parse_json(&text, &path.display().to_string())?;
    sol.validate()?;
    Ok(sol)
}

/// Writes `sol` and reads it back through validation.
pub fn write_solution(path: &Path, sol: &SolutionFile) -> Result<()> {
    write_json(path, sol)?;
    read_solution(path).map(|_| ())
}

pub fn write_trace_csv<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&trace.columns).map_err(csv_error)?;
    for row in &trace.rows {
        w.write_record(row.iter().map(|&x| trace_field(x))).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

// iteration counters print as integers, everything else in exponent form
fn trace_field(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:e}")
    }
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_trace_csv(fs::File::create(path)?, trace)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}
