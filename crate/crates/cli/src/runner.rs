//! Method selection and option plumbing shared by `solve` and `compare`.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use wbary::badmm::{self, BadmmOptions};
use wbary::ibp::{self, IbpOptions};
use wbary::lp_oracle;
use wbary::sgs_admm::{self, SgsOptions};
use wbary::{feasibility_residual, presolve, primal_objective, BarycenterInstance, Method, PrimalSolution, SolveReport};

use crate::SolverFlags;

/// A method, optionally with its own `ε` (`ibp@0.01`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub epsilon: Option<f64>,
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, eps) = match s.split_once('@') {
            Some((n, e)) => (n, Some(e)),
            None => (s, None),
        };
        let method: Method = name.trim().parse().map_err(|e: wbary::Error| e.to_string())?;
        let epsilon = match eps {
            None => None,
            Some(_) if method != Method::Ibp => return Err(format!("only ibp takes @epsilon, got {s:?}")),
            Some(e) => Some(e.trim().parse::<f64>().map_err(|e| format!("bad epsilon in {s:?}: {e}"))?),
        };
        Ok(Self { method, epsilon })
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epsilon {
            Some(e) => write!(f, "{}@{e}", self.method),
            None => write!(f, "{}", self.method),
        }
    }
}

/// Rejects flags that belong to a different method than the one selected.
pub fn check_flags(method: Method, flags: &SolverFlags) -> Result<()> {
    let owners: [(&str, bool, Method); 6] = [
        ("--beta0", flags.beta0.is_some(), Method::Sgs),
        ("--tau", flags.tau.is_some(), Method::Sgs),
        ("--epsilon", flags.epsilon.is_some(), Method::Ibp),
        ("--ibp-mode", flags.ibp_mode.is_some(), Method::Ibp),
        ("--rho", flags.rho.is_some(), Method::Badmm),
        ("--w-rule", flags.w_rule.is_some(), Method::Badmm),
    ];
    for (name, given, owner) in owners {
        if given && owner != method {
            bail!("{name} applies to --method {owner}, not {method}");
        }
    }
    if method == Method::Oracle && (flags.tol.is_some() || flags.max_iter.is_some()) {
        bail!("--tol and --max-iter do not apply to the exact oracle");
    }
    Ok(())
}

fn presolve_enabled(method: Method, flags: &SolverFlags) -> bool {
    if flags.presolve {
        true
    } else if flags.no_presolve {
        false
    } else {
        matches!(method, Method::Ibp | Method::Badmm)
    }
}

fn run_direct(inst: &BarycenterInstance, spec: MethodSpec, flags: &SolverFlags) -> Result<(PrimalSolution, SolveReport)> {
    let out = match spec.method {
        Method::Sgs => {
            let d = SgsOptions::default();
            let opts = SgsOptions {
                beta0: flags.beta0.unwrap_or(d.beta0),
                tau: flags.tau.unwrap_or(d.tau),
                tol: flags.tol.unwrap_or(d.tol),
                max_iter: flags.max_iter.unwrap_or(d.max_iter),
                threads: flags.threads,
                ..d
            };
            let (sol, _, rep) = sgs_admm::solve(inst, &opts)?;
            (sol, rep)
        }
        Method::Ibp => {
            let d = IbpOptions::default();
            let opts = IbpOptions {
                epsilon: spec.epsilon.or(flags.epsilon).unwrap_or(d.epsilon),
                mode: flags.ibp_mode,
                tol: flags.tol.unwrap_or(d.tol),
                max_iter: flags.max_iter.unwrap_or(d.max_iter),
                threads: flags.threads,
                ..d
            };
            ibp::solve_ibp(inst, &opts)?
        }
        Method::Badmm => {
            let d = BadmmOptions::default();
            let opts = BadmmOptions {
                rho: flags.rho,
                w_rule: flags.w_rule.unwrap_or(d.w_rule),
                tol: flags.tol.unwrap_or(d.tol),
                max_iter: flags.max_iter.unwrap_or(d.max_iter),
                threads: flags.threads,
                ..d
            };
            badmm::solve_badmm(inst, &opts)?
        }
        Method::Oracle => lp_oracle::solve(inst)?,
    };
    Ok(out)
}

/// Runs one method, through the presolve reduction when it is enabled and
/// changes the instance. The report then describes the full instance.
pub fn run(inst: &BarycenterInstance, spec: MethodSpec, flags: &SolverFlags) -> Result<(PrimalSolution, SolveReport)> {
    if !presolve_enabled(spec.method, flags) {
        return run_direct(inst, spec, flags);
    }
    let (reduced, map) = presolve::reduce(inst)?;
    if map.is_identity() {
        return run_direct(inst, spec, flags);
    }
    log::info!("presolve: support sizes {:?} -> {:?}", map.original_sizes, map.reduced_sizes());
    let (sol, mut rep) = run_direct(&reduced, spec, flags)?;
    let full = presolve::expand(&sol, &map)?;
    rep.objective = primal_objective(inst, &full)?;
    rep.eta_feas = feasibility_residual(inst, &full)?;
    rep.notes.push(format!(
        "presolve removed {} zero-weight support points; KKT residuals refer to the reduced instance",
        inst.total_support() - reduced.total_support()
    ));
    Ok((full, rep))
}
