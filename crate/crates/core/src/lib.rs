//! Wasserstein barycenters of discrete distributions.
//!
//! The fixed-support barycenter problem is a linear program over the
//! barycenter weights `w` and one transport plan per input distribution.
//! [`sgs_admm`] solves it through its dual with a symmetric Gauss-Seidel
//! ADMM. [`ibp`] (entropic scaling) and [`badmm`] (Bregman ADMM) are the
//! baselines, and [`lp_oracle`] is an exact simplex solver for small
//! instances. [`free_support`] alternates support updates with any of them.
//!
//! Matrices are dense and row-major: row `i` belongs to barycenter support
//! point `i`, column `j` to support point `j` of an input distribution.

pub mod badmm;
pub mod bench;
pub mod datagen;
pub mod error;
pub mod free_support;
pub mod ibp;
pub mod io;
pub mod lp_oracle;
pub mod matrix;
pub mod model;
mod par;
pub mod presolve;
pub mod sgs_admm;
pub mod simplex;

pub use error::{Error, Result};
pub use matrix::Mat;
pub use model::{
    build_cost_matrix, feasibility_residual, primal_objective, BarycenterInstance, DiscreteDistribution, Method,
    PrimalSolution, SolveReport,
};
pub use sgs_admm::{DualIterate, ResidualReport, SgsOptions};

/// `|F − F*| / |F*|`, or the absolute difference when `F*` is zero.
pub fn normalized_objective(objective: f64, reference: f64) -> f64 {
    let diff = (objective - reference).abs();
    if reference == 0.0 {
        diff
    } else {
        diff / reference.abs()
    }
}
