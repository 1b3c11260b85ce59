//! Numerical laboratory for the complex-valued elliptic p-Laplace system
//!
//! ```text
//! -div( a(x) (eps^2 + |grad u|^2)^{(p-2)/2} grad u ) = -div F   in Omega,
//!                                                 u = g        on the boundary,
//! ```
//!
//! with `u: Omega -> C^N` on a rectangle `Omega` in the plane. The crate
//! provides the structure inequalities of the flux, coefficient
//! admissibility checks, a bilinear finite-element discretization with a
//! Picard/Newton solver, gradient-regularity probes and the derivative of
//! the solution map with respect to a complex coefficient parameter.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod coefficients;
pub mod complex_fields;
pub mod error;
pub mod families;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod regularity;
pub mod sensitivity;
pub mod solver;
pub mod structure;

pub use coefficients::{
    check_admissible, derivative_consistency, holder_seminorm_estimate, sensitivity_condition,
    AdmissibilityPolicy, AdmissibilityReport, CoefficientField, ParametricCoefficient, SourceField,
};
pub use complex_fields::{check, cinner, cnorm, hat, CMat, RealMat2N};
pub use error::{Error, Result};
pub use mesh::{gradient_at, lift_boundary, norms, FEFunction, Norms, Point, QuadRule, RectGrid};
pub use solver::{solve_dirichlet, BoundaryData, DirichletProblem, SolveReport, SolverConfig};
pub use structure::{c1_of, c2_of, FluxParams};
