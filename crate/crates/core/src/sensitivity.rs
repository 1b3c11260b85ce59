//! Derivative of the solution map `z -> u(z)` along a line `z + t theta`.
//!
//! The derivative `w_theta` solves a real-linear (not complex-linear)
//! system: besides the usual linearized flux it carries a conjugate-linear
//! term scaled by the twist `conj(theta) / theta`, so it is assembled and
//! solved in realified form.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{sup_norm, WeakForm};
use crate::coefficients::{sensitivity_condition, ParametricCoefficient};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::{norms, FEFunction};
use crate::solver::{solve_dirichlet, DirichletProblem, SolverConfig};

/// A unit direction `theta` in the parameter plane with its twist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    theta: Complex64,
    theta_twist: Complex64,
}

impl Direction {
    /// Normalizes `theta`; zero and non-finite values are rejected.
    pub fn new(theta: Complex64) -> Result<Self> {
        let r = theta.norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Domain(format!(
                "direction must be finite and nonzero, got {theta}"
            )));
        }
        let theta = theta / r;
        Ok(Self {
            theta,
            theta_twist: theta.conj() / theta,
        })
    }

    pub fn theta(&self) -> Complex64 {
        self.theta
    }

    /// `conj(theta) / theta`.
    pub fn theta_twist(&self) -> Complex64 {
        self.theta_twist
    }
}

/// How the sensitivity routines treat the condition `s* < 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Requires `s* < 1`.
    #[default]
    Strict,
    /// Accepts `s* <= 1` and records a warning when `s* = 1`.
    Tolerant,
}

fn check_s_star(s_star: f64, mode: SensitivityMode, warnings: &mut Vec<String>) -> Result<()> {
    match mode {
        SensitivityMode::Strict if s_star >= 1.0 => Err(Error::ConditionViolated(format!(
            "sensitivity condition needs s* < 1, got {s_star}"
        ))),
        SensitivityMode::Tolerant if s_star > 1.0 => Err(Error::ConditionViolated(format!(
            "sensitivity condition needs s* <= 1, got {s_star}"
        ))),
        SensitivityMode::Tolerant if s_star == 1.0 => {
            warnings
                .push("s* = 1: only weak convergence of difference quotients is expected".into());
            Ok(())
        }
        _ => Ok(()),
    }
}

fn require_eps(base: &DirichletProblem) -> Result<()> {
    if base.params.eps() > 0.0 {
        Ok(())
    } else {
        Err(Error::Refused(
            "the linearized parameter equation needs eps > 0".into(),
        ))
    }
}

/// Realified operator and right-hand side of the equation for `w_theta`
/// at a converged state `u`; `a_prime` holds `a'(z)` at the quadrature points.
///
/// `u` is refused if its residual exceeds `residual_tol`.
pub fn assemble_linearized(
    form: &WeakForm,
    u: &FEFunction,
    a_prime: &[Complex64],
    dir: &Direction,
    residual_tol: f64,
) -> Result<(BandMatrix, Vec<f64>)> {
    if form.params().eps() <= 0.0 {
        return Err(Error::Refused(
            "the linearized parameter equation needs eps > 0".into(),
        ));
    }
    let r = form.residual_norm(u)?;
    if !(r <= residual_tol) {
        return Err(Error::Refused(format!(
            "state is not converged: residual {r:e} exceeds {residual_tol:e}"
        )));
    }
    let matrix = form.linearized_operator(u, dir.theta_twist())?;
    let rhs = form.linearized_rhs(u, a_prime)?;
    Ok((matrix, rhs))
}

/// Lower bound check `Re Q(v) >= (1 - s*) (p/2) sum a^R mu |grad v|^2` of the
/// linearized operator's quadratic form on random `v`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoercivityWitness {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `Re Q(v) / bound` observed.
    pub min_ratio: Option<f64>,
}

pub fn coercivity_witness(
    form: &WeakForm,
    u: &FEFunction,
    matrix: &BandMatrix,
    s_star: f64,
    samples: usize,
    seed: u64,
) -> Result<CoercivityWitness> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = form.params().p();
    let mut out = CoercivityWitness::default();
    for _ in 0..samples {
        let x: Vec<f64> = (0..form.n_dofs())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut v = FEFunction::zeros(*form.grid(), form.ncomp());
        v.set_interior_dofs(&x);
        let q = matrix.quadratic_form(&x);
        let bound = 0.5 * (1.0 - s_star) * p * form.weighted_energy(u, &v)?;
        if bound <= 0.0 {
            continue;
        }
        let ratio = q / bound;
        out.samples += 1;
        out.min_ratio = Some(out.min_ratio.map_or(ratio, |m| m.min(ratio)));
        if ratio < 1.0 - 1e-10 {
            out.violations += 1;
        }
    }
    Ok(out)
}

/// One row of a rate table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub t: f64,
    /// `||u(z + t theta) - u(z) - t theta w_theta||_{W^{1,2}} / t`.
    pub err_over_t: f64,
    /// `||(u(z + t theta) - u(z)) / (t theta)||_{W^{1,2}}`.
    pub quotient_norm: f64,
    /// `10 tol / t`: below this, solver noise dominates.
    pub floor: f64,
    pub above_floor: bool,
}

/// The derivative `w_theta` at `z` and its diagnostics.
#[derive(Clone, Debug)]
pub struct SensitivitySolution {
    pub w_theta: FEFunction,
    pub u_z: FEFunction,
    pub direction: Direction,
    /// Sup-norm of the realified linear residual.
    pub linear_residual: f64,
    pub s_star: f64,
    pub coercivity: CoercivityWitness,
    pub rate_table: Vec<RateRow>,
    pub warnings: Vec<String>,
}

/// Samples `a'(z)` at the quadrature points of `form`.
pub fn derivative_samples(
    form: &WeakForm,
    pc: &ParametricCoefficient,
    z: Complex64,
) -> Result<Vec<Complex64>> {
    let d = pc.derivative_slice(z)?;
    let vals = form.sample_scalar(|x| d(x));
    if vals.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Domain("non-finite coefficient derivative".into()));
    }
    Ok(vals)
}

/// Solves the realified system for `w_theta` given the converged state `u_z`.
pub fn w_theta_at(
    problem_z: &DirichletProblem,
    u_z: &FEFunction,
    a_prime: &[Complex64],
    dir: &Direction,
    residual_tol: f64,
) -> Result<(FEFunction, f64, BandMatrix)> {
    require_eps(problem_z)?;
    let form = problem_z.weak_form(false)?;
    let (matrix, rhs) = assemble_linearized(&form, u_z, a_prime, dir, residual_tol)?;
    let x = matrix.clone().factor()?.solve(&rhs);
    let ax = matrix.matvec(&x);
    let linear_residual = sup_norm(&ax.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
    let mut w = FEFunction::zeros(problem_z.grid, problem_z.ncomp());
    w.set_interior_dofs(&x);
    Ok((w, linear_residual, matrix))
}

/// Solves for `u(z)` and then for `w_theta`.
pub fn solve_w_theta(
    base: &DirichletProblem,
    pc: &ParametricCoefficient,
    z: Complex64,
    dir: &Direction,
    cfg: &SolverConfig,
    mode: SensitivityMode,
) -> Result<SensitivitySolution> {
    require_eps(base)?;
    let problem_z = base.with_coefficient(pc.slice(z)?);
    let s_star = sensitivity_condition(&problem_z.coefficient, &base.grid, base.params.p())?;
    let mut warnings = Vec::new();
    check_s_star(s_star, mode, &mut warnings)?;
    let (u_z, _) = solve_dirichlet(&problem_z, cfg)?;
    let form = problem_z.weak_form(false)?;
    let a_prime = derivative_samples(&form, pc, z)?;
    let (w_theta, linear_residual, matrix) = w_theta_at(&problem_z, &u_z, &a_prime, dir, cfg.tol)?;
    let coercivity = coercivity_witness(&form, &u_z, &matrix, s_star.min(1.0), 8, 0)?;
    Ok(SensitivitySolution {
        w_theta,
        u_z,
        direction: *dir,
        linear_residual,
        s_star,
        coercivity,
        rate_table: Vec::new(),
        warnings,
    })
}

/// `(u(z + t theta) - u(z)) / (t theta)`, with `u(z)` supplied.
pub fn difference_quotient_from(
    base: &DirichletProblem,
    pc: &ParametricCoefficient,
    z: Complex64,
    u_z: &FEFunction,
    dir: &Direction,
    t: f64,
    cfg: &SolverConfig,
) -> Result<FEFunction> {
    if t == 0.0 || !t.is_finite() {
        return Err(Error::Domain(format!(
            "step t must be finite and nonzero, got {t}"
        )));
    }
    let h = dir.theta() * t;
    let (u_t, _) = solve_dirichlet(&base.with_coefficient(pc.slice(z + h)?), cfg)?;
    let mut q = u_t.sub(u_z)?.scale(h.inv());
    // boundary values agree exactly; clear rounding residue of the division
    let grid = *q.grid();
    let n = q.ncomp();
    for id in 0..grid.n_nodes() {
        if grid.is_boundary(id) {
            for k in 0..n {
                q.values_mut()[id * n + k] = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(q)
}

/// `(u(z + t theta) - u(z)) / (t theta)`.
pub fn difference_quotient(
    base: &DirichletProblem,
    pc: &ParametricCoefficient,
    z: Complex64,
    dir: &Direction,
    t: f64,
    cfg: &SolverConfig,
) -> Result<FEFunction> {
    require_eps(base)?;
    let (u_z, _) = solve_dirichlet(&base.with_coefficient(pc.slice(z)?), cfg)?;
    difference_quotient_from(base, pc, z, &u_z, dir, t, cfg)
}

/// Rate table with its verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub theta: Complex64,
    pub s_star: f64,
    pub rows: Vec<RateRow>,
    /// `err/t` strictly decreases along consecutive rows above the floor.
    pub monotone: bool,
    /// Smallest per-decade decrease factor of `err/t` among consecutive
    /// rows above the floor.
    pub min_decade_factor: Option<f64>,
    /// Largest over smallest quotient norm.
    pub quotient_spread: f64,
    pub linear_residual: f64,
    pub warnings: Vec<String>,
}

/// Compares `u(z + t theta) - u(z)` with `t theta w_theta` over `t_list`.
pub fn rate_test(
    base: &DirichletProblem,
    pc: &ParametricCoefficient,
    z: Complex64,
    dir: &Direction,
    t_list: &[f64],
    cfg: &SolverConfig,
    mode: SensitivityMode,
) -> Result<(RateTable, SensitivitySolution)> {
    if t_list.len() < 2 || t_list.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
        return Err(Error::Domain(
            "t_list must be positive and strictly decreasing".into(),
        ));
    }
    if t_list[0] / t_list[t_list.len() - 1] < 100.0 * (1.0 - 1e-12) {
        return Err(Error::Domain(
            "t_list must span at least two decades".into(),
        ));
    }
    let mut sol = solve_w_theta(base, pc, z, dir, cfg, mode)?;
    let quotients: Vec<FEFunction> = t_list
        .par_iter()
        .map(|&t| difference_quotient_from(base, pc, z, &sol.u_z, dir, t, cfg))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(t_list.len());
    for (&t, q) in t_list.iter().zip(&quotients) {
        // u(z+t theta) - u(z) - t theta w = t theta (q - w)
        let err = norms(&q.sub(&sol.w_theta)?, 2.0).w12 * t;
        let floor = 10.0 * cfg.tol / t;
        rows.push(RateRow {
            t,
            err_over_t: err / t,
            quotient_norm: norms(q, 2.0).w12,
            floor,
            above_floor: err / t > floor,
        });
    }
    let (monotone, min_decade_factor) = rate_verdict(&rows);
    let qn: Vec<f64> = rows.iter().map(|r| r.quotient_norm).collect();
    let qmax = qn.iter().cloned().fold(0.0, f64::max);
    let qmin = qn.iter().cloned().fold(f64::INFINITY, f64::min);
    let table = RateTable {
        theta: dir.theta(),
        s_star: sol.s_star,
        monotone,
        min_decade_factor,
        quotient_spread: if qmin > 0.0 {
            qmax / qmin
        } else if qmax == 0.0 {
            1.0
        } else {
            f64::INFINITY
        },
        linear_residual: sol.linear_residual,
        warnings: sol.warnings.clone(),
        rows,
    };
    sol.rate_table = table.rows.clone();
    Ok((table, sol))
}

/// Monotonicity and smallest per-decade factor over consecutive rows above the floor.
pub fn rate_verdict(rows: &[RateRow]) -> (bool, Option<f64>) {
    let mut monotone = true;
    let mut min_factor: Option<f64> = None;
    for w in rows.windows(2) {
        if !(w[0].above_floor && w[1].above_floor) {
            break;
        }
        if !(w[1].err_over_t < w[0].err_over_t) {
            monotone = false;
        }
        let decades = (w[0].t / w[1].t).log10();
        let factor = (w[0].err_over_t / w[1].err_over_t).powf(1.0 / decades);
        min_factor = Some(min_factor.map_or(factor, |m| m.min(factor)));
    }
    (monotone, min_factor)
}
