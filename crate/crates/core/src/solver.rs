//! Damped Picard/Newton solution of the discrete Dirichlet problem, with
//! energy, uniqueness and parameter-continuity diagnostics.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{sup_norm, WeakForm};
use crate::coefficients::{
    check_admissible, AdmissibilityPolicy, AdmissibilityReport, CoefficientField,
    ParametricCoefficient, SourceField,
};
use crate::error::{Error, Result};
use crate::mesh::{lift_boundary, norms, w12_distance, FEFunction, Point, QuadRule, RectGrid};
use crate::structure::FluxParams;

pub type BoundaryFn = Arc<dyn Fn(Point) -> Vec<Complex64> + Send + Sync>;

/// Dirichlet data `g` for `N` components.
#[derive(Clone)]
pub struct BoundaryData {
    eval: BoundaryFn,
    ncomp: usize,
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData")
            .field("ncomp", &self.ncomp)
            .finish_non_exhaustive()
    }
}

impl BoundaryData {
    pub fn new(
        ncomp: usize,
        eval: impl Fn(Point) -> Vec<Complex64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(eval),
            ncomp,
        }
    }

    pub fn zero(ncomp: usize) -> Self {
        Self::new(ncomp, move |_| vec![Complex64::new(0.0, 0.0); ncomp])
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn eval(&self, x: Point) -> Vec<Complex64> {
        (self.eval)(x)
    }

    pub fn scale(&self, lambda: Complex64) -> Self {
        let eval = self.eval.clone();
        Self::new(self.ncomp, move |x| {
            eval(x).into_iter().map(|v| v * lambda).collect()
        })
    }

    pub fn conj(&self) -> Self {
        let eval = self.eval.clone();
        Self::new(self.ncomp, move |x| {
            eval(x).into_iter().map(|v| v.conj()).collect()
        })
    }
}

/// `-div(a (eps^2 + |grad u|^2)^{(p-2)/2} grad u) = -div F` with `u = g` on the boundary.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub grid: RectGrid,
    pub coefficient: CoefficientField,
    pub source: SourceField,
    pub boundary: BoundaryData,
    pub params: FluxParams,
}

impl DirichletProblem {
    pub fn new(
        grid: RectGrid,
        coefficient: CoefficientField,
        source: SourceField,
        boundary: BoundaryData,
        params: FluxParams,
    ) -> Result<Self> {
        if source.ncomp() != boundary.ncomp() {
            return Err(Error::dimension(
                format!("boundary data with N = {}", source.ncomp()),
                boundary.ncomp(),
            ));
        }
        if grid.cells()[0] < 2 || grid.cells()[1] < 2 {
            return Err(Error::Domain(
                "need at least 2 cells per axis for interior unknowns".into(),
            ));
        }
        Ok(Self {
            grid,
            coefficient,
            source,
            boundary,
            params,
        })
    }

    pub fn ncomp(&self) -> usize {
        self.source.ncomp()
    }

    /// Discrete lifting of the boundary data.
    pub fn lift(&self) -> FEFunction {
        lift_boundary(self.grid, self.ncomp(), |x| self.boundary.eval(x))
    }

    pub fn with_coefficient(&self, coefficient: CoefficientField) -> Self {
        Self {
            coefficient,
            ..self.clone()
        }
    }

    pub fn with_grid(&self, grid: RectGrid) -> Self {
        Self {
            grid,
            ..self.clone()
        }
    }

    pub fn weak_form(&self, allow_singular: bool) -> Result<WeakForm> {
        WeakForm::new(
            self.grid,
            &self.coefficient,
            &self.source,
            self.params,
            allow_singular,
        )
    }
}

/// Iteration controls of the nonlinear solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target for the residual sup-norm.
    pub tol: f64,
    pub max_picard: usize,
    pub max_newton: usize,
    /// Initial step length of the line search, in `(0, 1]`.
    pub damping: f64,
    /// Residual level below which Newton replaces Picard.
    pub switch_threshold: f64,
    pub max_halvings: usize,
    /// Extra Newton steps after reaching `tol`, kept only if they lower the residual.
    pub polish_steps: usize,
    pub policy: AdmissibilityPolicy,
    /// Permits `p < 2` with `eps = 0` by flooring the weight argument.
    pub allow_singular_floor: bool,
    /// Seed of the random pair used by the monotonicity witness.
    pub witness_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_picard: 200,
            max_newton: 50,
            damping: 1.0,
            switch_threshold: 1e-3,
            max_halvings: 30,
            polish_steps: 1,
            policy: AdmissibilityPolicy::Strict,
            allow_singular_floor: false,
            witness_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Domain(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_picard == 0 || self.max_newton == 0 {
            return Err(Error::Domain("iteration caps must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Domain(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.switch_threshold > 0.0) {
            return Err(Error::Domain("switch_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_policy(mut self, policy: AdmissibilityPolicy) -> Self {
        self.policy = policy;
        self
    }
}

/// Summary of the discrete monotonicity checks of a solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityWitness {
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `lhs / (nu * rhs)`; at least 1 when the inequality holds.
    pub min_ratio: Option<f64>,
}

/// Diagnostics of a nonlinear solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub picard_iterations: usize,
    pub newton_iterations: usize,
    /// Residual sup-norm after every accepted step, starting at the initial guess.
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    /// `int |grad u_h|^p`.
    pub energy: f64,
    /// `energy / int (|F|^{p'} + 1)`.
    pub energy_bound_ratio: f64,
    pub converged: bool,
    pub degenerate_cells: usize,
    pub admissibility: AdmissibilityReport,
    pub monotonicity: MonotonicityWitness,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Picard,
    Newton,
}

/// Relative slack of the monotonicity witness.
const WITNESS_SLACK: f64 = 1e-9;
/// Steps smaller than this (relative to the iterate) are skipped by the
/// witness, since the flux difference loses all significant digits.
const WITNESS_MIN_STEP: f64 = 1e-6;

/// Solves from the boundary lifting.
pub fn solve_dirichlet(
    problem: &DirichletProblem,
    cfg: &SolverConfig,
) -> Result<(FEFunction, SolveReport)> {
    solve_from(problem, problem.lift(), cfg)
}

/// Solves from `init`, whose boundary values are replaced by the Dirichlet data.
pub fn solve_from(
    problem: &DirichletProblem,
    init: FEFunction,
    cfg: &SolverConfig,
) -> Result<(FEFunction, SolveReport)> {
    cfg.validate()?;
    if problem.params.is_singular() && !cfg.allow_singular_floor {
        return Err(Error::Refused(format!(
            "p = {} < 2 with eps = 0 makes the weight singular; set allow_singular_floor to floor it",
            problem.params.p()
        )));
    }
    if *init.grid() != problem.grid || init.ncomp() != problem.ncomp() {
        return Err(Error::dimension(
            "initial guess on the problem grid",
            "a different grid",
        ));
    }
    let admissibility = check_admissible(&problem.coefficient, &problem.grid, problem.params.p())?;
    admissibility.require(cfg.policy)?;
    let mut warnings = Vec::new();
    if admissibility.ell2_margin <= 0.0 {
        warnings.push(format!(
            "monotonicity condition fails (margin {:e}); uniqueness is not guaranteed",
            admissibility.ell2_margin
        ));
    }
    let strict = cfg.policy == AdmissibilityPolicy::Strict;
    let form = problem.weak_form(cfg.allow_singular_floor)?;
    let nu = problem.coefficient.nu();

    let lift = problem.lift();
    let mut u = init;
    for id in 0..problem.grid.n_nodes() {
        if problem.grid.is_boundary(id) {
            for k in 0..u.ncomp() {
                let v = lift.node_value(id, k);
                u.values_mut()[id * problem.ncomp() + k] = v;
            }
        }
    }
    let start = u.clone();

    let mut witness = MonotonicityWitness::default();
    let record_pair =
        |a: &FEFunction, b: &FEFunction, witness: &mut MonotonicityWitness| -> Result<()> {
            let (lhs, rhs) = form.monotonicity_terms(a, b)?;
            if rhs <= 0.0 {
                return Ok(());
            }
            let ratio = lhs / (nu * rhs);
            witness.pairs += 1;
            witness.min_ratio = Some(witness.min_ratio.map_or(ratio, |m| m.min(ratio)));
            if ratio < 1.0 - WITNESS_SLACK {
                witness.violations += 1;
            }
            Ok(())
        };

    let mut r = form.residual(&u)?;
    let mut rnorm = sup_norm(&r);
    let mut history = vec![rnorm];
    let (mut picard, mut newton) = (0usize, 0usize);
    let mut phase = if rnorm > cfg.switch_threshold {
        Phase::Picard
    } else {
        Phase::Newton
    };

    let fail = |reason: String,
                u: &FEFunction,
                history: Vec<f64>,
                picard,
                newton,
                witness,
                warnings|
     -> Result<Error> {
        let (energy, data) = form.energy_terms(u)?;
        Ok(Error::NonConvergence {
            reason,
            report: Box::new(SolveReport {
                picard_iterations: picard,
                newton_iterations: newton,
                final_residual: *history.last().unwrap_or(&f64::NAN),
                residual_history: history,
                energy,
                energy_bound_ratio: energy / data,
                converged: false,
                degenerate_cells: form.floored_cells(u)?,
                admissibility: admissibility.clone(),
                monotonicity: witness,
                warnings,
            }),
        })
    };

    while rnorm > cfg.tol {
        let matrix = match phase {
            Phase::Picard => {
                if picard >= cfg.max_picard {
                    phase = Phase::Newton;
                    continue;
                }
                picard += 1;
                form.picard_operator(&u)?
            }
            Phase::Newton => {
                if newton >= cfg.max_newton {
                    return Err(fail(
                        format!(
                            "{} Newton steps without reaching tol {:e}",
                            cfg.max_newton, cfg.tol
                        ),
                        &u,
                        history,
                        picard,
                        newton,
                        witness,
                        warnings,
                    )?);
                }
                newton += 1;
                form.jacobian(&u)?
            }
        };
        let delta = matrix.factor()?.solve(&r);
        match line_search(&form, &u, &delta, rnorm, cfg)? {
            Some((next, next_r, next_norm, step_size)) => {
                if strict && step_size > WITNESS_MIN_STEP * u_scale(&u) {
                    record_pair(&u, &next, &mut witness)?;
                }
                u = next;
                r = next_r;
                rnorm = next_norm;
                history.push(rnorm);
                if phase == Phase::Picard && rnorm <= cfg.switch_threshold {
                    phase = Phase::Newton;
                }
            }
            None if phase == Phase::Picard => phase = Phase::Newton,
            None => {
                return Err(fail(
                    format!("line search stalled at residual {rnorm:e}"),
                    &u,
                    history,
                    picard,
                    newton,
                    witness,
                    warnings,
                )?)
            }
        }
    }

    for _ in 0..cfg.polish_steps {
        if rnorm == 0.0 {
            break;
        }
        let delta = form.jacobian(&u)?.factor()?.solve(&r);
        let mut trial = u.clone();
        trial.add_interior(&delta, -1.0);
        let tr = form.residual(&trial)?;
        let tn = sup_norm(&tr);
        if tn < rnorm {
            u = trial;
            r = tr;
            rnorm = tn;
            history.push(rnorm);
        } else {
            break;
        }
    }

    if strict {
        record_pair(&u, &start, &mut witness)?;
        let other = random_init(problem, cfg.witness_seed, 1.0);
        record_pair(&u, &other, &mut witness)?;
        if witness.violations > 0 {
            return Err(Error::ConditionViolated(format!(
                "discrete monotonicity inequality failed on {} of {} pairs (min ratio {:?})",
                witness.violations, witness.pairs, witness.min_ratio
            )));
        }
    }

    let (energy, data) = form.energy_terms(&u)?;
    let report = SolveReport {
        picard_iterations: picard,
        newton_iterations: newton,
        final_residual: rnorm,
        residual_history: history,
        energy,
        energy_bound_ratio: energy / data,
        converged: true,
        degenerate_cells: form.floored_cells(&u)?,
        admissibility,
        monotonicity: witness,
        warnings,
    };
    Ok((u, report))
}

fn u_scale(u: &FEFunction) -> f64 {
    u.values().iter().fold(1.0f64, |m, v| m.max(v.norm()))
}

/// Backtracking on the residual sup-norm along `-delta`; returns the first
/// trial that strictly lowers it, with the step's sup-norm.
#[allow(clippy::type_complexity)]
fn line_search(
    form: &WeakForm,
    u: &FEFunction,
    delta: &[f64],
    rnorm: f64,
    cfg: &SolverConfig,
) -> Result<Option<(FEFunction, Vec<f64>, f64, f64)>> {
    let mut lambda = cfg.damping;
    let dnorm = sup_norm(delta);
    for _ in 0..=cfg.max_halvings {
        let mut trial = u.clone();
        trial.add_interior(delta, -lambda);
        let r = form.residual(&trial)?;
        let n = sup_norm(&r);
        if n < rnorm {
            return Ok(Some((trial, r, n, lambda * dnorm)));
        }
        lambda *= 0.5;
    }
    Ok(None)
}

/// `int |grad u|^p / int (|F|^{p'} + 1)`, both by 2x2 Gauss quadrature.
pub fn energy_check(u: &FEFunction, source: &SourceField, params: &FluxParams) -> Result<f64> {
    if source.ncomp() != u.ncomp() {
        return Err(Error::dimension(u.ncomp(), source.ncomp()));
    }
    let p = params.p();
    let pc = params.conjugate();
    let energy = norms(u, p).lp_grad.powf(p);
    let grid = u.grid();
    let rule = QuadRule::gauss2();
    let area = grid.cell_area();
    let mut data = 0.0;
    for (i, j) in grid.cell_iter() {
        for (r, w) in rule.points().iter().zip(rule.weights()) {
            let f = source.eval_checked(grid.map_point(i, j, *r))?;
            data += w * area * (f.norm_sqr().sqrt().powf(pc) + 1.0);
        }
    }
    Ok(energy / data)
}

/// Random initial guess with the problem's boundary data and interior
/// values uniform in `[-amplitude, amplitude]^2`.
pub fn random_init(problem: &DirichletProblem, seed: u64, amplitude: f64) -> FEFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = problem.lift();
    let n = problem.ncomp();
    for id in 0..problem.grid.n_nodes() {
        if !problem.grid.is_boundary(id) {
            for k in 0..n {
                u.values_mut()[id * n + k] = Complex64::new(
                    rng.gen_range(-amplitude..=amplitude),
                    rng.gen_range(-amplitude..=amplitude),
                );
            }
        }
    }
    u
}

/// Solutions from several initial guesses and their largest pairwise distance.
#[derive(Clone, Debug)]
pub struct UniquenessReport {
    pub max_distance: f64,
    pub solutions: Vec<FEFunction>,
    pub reports: Vec<SolveReport>,
}

/// Solves from every initial guess (concurrently) and measures the largest
/// pairwise `W^{1,2}` distance of the results.
pub fn uniqueness_probe(
    problem: &DirichletProblem,
    inits: Vec<FEFunction>,
    cfg: &SolverConfig,
) -> Result<UniquenessReport> {
    if inits.len() < 2 {
        return Err(Error::InsufficientData(
            "uniqueness probe needs at least two initial guesses".into(),
        ));
    }
    let results: Vec<(FEFunction, SolveReport)> = inits
        .into_par_iter()
        .map(|init| solve_from(problem, init, cfg))
        .collect::<Result<_>>()?;
    let mut max_distance = 0.0f64;
    for a in 0..results.len() {
        for b in (a + 1)..results.len() {
            max_distance = max_distance.max(w12_distance(&results[a].0, &results[b].0)?);
        }
    }
    let (solutions, reports) = results.into_iter().unzip();
    Ok(UniquenessReport {
        max_distance,
        solutions,
        reports,
    })
}

/// One row of [`continuity_in_z_probe`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub h: Complex64,
    /// `||u(z+h) - u(z)||_{W^{1,2}} / |h|`.
    pub w12_ratio: f64,
    /// `max |grad u(z+h) - grad u(z)|` over quadrature points.
    pub sup_grad_distance: f64,
}

/// Solves at `z` and at every `z + h`, reporting the scaled `W^{1,2}`
/// distance and the uniform gradient distance.
pub fn continuity_in_z_probe(
    pc: &ParametricCoefficient,
    z: Complex64,
    h_list: &[Complex64],
    base: &DirichletProblem,
    cfg: &SolverConfig,
) -> Result<Vec<ContinuityRow>> {
    if base.params.eps() <= 0.0 {
        return Err(Error::ConditionViolated(
            "the parameter probes need eps > 0".into(),
        ));
    }
    let (u0, _) = solve_dirichlet(&base.with_coefficient(pc.slice(z)?), cfg)?;
    h_list
        .par_iter()
        .map(|&h| {
            if h.norm() == 0.0 {
                return Err(Error::Domain("parameter step must be nonzero".into()));
            }
            let (uh, _) = solve_dirichlet(&base.with_coefficient(pc.slice(z + h)?), cfg)?;
            let diff = uh.sub(&u0)?;
            let n = norms(&diff, 2.0);
            Ok(ContinuityRow {
                h,
                w12_ratio: n.w12 / h.norm(),
                sup_grad_distance: n.sup_grad,
            })
        })
        .collect()
}
