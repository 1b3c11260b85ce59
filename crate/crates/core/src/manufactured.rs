//! Manufactured solutions and mesh-refinement studies.
//!
//! Given an exact `u*` and a coefficient `a`, the source
//! `F = a (eps^2 + |grad u*|^2)^{(p-2)/2} grad u*` makes `u*` an exact weak
//! solution, so the discrete error is pure discretization error.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, SourceField};
use crate::complex_fields::CMat;
use crate::error::{Error, Result};
use crate::mesh::{FEFunction, Point, QuadRule, RectGrid, DIM};
use crate::solver::{solve_dirichlet, BoundaryData, DirichletProblem, SolveReport, SolverConfig};
use crate::structure::{flux, FluxParams};

pub type ValueFn = Arc<dyn Fn(Point) -> Vec<Complex64> + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(Point) -> CMat + Send + Sync>;

/// An exact solution with its gradient.
#[derive(Clone)]
pub struct ManufacturedSolution {
    ncomp: usize,
    value: ValueFn,
    gradient: GradientFn,
}

impl std::fmt::Debug for ManufacturedSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedSolution")
            .field("ncomp", &self.ncomp)
            .finish_non_exhaustive()
    }
}

impl ManufacturedSolution {
    pub fn new(
        ncomp: usize,
        value: impl Fn(Point) -> Vec<Complex64> + Send + Sync + 'static,
        gradient: impl Fn(Point) -> CMat + Send + Sync + 'static,
    ) -> Result<Self> {
        if ncomp == 0 {
            return Err(Error::Domain("need at least one component".into()));
        }
        Ok(Self {
            ncomp,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        })
    }

    /// `amplitude * sin(pi x) sin(pi y)` on the unit square, `N = 1`.
    pub fn sine_bump(amplitude: Complex64) -> Self {
        Self {
            ncomp: 1,
            value: Arc::new(move |x| vec![amplitude * ((PI * x[0]).sin() * (PI * x[1]).sin())]),
            gradient: Arc::new(move |x| {
                let gx = PI * (PI * x[0]).cos() * (PI * x[1]).sin();
                let gy = PI * (PI * x[0]).sin() * (PI * x[1]).cos();
                CMat::from_complex(1, DIM, &[amplitude * gx, amplitude * gy]).expect("1x2 gradient")
            }),
        }
    }

    /// The bump with amplitude `(1 + i) / sqrt 2`.
    pub fn unit_phase_bump() -> Self {
        Self::sine_bump(Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2))
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn value(&self, x: Point) -> Vec<Complex64> {
        (self.value)(x)
    }

    pub fn gradient(&self, x: Point) -> CMat {
        (self.gradient)(x)
    }

    /// Source making `self` the exact solution for coefficient `a`.
    pub fn source_for(&self, a: &CoefficientField, params: FluxParams) -> Result<SourceField> {
        let grad = self.gradient.clone();
        let a = a.clone();
        SourceField::new(self.ncomp, move |x| {
            flux(&params, &grad(x)).scale(a.eval(x))
        })
    }

    /// Dirichlet data equal to `u*`.
    pub fn boundary(&self) -> BoundaryData {
        let value = self.value.clone();
        BoundaryData::new(self.ncomp, move |x| value(x))
    }

    pub fn problem(
        &self,
        grid: RectGrid,
        a: &CoefficientField,
        params: FluxParams,
    ) -> Result<DirichletProblem> {
        DirichletProblem::new(
            grid,
            a.clone(),
            self.source_for(a, params)?,
            self.boundary(),
            params,
        )
    }
}

/// `(||u_h - u*||_{L^2}, ||u_h - u*||_{W^{1,2}})` by 4x4 Gauss quadrature.
pub fn errors(u_h: &FEFunction, exact: &ManufacturedSolution) -> Result<(f64, f64)> {
    if u_h.ncomp() != exact.ncomp() {
        return Err(Error::dimension(
            format!("N = {}", exact.ncomp()),
            u_h.ncomp(),
        ));
    }
    let grid = *u_h.grid();
    let rule = QuadRule::gauss(4);
    let n = u_h.ncomp();
    let (l2, h1) = grid
        .cell_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(i, j)| {
            let mut g = CMat::zeros(n, DIM);
            let mut v = vec![Complex64::new(0.0, 0.0); n];
            let (mut l2, mut h1) = (0.0, 0.0);
            for (r, w) in rule.points().iter().zip(rule.weights()) {
                let x = grid.map_point(i, j, *r);
                u_h.value_in_cell(i, j, *r, &mut v);
                u_h.gradient_in_cell(i, j, *r, &mut g);
                let ev = exact.value(x);
                let eg = exact.gradient(x);
                l2 += w * v
                    .iter()
                    .zip(&ev)
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>();
                h1 += w * g.sub(&eg).expect("matching shapes").norm_sqr();
            }
            (l2, h1)
        })
        .collect::<Vec<_>>()
        .into_iter()
        // sequential sum keeps the result independent of the thread count
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let area = grid.cell_area();
    Ok(((l2 * area).sqrt(), ((l2 + h1) * area).sqrt()))
}

/// One mesh of a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub cells: usize,
    pub l2_err: f64,
    pub w12_err: f64,
    /// Observed `W^{1,2}` order against the previous (coarser) row.
    pub order: Option<f64>,
    /// Observed `L^2` order against the previous row.
    pub l2_order: Option<f64>,
    pub energy_bound_ratio: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub p: f64,
    pub eps: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Set when fewer than two meshes were run; no orders exist then.
    pub single_mesh: bool,
    pub warnings: Vec<String>,
}

impl ConvergenceTable {
    /// Orders of the finest pair, `(W12, L2)`.
    pub fn final_orders(&self) -> Option<(f64, f64)> {
        let last = self.rows.last()?;
        Some((last.order?, last.l2_order?))
    }

    /// CSV `h,L2_err,W12_err,order,L2_order`; the order columns are left
    /// out for a single mesh.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        if self.single_mesh {
            writeln!(out, "h,L2_err,W12_err")?;
        } else {
            writeln!(out, "h,L2_err,W12_err,order,L2_order")?;
        }
        let opt = |o: Option<f64>| o.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.rows {
            if self.single_mesh {
                writeln!(out, "{:e},{:e},{:e}", r.h, r.l2_err, r.w12_err)?;
            } else {
                writeln!(
                    out,
                    "{:e},{:e},{:e},{},{}",
                    r.h,
                    r.l2_err,
                    r.w12_err,
                    opt(r.order),
                    opt(r.l2_order)
                )?;
            }
        }
        Ok(())
    }
}

/// Solves the manufactured problem on `unit_square(n)` for each `n` and
/// reports errors with observed orders between consecutive meshes.
pub fn convergence_study(
    exact: &ManufacturedSolution,
    a: &CoefficientField,
    params: FluxParams,
    cells: &[usize],
    cfg: &SolverConfig,
) -> Result<ConvergenceTable> {
    if cells.is_empty() || cells.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "mesh sizes must be nonempty and strictly increasing".into(),
        ));
    }
    let legs: Vec<(f64, f64, f64, SolveReport)> = cells
        .par_iter()
        .map(|&n| {
            let grid = RectGrid::unit_square(n)?;
            let (u, report) = solve_dirichlet(&exact.problem(grid, a, params)?, cfg)?;
            let (l2, w12) = errors(&u, exact)?;
            Ok((grid.spacing()[0], l2, w12, report))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(legs.len());
    let mut warnings = Vec::new();
    for ((h, l2, w12, report), &n) in legs.into_iter().zip(cells) {
        let (order, l2_order) = match rows.last() {
            Some(prev) => {
                let lh = (prev.h / h).ln();
                (
                    Some((prev.w12_err / w12).ln() / lh),
                    Some((prev.l2_err / l2).ln() / lh),
                )
            }
            None => (None, None),
        };
        warnings.extend(report.warnings.iter().map(|w| format!("n = {n}: {w}")));
        rows.push(ConvergenceRow {
            h,
            cells: n,
            l2_err: l2,
            w12_err: w12,
            order,
            l2_order,
            energy_bound_ratio: report.energy_bound_ratio,
            iterations: report.picard_iterations + report.newton_iterations,
        });
    }
    let single_mesh = rows.len() < 2;
    if single_mesh {
        warnings.push("single mesh: no observed order".into());
    }
    Ok(ConvergenceTable {
        p: params.p(),
        eps: params.eps(),
        rows,
        single_mesh,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverConfig;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bump_gradient_matches_central_differences() {
        let u = ManufacturedSolution::unit_phase_bump();
        let x = [0.3, 0.7];
        let h = 1e-6;
        let g = u.gradient(x);
        for d in 0..DIM {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let fd = (u.value(xp)[0] - u.value(xm)[0]) / (2.0 * h);
            assert!((fd - g.get(0, d)).norm() < 1e-8);
        }
    }

    #[test]
    fn interpolant_errors_have_textbook_orders() {
        let u = ManufacturedSolution::unit_phase_bump();
        let e = |n: usize| {
            let g = RectGrid::unit_square(n).unwrap();
            errors(&FEFunction::interpolate(g, 1, |x| u.value(x)), &u).unwrap()
        };
        let (l2a, w12a) = e(16);
        let (l2b, w12b) = e(32);
        assert!(((l2a / l2b).log2() - 2.0).abs() < 0.1);
        assert!(((w12a / w12b).log2() - 1.0).abs() < 0.1);
        let g = RectGrid::unit_square(4).unwrap();
        let exact_zero =
            ManufacturedSolution::new(1, |_| vec![c(0.0, 0.0)], |_| CMat::zeros(1, 2)).unwrap();
        assert_eq!(
            errors(&FEFunction::zeros(g, 1), &exact_zero).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn linear_study_converges() {
        let a = CoefficientField::constant(c(1.0, 0.3), 0.01, 3.0).unwrap();
        let params = FluxParams::new(2.0, 0.5).unwrap();
        let t = convergence_study(
            &ManufacturedSolution::unit_phase_bump(),
            &a,
            params,
            &[8, 16, 32],
            &SolverConfig::default(),
        )
        .unwrap();
        let (w, l) = t.final_orders().unwrap();
        assert!((w - 1.0).abs() < 0.2 && (l - 2.0).abs() < 0.3, "{t:?}");
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("h,L2_err,W12_err,order,L2_order\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn single_mesh_is_flagged() {
        let a = CoefficientField::constant(c(1.0, 0.0), 0.01, 3.0).unwrap();
        let params = FluxParams::new(2.0, 0.5).unwrap();
        let t = convergence_study(
            &ManufacturedSolution::unit_phase_bump(),
            &a,
            params,
            &[8],
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(t.single_mesh && t.final_orders().is_none());
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("h,L2_err,W12_err\n"));
    }
}
