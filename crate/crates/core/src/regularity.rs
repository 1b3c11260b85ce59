//! Empirical gradient-regularity probes on node-aligned sub-squares.
//!
//! A "ball" of radius `rho` around `center` is the union of the grid cells
//! lying fully inside `[cx - rho, cx + rho] x [cy - rho, cy + rho]`. Gradient
//! samples are taken at the 2x2 Gauss points of those cells.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, SourceField};
use crate::complex_fields::CMat;
use crate::error::{Error, Result};
use crate::mesh::{FEFunction, Point, QuadRule, RectGrid, DIM};
use crate::solver::{solve_dirichlet, BoundaryData, DirichletProblem, SolverConfig};
use crate::structure::FluxParams;

const SNAP: f64 = 1e-9;

/// Cell index ranges `[i0, i1) x [j0, j1)` of a sub-square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSquare {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl SubSquare {
    /// Cells of `grid` fully inside the square of half-width `rho` at `center`.
    ///
    /// The square must lie in the domain; an empty cell set is a
    /// resolution error.
    pub fn resolve(grid: &RectGrid, center: Point, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain(format!(
                "invalid sub-square center {center:?}, rho {rho}"
            )));
        }
        let b = grid.bounds();
        let h = grid.spacing();
        let n = grid.cells();
        let mut lo = [0usize; 2];
        let mut hi = [0usize; 2];
        for d in 0..DIM {
            let tol = SNAP * h[d];
            if center[d] - rho < b[d][0] - tol || center[d] + rho > b[d][1] + tol {
                return Err(Error::Domain(format!(
                    "sub-square of half-width {rho} at {center:?} leaves the domain"
                )));
            }
            let a = ((center[d] - rho - b[d][0]) / h[d] - SNAP).ceil().max(0.0) as usize;
            let z = ((center[d] + rho - b[d][0]) / h[d] + SNAP).floor().max(0.0) as usize;
            lo[d] = a.min(n[d]);
            hi[d] = z.min(n[d]);
            if hi[d] <= lo[d] {
                return Err(Error::Resolution(format!(
                    "sub-square of half-width {rho} at {center:?} contains no full cell"
                )));
            }
        }
        Ok(Self {
            i0: lo[0],
            i1: hi[0],
            j0: lo[1],
            j1: hi[1],
        })
    }

    pub fn n_cells(&self) -> usize {
        (self.i1 - self.i0) * (self.j1 - self.j0)
    }

    /// Mean half-width of the covered rectangle.
    pub fn effective_radius(&self, grid: &RectGrid) -> f64 {
        let h = grid.spacing();
        0.25 * ((self.i1 - self.i0) as f64 * h[0] + (self.j1 - self.j0) as f64 * h[1])
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.j0..self.j1).flat_map(move |j| (self.i0..self.i1).map(move |i| (i, j)))
    }
}

/// Gradient samples of a function over a sub-square, flattened to reals.
struct Samples {
    /// Relative quadrature weights (sum to the number of cells).
    weights: Vec<f64>,
    /// `dim` reals per sample: real then imaginary parts of the `N x 2` gradient.
    values: Vec<f64>,
    dim: usize,
}

impl Samples {
    fn collect(u: &FEFunction, sq: &SubSquare) -> Self {
        let rule = QuadRule::gauss2();
        let n = u.ncomp();
        let dim = 2 * n * DIM;
        let mut g = CMat::zeros(n, DIM);
        let mut weights = Vec::with_capacity(sq.n_cells() * rule.len());
        let mut values = Vec::with_capacity(sq.n_cells() * rule.len() * dim);
        for (i, j) in sq.cells() {
            for (r, w) in rule.points().iter().zip(rule.weights()) {
                u.gradient_in_cell(i, j, *r, &mut g);
                weights.push(*w);
                values.extend_from_slice(g.re());
                values.extend_from_slice(g.im());
            }
        }
        Self {
            weights,
            values,
            dim,
        }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted mean of `f(|g_s|)`.
    fn mean_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        let s: f64 = (0..self.len())
            .map(|s| self.weights[s] * f(norm(self.row(s))))
            .sum();
        s / self.total_weight()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("p must be finite and > 1, got {p}")))
    }
}

fn excess_of(samples: &Samples, p: f64) -> f64 {
    // Shifting by the first sample keeps affine data exactly zero.
    let base = samples.row(0).to_vec();
    let tw = samples.total_weight();
    let mut mean = vec![0.0; samples.dim];
    for s in 0..samples.len() {
        for (m, (x, b)) in mean.iter_mut().zip(samples.row(s).iter().zip(&base)) {
            *m += samples.weights[s] * (x - b);
        }
    }
    mean.iter_mut().for_each(|m| *m /= tw);
    let mut acc = 0.0;
    let mut diff = vec![0.0; samples.dim];
    for s in 0..samples.len() {
        for (k, d) in diff.iter_mut().enumerate() {
            *d = (samples.row(s)[k] - base[k]) - mean[k];
        }
        acc += samples.weights[s] * norm(&diff).powf(p);
    }
    acc / tw
}

/// Mean over the sub-square of `|grad u - mean(grad u)|^p`.
pub fn excess(u: &FEFunction, center: Point, rho: f64, p: f64) -> Result<f64> {
    check_p(p)?;
    let sq = SubSquare::resolve(u.grid(), center, rho)?;
    Ok(excess_of(&Samples::collect(u, &sq), p))
}

/// `2^p (mean |grad u|^p + |mean grad u|^p)` over the sub-square, an upper
/// bound for [`excess`].
pub fn excess_upper_bound(u: &FEFunction, center: Point, rho: f64, p: f64) -> Result<f64> {
    check_p(p)?;
    let sq = SubSquare::resolve(u.grid(), center, rho)?;
    let s = Samples::collect(u, &sq);
    let tw = s.total_weight();
    let mut mean = vec![0.0; s.dim];
    for k in 0..s.len() {
        for (m, x) in mean.iter_mut().zip(s.row(k)) {
            *m += s.weights[k] * x;
        }
    }
    let mean_norm = norm(&mean) / tw;
    Ok(2f64.powf(p) * (s.mean_of(|g| g.powf(p)) + mean_norm.powf(p)))
}

/// Excess over shrinking sub-squares with a power-law fit
/// `log excess ~ slope log rho`, `beta = slope / p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessProfile {
    pub center: Point,
    pub p: f64,
    /// Requested half-widths that were resolvable, decreasing.
    pub radii: Vec<f64>,
    /// Half-widths of the cell unions actually used.
    pub effective_radii: Vec<f64>,
    pub excess: Vec<f64>,
    pub fitted_beta: f64,
    pub fit_r2: f64,
    /// Every excess is zero; `fitted_beta` and `fit_r2` are then 0.
    pub degenerate: bool,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (slope, intercept, r2)
}

pub fn decay_fit(u: &FEFunction, center: Point, radii: &[f64], p: f64) -> Result<ExcessProfile> {
    check_p(p)?;
    if radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Domain("radii must be strictly decreasing".into()));
    }
    let grid = u.grid();
    let legs: Vec<Option<(f64, f64, f64)>> = radii
        .par_iter()
        .map(|&rho| match SubSquare::resolve(grid, center, rho) {
            Ok(sq) => Ok(Some((
                rho,
                sq.effective_radius(grid),
                excess_of(&Samples::collect(u, &sq), p),
            ))),
            Err(Error::Resolution(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let legs: Vec<(f64, f64, f64)> = legs.into_iter().flatten().collect();
    if legs.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} resolvable radii, need at least 4",
            legs.len()
        )));
    }
    let mut profile = ExcessProfile {
        center,
        p,
        radii: legs.iter().map(|l| l.0).collect(),
        effective_radii: legs.iter().map(|l| l.1).collect(),
        excess: legs.iter().map(|l| l.2).collect(),
        fitted_beta: 0.0,
        fit_r2: 0.0,
        degenerate: false,
    };
    if profile.excess.iter().all(|&e| e == 0.0) {
        profile.degenerate = true;
        return Ok(profile);
    }
    let pts: Vec<(f64, f64)> = legs
        .iter()
        .filter(|l| l.2 > 0.0)
        .map(|l| (l.1.ln(), l.2.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} radii with positive excess, need at least 4",
            pts.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _, r2) = linear_fit(&x, &y);
    profile.fitted_beta = slope / p;
    profile.fit_r2 = r2;
    Ok(profile)
}

/// Largest `|grad u(x) - grad u(y)|` over pairs of gradient samples in the
/// sub-square; every pair is compared.
pub fn grad_oscillation(u: &FEFunction, center: Point, rho: f64) -> Result<f64> {
    let sq = SubSquare::resolve(u.grid(), center, rho)?;
    let s = Samples::collect(u, &sq);
    let osc = (0..s.len())
        .into_par_iter()
        .map(|a| {
            let ra = s.row(a);
            (a + 1..s.len())
                .map(|b| {
                    ra.iter()
                        .zip(s.row(b))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(osc.sqrt())
}

/// Frozen-coefficient comparison on one sub-square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rho: f64,
    pub effective_rho: f64,
    /// Coefficient value frozen at the center.
    pub frozen: Complex64,
    /// `alpha0 = min(alpha, alpha (p - 1))` from the coefficient's Hölder exponent.
    pub alpha0: f64,
    /// Mean of `|grad u - grad v|^p`.
    pub lhs: f64,
    /// Mean of `|grad u|^p + 1`.
    pub energy_u: f64,
    /// Mean of `|grad v|^p`.
    pub energy_v: f64,
    /// `rho^alpha0 * energy_u`.
    pub rhs_shape: f64,
    /// `lhs / rhs_shape`.
    pub ratio: f64,
    /// `energy_v / energy_u`.
    pub energy_ratio: f64,
    /// `lhs / rho^alpha0`.
    pub scaled_lhs: f64,
}

/// Solves the homogeneous problem with `a` frozen at `center` on the
/// sub-square, with boundary values of `u`, and compares gradients.
pub fn compare_homogeneous(
    u: &FEFunction,
    center: Point,
    rho: f64,
    params: FluxParams,
    a: &CoefficientField,
    cfg: &SolverConfig,
) -> Result<ComparisonReport> {
    let holder = a.holder().ok_or_else(|| {
        Error::Domain("comparison needs Hölder metadata on the coefficient".into())
    })?;
    let grid = *u.grid();
    let sq = SubSquare::resolve(&grid, center, rho)?;
    let sub = grid.subgrid(sq.i0, sq.i1, sq.j0, sq.j1)?;
    let frozen = a.eval_checked(center)?;
    let n = u.ncomp();
    let h = grid.spacing();
    let b = grid.bounds();
    let uc = u.clone();
    let boundary = BoundaryData::new(n, move |x| {
        let i = ((x[0] - b[0][0]) / h[0]).round() as usize;
        let j = ((x[1] - b[1][0]) / h[1]).round() as usize;
        let id = grid.node_id(i, j);
        (0..n).map(|k| uc.node_value(id, k)).collect()
    });
    let problem = DirichletProblem::new(
        sub,
        CoefficientField::constant(frozen, a.nu(), a.upper())?,
        SourceField::zero(n)?,
        boundary,
        params,
    )?;
    let (v, _) = solve_dirichlet(&problem, cfg)?;
    // restriction of u to the sub-grid
    let mut ur = FEFunction::zeros(sub, n);
    let [sx, _] = sub.nodes_per_axis();
    for id in 0..sub.n_nodes() {
        let (i, j) = (id % sx, id / sx);
        let pid = grid.node_id(i + sq.i0, j + sq.j0);
        for k in 0..n {
            ur.values_mut()[id * n + k] = u.node_value(pid, k);
        }
    }
    let whole = SubSquare {
        i0: 0,
        i1: sub.cells()[0],
        j0: 0,
        j1: sub.cells()[1],
    };
    let p = params.p();
    let lhs = Samples::collect(&ur.sub(&v)?, &whole).mean_of(|g| g.powf(p));
    let energy_u = Samples::collect(&ur, &whole).mean_of(|g| g.powf(p) + 1.0);
    let energy_v = Samples::collect(&v, &whole).mean_of(|g| g.powf(p));
    let alpha0 = holder.exponent.min(holder.exponent * (p - 1.0));
    let scale = rho.powf(alpha0);
    Ok(ComparisonReport {
        rho,
        effective_rho: sq.effective_radius(&grid),
        frozen,
        alpha0,
        lhs,
        energy_u,
        energy_v,
        rhs_shape: scale * energy_u,
        ratio: lhs / (scale * energy_u),
        energy_ratio: energy_v / energy_u,
        scaled_lhs: lhs / scale,
    })
}

/// [`compare_homogeneous`] over several radii, in parallel.
pub fn comparison_sweep(
    u: &FEFunction,
    center: Point,
    radii: &[f64],
    params: FluxParams,
    a: &CoefficientField,
    cfg: &SolverConfig,
) -> Result<Vec<ComparisonReport>> {
    radii
        .par_iter()
        .map(|&rho| compare_homogeneous(u, center, rho, params, a, cfg))
        .collect()
}

/// Energy decay between two nested sub-squares:
/// `int_{rho} (|grad u|^p + 1) <= C (rho / r)^kappa int_{r} (|grad u|^p + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub rho: f64,
    pub r: f64,
    pub kappa: f64,
    pub inner: f64,
    pub outer: f64,
    /// Smallest admissible `C`.
    pub constant: f64,
}

pub fn decay_estimate(
    u: &FEFunction,
    center: Point,
    rho: f64,
    r: f64,
    p: f64,
    kappa: f64,
) -> Result<DecayEstimate> {
    check_p(p)?;
    if !(rho <= r) {
        return Err(Error::Domain(format!("need rho <= r, got {rho} > {r}")));
    }
    let grid = u.grid();
    let integral = |radius: f64| -> Result<(f64, f64)> {
        let sq = SubSquare::resolve(grid, center, radius)?;
        let s = Samples::collect(u, &sq);
        let area = grid.cell_area() * sq.n_cells() as f64;
        Ok((
            s.mean_of(|g| g.powf(p) + 1.0) * area,
            sq.effective_radius(grid),
        ))
    };
    let (inner, er) = integral(rho)?;
    let (outer, eo) = integral(r)?;
    Ok(DecayEstimate {
        rho,
        r,
        kappa,
        inner,
        outer,
        constant: inner / outer / (er / eo).powf(kappa),
    })
}
