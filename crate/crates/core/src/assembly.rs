//! Realified weak-form assembly on a [`RectGrid`]: residual, lagged-weight
//! (Picard) operator, Newton Jacobian and the linearized parameter system.
//!
//! Unknowns are the interior nodal values; DOF `(k * N + c) * 2 + part`
//! holds the real (`part = 0`) or imaginary (`part = 1`) part of component
//! `c` at interior node `k`. Residual row `(j, c, 0)` is the real part of
//! `r_{j,c} = int (a mu d u_c - F_c) . grad phi_j`, row `(j, c, 1)` its
//! imaginary part, i.e. the test functions `phi_j` and `i phi_j`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::coefficients::{CoefficientField, SourceField};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::{shape_gradients, FEFunction, Point, QuadRule, RectGrid};
use crate::structure::FluxParams;

/// Floor applied to `|grad u|^2` inside the weight when the singular case
/// (`p < 2`, `eps = 0`) is explicitly allowed.
pub const WEIGHT_FLOOR: f64 = f64::EPSILON * f64::EPSILON;

/// Floor applied to `|grad u|^2` in the linearizations when `p > 2` and
/// `eps = 0`, where the weight vanishes on flat cells. The residual is
/// unaffected.
pub const LINEARIZATION_FLOOR: f64 = 1e-12;

const NQ: usize = 4;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// The discrete weak form of `-div(a mu(grad u) grad u) = -div F` with
/// coefficient and source sampled at the 2x2 Gauss points of every cell.
#[derive(Clone, Debug)]
pub struct WeakForm {
    grid: RectGrid,
    params: FluxParams,
    ncomp: usize,
    coeff: Vec<Complex64>,
    source: Vec<Complex64>,
    source_is_zero: bool,
    qweights: [f64; NQ],
    dshape: [[[f64; 2]; 4]; NQ],
    floor: Option<f64>,
}

/// Per-quadrature-point data shared by the operator kernels.
pub(crate) struct QpData<'a> {
    pub a: Complex64,
    pub weight: f64,
    /// `mu = (eps^2 + |G|^2)^{(p-2)/2}`.
    pub mu: f64,
    /// `(eps^2 + |G|^2)^{(p-4)/2}`, zero when `p = 2`.
    pub w4: f64,
    /// `proj[l * N + k] = sum_d G_{k,d} dN_l/dx_d`.
    pub proj: &'a [Complex64],
    /// `g[l][m] = grad N_l . grad N_m`.
    pub g: &'a [[f64; 4]; 4],
}

impl WeakForm {
    pub fn new(
        grid: RectGrid,
        coeff: &CoefficientField,
        source: &SourceField,
        params: FluxParams,
        allow_singular: bool,
    ) -> Result<Self> {
        let ncomp = source.ncomp();
        let pts = qp_points(&grid);
        let coeff: Vec<Complex64> = pts
            .par_iter()
            .map(|x| coeff.eval_checked(*x))
            .collect::<Result<_>>()?;
        let source_vals: Vec<Complex64> = if source.is_zero() {
            vec![ZERO; pts.len() * ncomp * 2]
        } else {
            let per_point: Vec<Vec<Complex64>> = pts
                .par_iter()
                .map(|x| {
                    let f = source.eval_checked(*x)?;
                    Ok((0..ncomp)
                        .flat_map(|k| [f.get(k, 0), f.get(k, 1)])
                        .collect())
                })
                .collect::<Result<_>>()?;
            per_point.concat()
        };
        let rule = QuadRule::gauss2();
        let area = grid.cell_area();
        let h = grid.spacing();
        let mut qweights = [0.0; NQ];
        let mut dshape = [[[0.0; 2]; 4]; NQ];
        for q in 0..NQ {
            qweights[q] = rule.weights()[q] * area;
            dshape[q] = shape_gradients(rule.points()[q], h);
        }
        let floor = if params.is_singular() && allow_singular {
            Some(WEIGHT_FLOOR)
        } else {
            None
        };
        Ok(Self {
            grid,
            params,
            ncomp,
            coeff,
            source: source_vals,
            source_is_zero: source.is_zero(),
            qweights,
            dshape,
            floor,
        })
    }

    pub fn grid(&self) -> &RectGrid {
        &self.grid
    }

    pub fn params(&self) -> FluxParams {
        self.params
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.ncomp * self.grid.n_interior()
    }

    /// Coefficient values at the quadrature points, cell-major.
    pub fn coefficient_values(&self) -> &[Complex64] {
        &self.coeff
    }

    pub fn source_is_zero(&self) -> bool {
        self.source_is_zero
    }

    pub fn quadrature_weights(&self) -> [f64; NQ] {
        self.qweights
    }

    /// Band widths of the realified operators.
    pub fn bandwidth(&self) -> usize {
        let b = 2 * self.ncomp;
        let w = self.grid.cells()[0].saturating_sub(1);
        (w + 1) * b + b - 1
    }

    /// Effective `|grad u|^2` inside the weight.
    #[inline]
    fn floored(&self, s: f64) -> f64 {
        match self.floor {
            Some(f) => s.max(f),
            None => s,
        }
    }

    #[inline]
    fn linearization_arg(&self, s: f64) -> f64 {
        let s = self.floored(s);
        if self.params.eps() == 0.0 && self.params.p() > 2.0 {
            s.max(LINEARIZATION_FLOOR)
        } else {
            s
        }
    }

    fn check_compatible(&self, u: &FEFunction) -> Result<()> {
        if *u.grid() != self.grid || u.ncomp() != self.ncomp {
            return Err(Error::dimension(
                format!("{:?} grid with N = {}", self.grid.cells(), self.ncomp),
                format!("{:?} grid with N = {}", u.grid().cells(), u.ncomp()),
            ));
        }
        Ok(())
    }

    /// Gradient `G_{k,d}` of `u` at quadrature point `q` of cell `(i, j)`,
    /// written to `out[k * 2 + d]`.
    #[inline]
    pub(crate) fn qp_gradient(
        &self,
        u: &FEFunction,
        i: usize,
        j: usize,
        q: usize,
        out: &mut [Complex64],
    ) {
        let nodes = self.grid.cell_nodes(i, j);
        let n = self.ncomp;
        out.iter_mut().for_each(|v| *v = ZERO);
        for (l, &id) in nodes.iter().enumerate() {
            let dn = self.dshape[q][l];
            for k in 0..n {
                let v = u.node_value(id, k);
                out[k * 2] += v * dn[0];
                out[k * 2 + 1] += v * dn[1];
            }
        }
    }

    /// Gradients of `u` at all quadrature points, `[(cell * 4 + q) * 2N + k * 2 + d]`.
    pub fn gradients(&self, u: &FEFunction) -> Result<Vec<Complex64>> {
        self.check_compatible(u)?;
        let n2 = 2 * self.ncomp;
        let nx = self.grid.cells()[0];
        let mut out = vec![ZERO; self.grid.n_cells() * NQ * n2];
        out.par_chunks_mut(NQ * n2)
            .enumerate()
            .for_each(|(cell, chunk)| {
                let (i, j) = (cell % nx, cell / nx);
                for q in 0..NQ {
                    self.qp_gradient(u, i, j, q, &mut chunk[q * n2..(q + 1) * n2]);
                }
            });
        Ok(out)
    }

    /// Cells with `|grad u|^2 <= threshold` at some quadrature point.
    pub fn flat_cells(&self, u: &FEFunction, threshold: f64) -> Result<Vec<(usize, usize)>> {
        let grads = self.gradients(u)?;
        let n2 = 2 * self.ncomp;
        let nx = self.grid.cells()[0];
        Ok(grads
            .chunks(NQ * n2)
            .enumerate()
            .filter(|(_, c)| {
                c.chunks(n2)
                    .any(|g| g.iter().map(|v| v.norm_sqr()).sum::<f64>() <= threshold)
            })
            .map(|(cell, _)| (cell % nx, cell / nx))
            .collect())
    }

    /// Cells with a vanishing gradient at some quadrature point, reported
    /// only in the unfloored singular case.
    pub fn degenerate_cells(&self, u: &FEFunction) -> Result<Vec<(usize, usize)>> {
        if !self.params.is_singular() || self.floor.is_some() {
            return Ok(Vec::new());
        }
        self.flat_cells(u, 0.0)
    }

    /// Cells where the singular-case floor is active.
    pub fn floored_cells(&self, u: &FEFunction) -> Result<usize> {
        match self.floor {
            Some(f) => Ok(self.flat_cells(u, f)?.len()),
            None => Ok(0),
        }
    }

    fn scatter_rows(&self, cell: (usize, usize)) -> [Option<usize>; 4] {
        self.grid
            .cell_nodes(cell.0, cell.1)
            .map(|id| self.grid.interior_index(id))
    }

    /// Realified residual vector.
    pub fn residual(&self, u: &FEFunction) -> Result<Vec<f64>> {
        self.check_compatible(u)?;
        let n = self.ncomp;
        let n2 = 2 * n;
        let nx = self.grid.cells()[0];
        let locals: Vec<Vec<Complex64>> = (0..self.grid.n_cells())
            .into_par_iter()
            .map(|cell| {
                let (i, j) = (cell % nx, cell / nx);
                let mut local = vec![ZERO; 4 * n];
                let mut g = vec![ZERO; n2];
                for q in 0..NQ {
                    self.qp_gradient(u, i, j, q, &mut g);
                    let idx = cell * NQ + q;
                    let a = self.coeff[idx];
                    let s: f64 = g.iter().map(|v| v.norm_sqr()).sum();
                    let s_eff = self.floored(s);
                    let mu = if s_eff == 0.0 {
                        0.0
                    } else {
                        self.params.weight(s_eff)
                    };
                    let f = &self.source[idx * n2..(idx + 1) * n2];
                    let wq = self.qweights[q];
                    for l in 0..4 {
                        let dn = self.dshape[q][l];
                        for k in 0..n {
                            let flux_x = if mu == 0.0 { ZERO } else { a * mu * g[2 * k] };
                            let flux_y = if mu == 0.0 {
                                ZERO
                            } else {
                                a * mu * g[2 * k + 1]
                            };
                            local[l * n + k] += wq
                                * ((flux_x - f[2 * k]) * dn[0] + (flux_y - f[2 * k + 1]) * dn[1]);
                        }
                    }
                }
                local
            })
            .collect();
        let mut r = vec![0.0; self.n_dofs()];
        for (cell, local) in locals.iter().enumerate() {
            let rows = self.scatter_rows((cell % nx, cell / nx));
            for (l, row) in rows.iter().enumerate() {
                if let Some(k) = row {
                    for c in 0..n {
                        let v = local[l * n + c];
                        r[2 * (k * n + c)] += v.re;
                        r[2 * (k * n + c) + 1] += v.im;
                    }
                }
            }
        }
        Ok(r)
    }

    /// Sup-norm of the residual.
    pub fn residual_norm(&self, u: &FEFunction) -> Result<f64> {
        Ok(sup_norm(&self.residual(u)?))
    }

    /// Generic realified operator assembly. `kernel(qp, l, k, m, c)` returns
    /// the complex row-pair values `(x column, y column)` of the coupling of
    /// test `(l, k)` with trial `(m, c)` for the trial value `x + i y`.
    pub(crate) fn assemble_operator<K>(
        &self,
        u: &FEFunction,
        linearization: bool,
        kernel: K,
    ) -> Result<BandMatrix>
    where
        K: Fn(&QpData<'_>, usize, usize, usize, usize) -> (Complex64, Complex64) + Sync,
    {
        self.check_compatible(u)?;
        if linearization {
            let bad = self.degenerate_cells(u)?;
            if !bad.is_empty() {
                return Err(Error::Degenerate { cells: bad });
            }
        }
        let n = self.ncomp;
        let n2 = 2 * n;
        let ld = 8 * n;
        let nx = self.grid.cells()[0];
        let p = self.params.p();
        let locals: Vec<Vec<f64>> = (0..self.grid.n_cells())
            .into_par_iter()
            .map(|cell| {
                let (i, j) = (cell % nx, cell / nx);
                let mut local = vec![0.0; ld * ld];
                let mut grad = vec![ZERO; n2];
                let mut proj = vec![ZERO; 4 * n];
                for q in 0..NQ {
                    self.qp_gradient(u, i, j, q, &mut grad);
                    let s: f64 = grad.iter().map(|v| v.norm_sqr()).sum();
                    let s_eff = self.linearization_arg(s);
                    let dn = &self.dshape[q];
                    for l in 0..4 {
                        for k in 0..n {
                            proj[l * n + k] = grad[2 * k] * dn[l][0] + grad[2 * k + 1] * dn[l][1];
                        }
                    }
                    let mut g = [[0.0; 4]; 4];
                    for l in 0..4 {
                        for m in 0..4 {
                            g[l][m] = dn[l][0] * dn[m][0] + dn[l][1] * dn[m][1];
                        }
                    }
                    let data = QpData {
                        a: self.coeff[cell * NQ + q],
                        weight: self.qweights[q],
                        mu: self.params.weight(s_eff),
                        w4: if p == 2.0 {
                            0.0
                        } else {
                            self.params.weight_derivative_factor(s_eff)
                        },
                        proj: &proj,
                        g: &g,
                    };
                    for l in 0..4 {
                        for k in 0..n {
                            let row = 2 * (l * n + k);
                            for m in 0..4 {
                                for c in 0..n {
                                    let col = 2 * (m * n + c);
                                    let (vx, vy) = kernel(&data, l, k, m, c);
                                    local[row * ld + col] += vx.re;
                                    local[(row + 1) * ld + col] += vx.im;
                                    local[row * ld + col + 1] += vy.re;
                                    local[(row + 1) * ld + col + 1] += vy.im;
                                }
                            }
                        }
                    }
                }
                local
            })
            .collect();
        let bw = self.bandwidth();
        let mut a = BandMatrix::zeros(self.n_dofs(), bw, bw);
        for (cell, local) in locals.iter().enumerate() {
            let idx = self.scatter_rows((cell % nx, cell / nx));
            for (l, rl) in idx.iter().enumerate() {
                let Some(rk) = rl else { continue };
                for (m, cm) in idx.iter().enumerate() {
                    let Some(ck) = cm else { continue };
                    for k in 0..n {
                        for c in 0..n {
                            for pr in 0..2 {
                                for pc in 0..2 {
                                    let lr = 2 * (l * n + k) + pr;
                                    let lc = 2 * (m * n + c) + pc;
                                    a.add(
                                        2 * (rk * n + k) + pr,
                                        2 * (ck * n + c) + pc,
                                        local[lr * ld + lc],
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(a)
    }

    /// Lagged-weight operator `w -> int a mu(grad u) <grad w, grad phi>`.
    /// Applied to the interior values of `u` it reproduces the flux part of
    /// the residual.
    pub fn picard_operator(&self, u: &FEFunction) -> Result<BandMatrix> {
        self.assemble_operator(u, true, |d, l, k, m, c| {
            if k != c {
                return (ZERO, ZERO);
            }
            let v = d.a * (d.weight * d.mu * d.g[l][m]);
            (v, I * v)
        })
    }

    /// Real Jacobian of [`WeakForm::residual`] with respect to the realified DOFs.
    pub fn jacobian(&self, u: &FEFunction) -> Result<BandMatrix> {
        let p = self.params.p();
        let n = self.ncomp;
        self.assemble_operator(u, true, move |d, l, k, m, c| {
            let gamma = d.proj[l * n + k];
            let beta = d.proj[m * n + c];
            let mu2 = (p - 2.0) * d.w4;
            let diag = if k == c { d.mu * d.g[l][m] } else { 0.0 };
            let aw = d.a * d.weight;
            let vx = aw * (diag + mu2 * beta.re * gamma);
            let vy = aw * (I * diag + mu2 * beta.im * gamma);
            (vx, vy)
        })
    }

    /// Realified operator of the linearized parameter equation along a line
    /// with twist `theta_twist = conj(theta) / theta`.
    pub fn linearized_operator(
        &self,
        u: &FEFunction,
        theta_twist: Complex64,
    ) -> Result<BandMatrix> {
        let cp = 0.5 * (self.params.p() - 2.0);
        let n = self.ncomp;
        self.assemble_operator(u, true, move |d, l, k, m, c| {
            let gamma = d.proj[l * n + k];
            let beta = d.proj[m * n + c];
            let aw = d.a * d.weight;
            let diag = if k == c { d.mu * d.g[l][m] } else { 0.0 };
            let alpha = aw * (diag + cp * d.w4 * gamma * beta.conj());
            let twisted = theta_twist * aw * (cp * d.w4) * gamma * beta;
            (alpha + twisted, I * (alpha - twisted))
        })
    }

    /// Right-hand side `-int a' mu(grad u) <grad u, grad phi>` of the
    /// linearized equation, with `a'` sampled at the quadrature points.
    pub fn linearized_rhs(&self, u: &FEFunction, a_prime: &[Complex64]) -> Result<Vec<f64>> {
        self.check_compatible(u)?;
        if a_prime.len() != self.coeff.len() {
            return Err(Error::dimension(self.coeff.len(), a_prime.len()));
        }
        let n = self.ncomp;
        let n2 = 2 * n;
        let nx = self.grid.cells()[0];
        let mut r = vec![0.0; self.n_dofs()];
        let mut g = vec![ZERO; n2];
        for cell in 0..self.grid.n_cells() {
            let (i, j) = (cell % nx, cell / nx);
            let rows = self.scatter_rows((i, j));
            for q in 0..NQ {
                self.qp_gradient(u, i, j, q, &mut g);
                let s: f64 = g.iter().map(|v| v.norm_sqr()).sum();
                let mu = self.params.weight(self.linearization_arg(s));
                let ap = a_prime[cell * NQ + q];
                for (l, row) in rows.iter().enumerate() {
                    let Some(kk) = row else { continue };
                    let dn = self.dshape[q][l];
                    for k in 0..n {
                        let gamma = g[2 * k] * dn[0] + g[2 * k + 1] * dn[1];
                        let v = -self.qweights[q] * ap * mu * gamma;
                        r[2 * (kk * n + k)] += v.re;
                        r[2 * (kk * n + k) + 1] += v.im;
                    }
                }
            }
        }
        Ok(r)
    }

    /// Samples a scalar function at the quadrature points, cell-major.
    pub fn sample_scalar(&self, f: impl Fn(Point) -> Complex64 + Sync) -> Vec<Complex64> {
        qp_points(&self.grid).par_iter().map(|x| f(*x)).collect()
    }

    /// `int |grad u|^p` and `int (|F|^{p'} + 1)` by quadrature.
    pub fn energy_terms(&self, u: &FEFunction) -> Result<(f64, f64)> {
        let grads = self.gradients(u)?;
        let n2 = 2 * self.ncomp;
        let p = self.params.p();
        let pc = self.params.conjugate();
        let (mut energy, mut data) = (0.0, 0.0);
        for (idx, gq) in grads.chunks(n2).enumerate() {
            let w = self.qweights[idx % NQ];
            let s: f64 = gq.iter().map(|v| v.norm_sqr()).sum();
            let fs: f64 = self.source[idx * n2..(idx + 1) * n2]
                .iter()
                .map(|v| v.norm_sqr())
                .sum();
            energy += w * s.sqrt().powf(p);
            data += w * (fs.sqrt().powf(pc) + 1.0);
        }
        Ok((energy, data))
    }

    /// Terms of the discrete monotonicity inequality for two functions with
    /// equal boundary data: `Re sum a <A(grad u) - A(grad w), grad u - grad w>`
    /// and `sum (eps^2 + |grad u|^2 + |grad w|^2)^{(p-2)/2} |grad u - grad w|^2`.
    pub fn monotonicity_terms(&self, u: &FEFunction, w: &FEFunction) -> Result<(f64, f64)> {
        let gu = self.gradients(u)?;
        let gw = self.gradients(w)?;
        let n2 = 2 * self.ncomp;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (idx, (a_q, b_q)) in gu.chunks(n2).zip(gw.chunks(n2)).enumerate() {
            let wq = self.qweights[idx % NQ];
            let su: f64 = a_q.iter().map(|v| v.norm_sqr()).sum();
            let sw: f64 = b_q.iter().map(|v| v.norm_sqr()).sum();
            let mu_u = if su == 0.0 {
                0.0
            } else {
                self.params.weight(self.floored(su))
            };
            let mu_w = if sw == 0.0 {
                0.0
            } else {
                self.params.weight(self.floored(sw))
            };
            let mut pair = ZERO;
            let mut d2 = 0.0;
            for (x, y) in a_q.iter().zip(b_q) {
                let da = x * mu_u - y * mu_w;
                let dg = x - y;
                pair += da * dg.conj();
                d2 += dg.norm_sqr();
            }
            if d2 == 0.0 {
                continue;
            }
            lhs += wq * (self.coeff[idx] * pair).re;
            rhs += wq * self.params.weight(self.floored(su + sw)) * d2;
        }
        Ok((lhs, rhs))
    }
}

impl WeakForm {
    /// `sum_q w_q a^R mu(grad u) |grad v|^2`, the weighted Dirichlet energy
    /// of `v` entering the coercivity bound of the linearized operator.
    pub fn weighted_energy(&self, u: &FEFunction, v: &FEFunction) -> Result<f64> {
        let gu = self.gradients(u)?;
        let gv = self.gradients(v)?;
        let n2 = 2 * self.ncomp;
        Ok(gu
            .chunks(n2)
            .zip(gv.chunks(n2))
            .enumerate()
            .map(|(idx, (a, b))| {
                let s: f64 = a.iter().map(|z| z.norm_sqr()).sum();
                let mu = self.params.weight(self.linearization_arg(s));
                let d: f64 = b.iter().map(|z| z.norm_sqr()).sum();
                self.qweights[idx % NQ] * self.coeff[idx].re * mu * d
            })
            .sum())
    }
}

/// Physical 2x2 Gauss points of all cells, cell-major.
pub fn qp_points(grid: &RectGrid) -> Vec<Point> {
    let rule = QuadRule::gauss2();
    let mut out = Vec::with_capacity(grid.n_cells() * NQ);
    for (i, j) in grid.cell_iter() {
        out.extend(rule.points().iter().map(|r| grid.map_point(i, j, *r)));
    }
    out
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
