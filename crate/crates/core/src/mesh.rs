//! Uniform rectangular tensor meshes, bilinear nodal functions and
//! quadrature-based norms.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::complex_fields::CMat;
use crate::error::{Error, Result};

/// A point of the (two-dimensional) domain.
pub type Point = [f64; 2];

/// Spatial dimension of the mesh.
pub const DIM: usize = 2;

/// Uniform tensor mesh on `[x0, x1] x [y0, y1]`.
///
/// Nodes are numbered row-major, `id = j * (nx + 1) + i`; cell `(i, j)` has
/// corners `(i, j), (i+1, j), (i+1, j+1), (i, j+1)` in counter-clockwise order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectGrid {
    bounds: [[f64; 2]; 2],
    cells: [usize; 2],
}

impl RectGrid {
    pub fn new(bounds: [[f64; 2]; 2], cells: [usize; 2]) -> Result<Self> {
        for axis in 0..DIM {
            let [lo, hi] = bounds[axis];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Domain(format!(
                    "axis {axis}: need lo < hi, got [{lo}, {hi}]"
                )));
            }
            if cells[axis] == 0 {
                return Err(Error::Domain(format!(
                    "axis {axis}: need at least one cell"
                )));
            }
        }
        Ok(Self { bounds, cells })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new([[0.0, 1.0], [0.0, 1.0]], [n, n])
    }

    /// The cube `C_R = [-R, R]^2`.
    pub fn cube(radius: f64, n: usize) -> Result<Self> {
        Self::new([[-radius, radius], [-radius, radius]], [n, n])
    }

    pub fn bounds(&self) -> [[f64; 2]; 2] {
        self.bounds
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    pub fn spacing(&self) -> [f64; 2] {
        [
            (self.bounds[0][1] - self.bounds[0][0]) / self.cells[0] as f64,
            (self.bounds[1][1] - self.bounds[1][0]) / self.cells[1] as f64,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1]
    }

    pub fn diameter(&self) -> f64 {
        let dx = self.bounds[0][1] - self.bounds[0][0];
        let dy = self.bounds[1][1] - self.bounds[1][0];
        dx.hypot(dy)
    }

    pub fn nodes_per_axis(&self) -> [usize; 2] {
        [self.cells[0] + 1, self.cells[1] + 1]
    }

    pub fn n_nodes(&self) -> usize {
        (self.cells[0] + 1) * (self.cells[1] + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn n_interior(&self) -> usize {
        (self.cells[0].saturating_sub(1)) * (self.cells[1].saturating_sub(1))
    }

    #[inline]
    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.cells[0] + 1) + i
    }

    #[inline]
    pub fn node_ij(&self, id: usize) -> (usize, usize) {
        (id % (self.cells[0] + 1), id / (self.cells[0] + 1))
    }

    /// Coordinate of grid line `i` along `axis`; the last line is exactly `hi`.
    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let [lo, hi] = self.bounds[axis];
        if i == self.cells[axis] {
            hi
        } else {
            lo + (hi - lo) * (i as f64 / self.cells[axis] as f64)
        }
    }

    pub fn node_point(&self, id: usize) -> Point {
        let (i, j) = self.node_ij(id);
        [self.coord(0, i), self.coord(1, j)]
    }

    #[inline]
    pub fn is_boundary_ij(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.cells[0] || j == self.cells[1]
    }

    pub fn is_boundary(&self, id: usize) -> bool {
        let (i, j) = self.node_ij(id);
        self.is_boundary_ij(i, j)
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.n_nodes()).map(|id| self.is_boundary(id)).collect()
    }

    /// Position of an interior node among the unknowns (row-major over the
    /// interior), or `None` on the boundary.
    #[inline]
    pub fn interior_index(&self, id: usize) -> Option<usize> {
        let (i, j) = self.node_ij(id);
        if self.is_boundary_ij(i, j) {
            None
        } else {
            Some((j - 1) * (self.cells[0] - 1) + (i - 1))
        }
    }

    pub fn interior_node(&self, k: usize) -> usize {
        let w = self.cells[0] - 1;
        self.node_id(k % w + 1, k / w + 1)
    }

    /// Corner node ids of cell `(i, j)` in the local order 0..4.
    #[inline]
    pub fn cell_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        [
            self.node_id(i, j),
            self.node_id(i + 1, j),
            self.node_id(i + 1, j + 1),
            self.node_id(i, j + 1),
        ]
    }

    pub fn cell_origin(&self, i: usize, j: usize) -> Point {
        [self.coord(0, i), self.coord(1, j)]
    }

    /// Maps reference coordinates in `[0,1]^2` to the physical cell.
    #[inline]
    pub fn map_point(&self, i: usize, j: usize, reference: Point) -> Point {
        let h = self.spacing();
        let o = self.cell_origin(i, j);
        [o[0] + h[0] * reference[0], o[1] + h[1] * reference[1]]
    }

    /// Iterates over cells as `(i, j)` in row-major order.
    pub fn cell_iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nx = self.cells[0];
        (0..self.n_cells()).map(move |c| (c % nx, c / nx))
    }

    /// Sub-grid spanned by node ranges `[i0, i1] x [j0, j1]`.
    pub fn subgrid(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> Result<Self> {
        if i1 <= i0 || j1 <= j0 || i1 > self.cells[0] || j1 > self.cells[1] {
            return Err(Error::Domain(format!(
                "invalid sub-grid node range [{i0},{i1}]x[{j0},{j1}]"
            )));
        }
        Ok(Self {
            bounds: [
                [self.coord(0, i0), self.coord(0, i1)],
                [self.coord(1, j0), self.coord(1, j1)],
            ],
            cells: [i1 - i0, j1 - j0],
        })
    }
}

/// Tensor Gauss rule on the reference cell `[0,1]^2`; weights sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl QuadRule {
    /// Tensor Gauss-Legendre rule with `order` points per axis (1..=4).
    pub fn gauss(order: usize) -> Self {
        let (x, w): (&[f64], &[f64]) = match order {
            1 => (&[0.0], &[2.0]),
            2 => (
                &[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8],
                &[1.0, 1.0],
            ),
            3 => (
                &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
                &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
            ),
            4 => (
                &[
                    -0.861_136_311_594_052_6,
                    -0.339_981_043_584_856_3,
                    0.339_981_043_584_856_3,
                    0.861_136_311_594_052_6,
                ],
                &[
                    0.347_854_845_137_453_9,
                    0.652_145_154_862_546_1,
                    0.652_145_154_862_546_1,
                    0.347_854_845_137_453_9,
                ],
            ),
            _ => panic!("unsupported Gauss order {order}"),
        };
        let mut points = Vec::with_capacity(order * order);
        let mut weights = Vec::with_capacity(order * order);
        for (b, wb) in x.iter().zip(w) {
            for (a, wa) in x.iter().zip(w) {
                points.push([0.5 * (a + 1.0), 0.5 * (b + 1.0)]);
                weights.push(0.25 * wa * wb);
            }
        }
        Self { points, weights }
    }

    /// The default 2x2 rule.
    pub fn gauss2() -> Self {
        Self::gauss(2)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Bilinear shape functions on the reference cell at `r`.
#[inline]
pub fn shape_values(r: Point) -> [f64; 4] {
    let (x, y) = (r[0], r[1]);
    [(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y]
}

/// Physical gradients of the four bilinear shape functions at reference point `r`.
#[inline]
pub fn shape_gradients(r: Point, h: [f64; 2]) -> [[f64; 2]; 4] {
    let (x, y) = (r[0], r[1]);
    [
        [-(1.0 - y) / h[0], -(1.0 - x) / h[1]],
        [(1.0 - y) / h[0], -x / h[1]],
        [y / h[0], x / h[1]],
        [-y / h[0], (1.0 - x) / h[1]],
    ]
}

/// A continuous bilinear `C^N`-valued function on a [`RectGrid`], stored as
/// nodal values `values[id * N + k]`.
///
/// Boundary node values are the Dirichlet data when `constrained` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct FEFunction {
    grid: RectGrid,
    ncomp: usize,
    values: Vec<Complex64>,
    constrained: bool,
}

impl FEFunction {
    pub fn zeros(grid: RectGrid, ncomp: usize) -> Self {
        assert!(ncomp >= 1);
        Self {
            grid,
            ncomp,
            values: vec![Complex64::new(0.0, 0.0); grid.n_nodes() * ncomp],
            constrained: true,
        }
    }

    pub fn from_values(grid: RectGrid, ncomp: usize, values: Vec<Complex64>) -> Result<Self> {
        if ncomp == 0 || values.len() != grid.n_nodes() * ncomp {
            return Err(Error::dimension(
                format!("{} nodal values", grid.n_nodes() * ncomp),
                values.len(),
            ));
        }
        Ok(Self {
            grid,
            ncomp,
            values,
            constrained: true,
        })
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(grid: RectGrid, ncomp: usize, f: impl Fn(Point) -> Vec<Complex64>) -> Self {
        let mut out = Self::zeros(grid, ncomp);
        for id in 0..grid.n_nodes() {
            let v = f(grid.node_point(id));
            out.values[id * ncomp..(id + 1) * ncomp].copy_from_slice(&v[..ncomp]);
        }
        out
    }

    pub fn grid(&self) -> &RectGrid {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn is_constrained(&self) -> bool {
        self.constrained
    }

    /// Marks the function as carrying no Dirichlet data (free boundary).
    pub fn into_unconstrained(mut self) -> Self {
        self.constrained = false;
        self
    }

    #[inline]
    pub fn node_value(&self, id: usize, k: usize) -> Complex64 {
        self.values[id * self.ncomp + k]
    }

    /// Number of realified unknowns `2 N (#interior nodes)`.
    pub fn n_dofs(&self) -> usize {
        2 * self.ncomp * self.grid.n_interior()
    }

    /// Realified interior unknowns, ordered `(interior node, component, re/im)`.
    pub fn interior_dofs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_dofs());
        for k in 0..self.grid.n_interior() {
            let id = self.grid.interior_node(k);
            for c in 0..self.ncomp {
                let v = self.node_value(id, c);
                out.push(v.re);
                out.push(v.im);
            }
        }
        out
    }

    pub fn set_interior_dofs(&mut self, dofs: &[f64]) {
        assert_eq!(dofs.len(), self.n_dofs());
        for k in 0..self.grid.n_interior() {
            let id = self.grid.interior_node(k);
            for c in 0..self.ncomp {
                let base = 2 * (k * self.ncomp + c);
                self.values[id * self.ncomp + c] = Complex64::new(dofs[base], dofs[base + 1]);
            }
        }
    }

    /// `self + scale * dofs` on interior nodes.
    pub fn add_interior(&mut self, dofs: &[f64], scale: f64) {
        assert_eq!(dofs.len(), self.n_dofs());
        for k in 0..self.grid.n_interior() {
            let id = self.grid.interior_node(k);
            for c in 0..self.ncomp {
                let base = 2 * (k * self.ncomp + c);
                self.values[id * self.ncomp + c] +=
                    Complex64::new(scale * dofs[base], scale * dofs[base + 1]);
            }
        }
    }

    fn check_compatible(&self, other: &FEFunction) -> Result<()> {
        if self.grid != other.grid || self.ncomp != other.ncomp {
            return Err(Error::dimension(
                format!("{:?} with N={}", self.grid.cells(), self.ncomp),
                format!("{:?} with N={}", other.grid.cells(), other.ncomp),
            ));
        }
        Ok(())
    }

    pub fn sub(&self, other: &FEFunction) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn add(&self, other: &FEFunction) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    /// Values at a reference point of cell `(i, j)`.
    pub fn value_in_cell(&self, i: usize, j: usize, r: Point, out: &mut [Complex64]) {
        let nodes = self.grid.cell_nodes(i, j);
        let phi = shape_values(r);
        for (k, o) in out.iter_mut().enumerate().take(self.ncomp) {
            *o = nodes
                .iter()
                .zip(phi)
                .map(|(&id, s)| self.node_value(id, k) * s)
                .sum();
        }
    }

    /// Gradient (an `N x 2` complex matrix) at a reference point of cell `(i, j)`.
    pub fn gradient_in_cell(&self, i: usize, j: usize, r: Point, out: &mut CMat) {
        let nodes = self.grid.cell_nodes(i, j);
        let h = self.grid.spacing();
        // Written in difference form so that gradients of affine data with
        // exactly representable nodal values come out bit-identical.
        let (x, y) = (r[0], r[1]);
        for k in 0..self.ncomp {
            let v0 = self.node_value(nodes[0], k);
            let v1 = self.node_value(nodes[1], k);
            let v2 = self.node_value(nodes[2], k);
            let v3 = self.node_value(nodes[3], k);
            let dx_bottom = v1 - v0;
            let dx_top = v2 - v3;
            let dy_left = v3 - v0;
            let dy_right = v2 - v1;
            let gx = (dx_bottom + (dx_top - dx_bottom) * y) / h[0];
            let gy = (dy_left + (dy_right - dy_left) * x) / h[1];
            out.set(k, 0, gx);
            out.set(k, 1, gy);
        }
    }
}

/// Gradient of `f` at quadrature point `qp` of cell `(i, j)`.
pub fn gradient_at(f: &FEFunction, cell: (usize, usize), qp: Point) -> Result<CMat> {
    let [nx, ny] = f.grid.cells();
    if cell.0 >= nx || cell.1 >= ny {
        return Err(Error::Domain(format!(
            "cell {cell:?} outside {nx}x{ny} grid"
        )));
    }
    if !(0.0..=1.0).contains(&qp[0]) || !(0.0..=1.0).contains(&qp[1]) {
        return Err(Error::Domain(format!(
            "reference point {qp:?} outside [0,1]^2"
        )));
    }
    let mut g = CMat::zeros(f.ncomp, DIM);
    f.gradient_in_cell(cell.0, cell.1, qp, &mut g);
    Ok(g)
}

/// Discrete norms of an [`FEFunction`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    /// `(int |f|^2 + |grad f|^2)^{1/2}`.
    pub w12: f64,
    /// `(int |grad f|^p)^{1/p}`.
    pub lp_grad: f64,
    /// Largest `|grad f|` over quadrature points.
    pub sup_grad: f64,
}

/// 2x2 Gauss evaluation of the norms of `f` (exact for the `W^{1,2}` part).
pub fn norms(f: &FEFunction, p: f64) -> Norms {
    let grid = f.grid;
    let rule = QuadRule::gauss2();
    let area = grid.cell_area();
    let mut g = CMat::zeros(f.ncomp, DIM);
    let mut v = vec![Complex64::new(0.0, 0.0); f.ncomp];
    let (mut l2, mut h1, mut lp, mut sup) = (0.0, 0.0, 0.0, 0.0f64);
    for (i, j) in grid.cell_iter() {
        for (r, w) in rule.points().iter().zip(rule.weights()) {
            f.gradient_in_cell(i, j, *r, &mut g);
            f.value_in_cell(i, j, *r, &mut v);
            let g2 = g.norm_sqr();
            let wt = w * area;
            l2 += wt * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            h1 += wt * g2;
            lp += wt * g2.sqrt().powf(p);
            sup = sup.max(g2.sqrt());
        }
    }
    Norms {
        w12: (l2 + h1).sqrt(),
        lp_grad: lp.powf(1.0 / p),
        sup_grad: sup,
    }
}

/// `W^{1,2}` distance between two functions on the same grid.
pub fn w12_distance(a: &FEFunction, b: &FEFunction) -> Result<f64> {
    Ok(norms(&a.sub(b)?, 2.0).w12)
}

/// Discrete lifting of boundary data: nodal interpolant of `g` on the
/// boundary, zero at interior nodes.
pub fn lift_boundary(
    grid: RectGrid,
    ncomp: usize,
    g: impl Fn(Point) -> Vec<Complex64>,
) -> FEFunction {
    let mut out = FEFunction::zeros(grid, ncomp);
    for id in 0..grid.n_nodes() {
        if grid.is_boundary(id) {
            let v = g(grid.node_point(id));
            out.values[id * ncomp..(id + 1) * ncomp].copy_from_slice(&v[..ncomp]);
        }
    }
    out
}

/// Writes the node dump `node_id,x,y,re_1..re_N,im_1..im_N`.
pub fn write_csv(f: &FEFunction, mut out: impl Write) -> Result<()> {
    let n = f.ncomp;
    let mut header = String::from("node_id,x,y");
    for k in 1..=n {
        header.push_str(&format!(",re_{k}"));
    }
    for k in 1..=n {
        header.push_str(&format!(",im_{k}"));
    }
    writeln!(out, "{header}")?;
    for id in 0..f.grid.n_nodes() {
        let [x, y] = f.grid.node_point(id);
        let mut line = format!("{id},{x:e},{y:e}");
        for k in 0..n {
            line.push_str(&format!(",{:e}", f.node_value(id, k).re));
        }
        for k in 0..n {
            line.push_str(&format!(",{:e}", f.node_value(id, k).im));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a node dump written by [`write_csv`], reconstructing the grid from
/// the node coordinates.
pub fn read_csv(input: impl BufRead) -> Result<FEFunction> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty solution dump".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 5 || cols[..3] != ["node_id", "x", "y"] || !(cols.len() - 3).is_multiple_of(2) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let ncomp = (cols.len() - 3) / 2;
    let mut rows: Vec<(usize, f64, f64, Vec<Complex64>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields",
                lineno + 2,
                cols.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let id = fields[0]
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
        let mut vals = Vec::with_capacity(ncomp);
        for k in 0..ncomp {
            vals.push(Complex64::new(
                num(fields[3 + k])?,
                num(fields[3 + ncomp + k])?,
            ));
        }
        rows.push((id, num(fields[1])?, num(fields[2])?, vals));
    }
    let distinct = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = distinct(rows.iter().map(|r| r.1).collect());
    let ys = distinct(rows.iter().map(|r| r.2).collect());
    if xs.len() < 2 || ys.len() < 2 || xs.len() * ys.len() != rows.len() {
        return Err(Error::Parse(
            "node coordinates do not form a tensor grid".into(),
        ));
    }
    let grid = RectGrid::new(
        [[xs[0], xs[xs.len() - 1]], [ys[0], ys[ys.len() - 1]]],
        [xs.len() - 1, ys.len() - 1],
    )?;
    let mut values = vec![Complex64::new(0.0, 0.0); grid.n_nodes() * ncomp];
    let mut seen = vec![false; grid.n_nodes()];
    for (id, x, y, vals) in rows {
        if id >= grid.n_nodes() || seen[id] {
            return Err(Error::Parse(format!("invalid or duplicate node id {id}")));
        }
        let [gx, gy] = grid.node_point(id);
        let tol = 1e-9 * grid.diameter();
        if (gx - x).abs() > tol || (gy - y).abs() > tol {
            return Err(Error::Parse(format!("node {id} is not on a uniform grid")));
        }
        seen[id] = true;
        values[id * ncomp..(id + 1) * ncomp].copy_from_slice(&vals);
    }
    FEFunction::from_values(grid, ncomp, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grid_layout() {
        let g = RectGrid::new([[0.0, 2.0], [-1.0, 1.0]], [4, 2]).unwrap();
        assert_eq!(g.spacing(), [0.5, 1.0]);
        assert_eq!(g.n_nodes(), 15);
        assert_eq!(g.n_interior(), 3);
        let mask = g.boundary_mask();
        assert_eq!(mask.iter().filter(|b| !**b).count(), 3);
        for k in 0..g.n_interior() {
            assert_eq!(g.interior_index(g.interior_node(k)), Some(k));
        }
        assert_eq!(g.node_point(14), [2.0, 1.0]);
        assert!(RectGrid::new([[1.0, 1.0], [0.0, 1.0]], [2, 2]).is_err());
        assert!(RectGrid::new([[0.0, 1.0], [0.0, 1.0]], [0, 2]).is_err());
    }

    #[test]
    fn quadrature_weights_and_exactness() {
        for order in 1..=4 {
            let q = QuadRule::gauss(order);
            assert_relative_eq!(q.weights().iter().sum::<f64>(), 1.0, max_relative = 1e-15);
        }
        // x^3 y^2 over [0,1]^2 = 1/12, exact for the 2x2 rule
        let q = QuadRule::gauss2();
        let s: f64 = q
            .points()
            .iter()
            .zip(q.weights())
            .map(|(p, w)| w * p[0].powi(3) * p[1].powi(2))
            .sum();
        assert_relative_eq!(s, 1.0 / 12.0, max_relative = 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let g = RectGrid::unit_square(4).unwrap();
        let konst = FEFunction::interpolate(g, 1, |_| vec![c(2.5, -1.0)]);
        let zero = CMat::zeros(1, 2);
        assert_eq!(gradient_at(&konst, (1, 2), [0.3, 0.8]).unwrap(), zero);

        let lin = FEFunction::interpolate(g, 1, |x| vec![c(x[0], x[1])]);
        let gr = gradient_at(&lin, (2, 1), [0.2, 0.7]).unwrap();
        assert_relative_eq!(gr.get(0, 0).re, 1.0, max_relative = 1e-14);
        assert_relative_eq!(gr.get(0, 1).im, 1.0, max_relative = 1e-14);
        assert!(gr.get(0, 0).im.abs() < 1e-14 && gr.get(0, 1).re.abs() < 1e-14);

        let prod = FEFunction::interpolate(g, 1, |x| vec![c(x[0] * x[1], 0.0)]);
        let gr = gradient_at(&prod, (1, 3), [0.5, 0.5]).unwrap();
        let center = g.map_point(1, 3, [0.5, 0.5]);
        assert_relative_eq!(gr.get(0, 0).re, center[1], max_relative = 1e-14);
        assert_relative_eq!(gr.get(0, 1).re, center[0], max_relative = 1e-14);

        assert!(gradient_at(&prod, (4, 0), [0.5, 0.5]).is_err());
        assert!(gradient_at(&prod, (0, 0), [1.5, 0.5]).is_err());
    }

    #[test]
    fn norms_examples() {
        let g = RectGrid::unit_square(8).unwrap();
        let zero = FEFunction::zeros(g, 2);
        assert_eq!(
            norms(&zero, 3.0),
            Norms {
                w12: 0.0,
                lp_grad: 0.0,
                sup_grad: 0.0
            }
        );

        let f = FEFunction::interpolate(g, 1, |x| vec![c(x[0], 0.0)]);
        for p in [1.5, 2.0, 3.0] {
            let n = norms(&f, p);
            assert_relative_eq!(n.lp_grad, 1.0, max_relative = 1e-13);
            assert_relative_eq!(n.sup_grad, 1.0, max_relative = 1e-13);
        }
        // int x^2 + 1 over the unit square
        assert_relative_eq!(
            norms(&f, 2.0).w12,
            (4.0f64 / 3.0).sqrt(),
            max_relative = 1e-13
        );

        let h = FEFunction::interpolate(g, 1, |x| vec![c(x[0] * x[1], x[0] - x[1])]);
        let lambda = c(-0.6, 0.8) * 2.0;
        let a = norms(&h, 3.0);
        let b = norms(&h.scale(lambda), 3.0);
        assert_relative_eq!(b.w12, 2.0 * a.w12, max_relative = 1e-13);
        assert_relative_eq!(b.lp_grad, 2.0 * a.lp_grad, max_relative = 1e-13);
        assert_relative_eq!(b.sup_grad, 2.0 * a.sup_grad, max_relative = 1e-13);
    }

    #[test]
    fn lifting() {
        let g = RectGrid::unit_square(5).unwrap();
        let zero = lift_boundary(g, 1, |_| vec![c(0.0, 0.0)]);
        assert!(zero.values().iter().all(|v| *v == c(0.0, 0.0)));

        let konst = lift_boundary(g, 2, |_| vec![c(1.0, 2.0), c(-3.0, 0.5)]);
        for id in 0..g.n_nodes() {
            let expect = if g.is_boundary(id) {
                c(-3.0, 0.5)
            } else {
                c(0.0, 0.0)
            };
            assert_eq!(konst.node_value(id, 1), expect);
        }

        let lin = lift_boundary(g, 1, |x| vec![c(x[0], x[1])]);
        for id in 0..g.n_nodes() {
            let [x, y] = g.node_point(id);
            if g.is_boundary(id) {
                assert_eq!(lin.node_value(id, 0), c(x, y));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = RectGrid::new([[-1.0, 1.0], [0.0, 0.5]], [4, 3]).unwrap();
        let f = FEFunction::interpolate(g, 2, |x| {
            vec![c(x[0].sin(), x[1] * 3.0), c(1.0 / 3.0, -x[0] * x[1])]
        });
        let mut buf = Vec::new();
        write_csv(&f, &mut buf).unwrap();
        let back = read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.grid().cells(), g.cells());
        assert_eq!(back.values(), f.values());
        assert!(read_csv(std::io::Cursor::new("a,b\n1,2\n")).is_err());
    }

    #[test]
    fn dof_round_trip() {
        let g = RectGrid::unit_square(4).unwrap();
        let mut f = FEFunction::zeros(g, 2);
        let dofs: Vec<f64> = (0..f.n_dofs()).map(|k| k as f64).collect();
        f.set_interior_dofs(&dofs);
        assert_eq!(f.interior_dofs(), dofs);
        assert_eq!(f.n_dofs(), 2 * 2 * 9);
    }
}
