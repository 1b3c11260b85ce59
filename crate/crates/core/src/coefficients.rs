//! Complex coefficient fields `a(x)`, source fields `F(x)`, parametric
//! families `a(z, x)` and the pointwise admissibility checks.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex_fields::CMat;
use crate::error::{Error, Result};
use crate::mesh::{Point, QuadRule, RectGrid};
use crate::structure::{c1_of, c2_of};

pub type ScalarFn = Arc<dyn Fn(Point) -> Complex64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(Point) -> CMat + Send + Sync>;
pub type ParametricFn = Arc<dyn Fn(Complex64, Point) -> Complex64 + Send + Sync>;

/// Hölder metadata `[f]_{C^exponent} <= bound` of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderData {
    pub exponent: f64,
    pub bound: f64,
}

impl HolderData {
    pub fn new(exponent: f64, bound: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(Error::Domain(format!(
                "Hölder exponent must lie in (0,1), got {exponent}"
            )));
        }
        if !(bound >= 0.0) {
            return Err(Error::Domain(format!(
                "Hölder bound must be nonnegative, got {bound}"
            )));
        }
        Ok(Self { exponent, bound })
    }
}

/// A scalar complex coefficient with ellipticity bounds `0 < nu < L`.
#[derive(Clone)]
pub struct CoefficientField {
    eval: ScalarFn,
    nu: f64,
    upper: f64,
    holder: Option<HolderData>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("nu", &self.nu)
            .field("upper", &self.upper)
            .field("holder", &self.holder)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn new(
        eval: impl Fn(Point) -> Complex64 + Send + Sync + 'static,
        nu: f64,
        upper: f64,
    ) -> Result<Self> {
        if !(nu > 0.0 && upper > nu && upper.is_finite()) {
            return Err(Error::Domain(format!(
                "need 0 < nu < L, got nu = {nu}, L = {upper}"
            )));
        }
        Ok(Self {
            eval: Arc::new(eval),
            nu,
            upper,
            holder: None,
        })
    }

    pub fn constant(value: Complex64, nu: f64, upper: f64) -> Result<Self> {
        Ok(
            Self::new(move |_| value, nu, upper)?.with_holder(HolderData {
                exponent: 0.5,
                bound: 0.0,
            }),
        )
    }

    pub fn with_holder(mut self, holder: HolderData) -> Self {
        self.holder = Some(holder);
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < self.upper) {
            return Err(Error::Domain(format!(
                "need 0 < nu < L, got nu = {nu}, L = {}",
                self.upper
            )));
        }
        self.nu = nu;
        Ok(self)
    }

    #[inline]
    pub fn eval(&self, x: Point) -> Complex64 {
        (self.eval)(x)
    }

    /// Evaluates and rejects non-finite values.
    pub fn eval_checked(&self, x: Point) -> Result<Complex64> {
        let v = self.eval(x);
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { x: x[0], y: x[1] })
        }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn holder(&self) -> Option<HolderData> {
        self.holder
    }

    /// Complex conjugate field with the same bounds.
    pub fn conj(&self) -> Self {
        let eval = self.eval.clone();
        Self {
            eval: Arc::new(move |x| eval(x).conj()),
            ..self.clone()
        }
    }
}

/// A `C^{N x 2}`-valued source field.
#[derive(Clone)]
pub struct SourceField {
    eval: MatrixFn,
    ncomp: usize,
    holder: Option<HolderData>,
    zero: bool,
}

impl fmt::Debug for SourceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceField")
            .field("ncomp", &self.ncomp)
            .field("holder", &self.holder)
            .field("zero", &self.zero)
            .finish_non_exhaustive()
    }
}

impl SourceField {
    pub fn new(ncomp: usize, eval: impl Fn(Point) -> CMat + Send + Sync + 'static) -> Result<Self> {
        if ncomp == 0 || ncomp > crate::complex_fields::MAX_DIM {
            return Err(Error::dimension(
                format!("1..={}", crate::complex_fields::MAX_DIM),
                ncomp,
            ));
        }
        Ok(Self {
            eval: Arc::new(eval),
            ncomp,
            holder: None,
            zero: false,
        })
    }

    pub fn zero(ncomp: usize) -> Result<Self> {
        let mut out = Self::new(ncomp, move |_| CMat::zeros(ncomp, 2))?;
        out.zero = true;
        out.holder = Some(HolderData {
            exponent: 0.5,
            bound: 0.0,
        });
        Ok(out)
    }

    pub fn with_holder(mut self, holder: HolderData) -> Self {
        self.holder = Some(holder);
        self
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn holder(&self) -> Option<HolderData> {
        self.holder
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn eval(&self, x: Point) -> CMat {
        (self.eval)(x)
    }

    /// Evaluates with shape and finiteness checks.
    pub fn eval_checked(&self, x: Point) -> Result<CMat> {
        let v = self.eval(x);
        if v.shape() != (self.ncomp, 2) {
            return Err(Error::dimension(
                format!("{}x2", self.ncomp),
                format!("{:?}", v.shape()),
            ));
        }
        if !v.is_finite() {
            return Err(Error::Evaluation { x: x[0], y: x[1] });
        }
        Ok(v)
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        let eval = self.eval.clone();
        Self {
            eval: Arc::new(move |x| eval(x).conj()),
            ..self.clone()
        }
    }

    /// `lambda * F`.
    pub fn scale(&self, lambda: Complex64) -> Self {
        let eval = self.eval.clone();
        Self {
            eval: Arc::new(move |x| eval(x).scale(lambda)),
            zero: self.zero || lambda == Complex64::new(0.0, 0.0),
            ..self.clone()
        }
    }
}

/// Region `U` of admissible parameters: an open disc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: Complex64,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, z: Complex64) -> bool {
        (z - self.center).norm() < self.radius
    }
}

/// A family `z -> a(z, .)` with its complex derivative `a'(z)(.)`.
#[derive(Clone)]
pub struct ParametricCoefficient {
    eval: ParametricFn,
    derivative: ParametricFn,
    region: Disc,
    nu: f64,
    upper: f64,
    uniform_holder: Option<HolderData>,
}

impl fmt::Debug for ParametricCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricCoefficient")
            .field("region", &self.region)
            .field("nu", &self.nu)
            .field("upper", &self.upper)
            .field("uniform_holder", &self.uniform_holder)
            .finish_non_exhaustive()
    }
}

impl ParametricCoefficient {
    pub fn new(
        eval: impl Fn(Complex64, Point) -> Complex64 + Send + Sync + 'static,
        derivative: impl Fn(Complex64, Point) -> Complex64 + Send + Sync + 'static,
        region: Disc,
        nu: f64,
        upper: f64,
    ) -> Result<Self> {
        if !(region.radius > 0.0) {
            return Err(Error::Domain(
                "parameter disc needs a positive radius".into(),
            ));
        }
        if !(nu > 0.0 && upper > nu) {
            return Err(Error::Domain(format!(
                "need 0 < nu < L, got nu = {nu}, L = {upper}"
            )));
        }
        Ok(Self {
            eval: Arc::new(eval),
            derivative: Arc::new(derivative),
            region,
            nu,
            upper,
            uniform_holder: None,
        })
    }

    pub fn with_uniform_holder(mut self, holder: HolderData) -> Self {
        self.uniform_holder = Some(holder);
        self
    }

    pub fn region(&self) -> Disc {
        self.region
    }

    pub fn uniform_holder(&self) -> Option<HolderData> {
        self.uniform_holder
    }

    fn require_in_region(&self, z: Complex64) -> Result<()> {
        if self.region.contains(z) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "parameter {z} outside the disc |z - {}| < {}",
                self.region.center, self.region.radius
            )))
        }
    }

    /// The slice `a(z, .)` as a coefficient field.
    pub fn slice(&self, z: Complex64) -> Result<CoefficientField> {
        self.require_in_region(z)?;
        let eval = self.eval.clone();
        let mut field = CoefficientField::new(move |x| eval(z, x), self.nu, self.upper)?;
        field.holder = self.uniform_holder;
        Ok(field)
    }

    /// The derivative slice `a'(z)(.)`.
    pub fn derivative_slice(&self, z: Complex64) -> Result<ScalarFn> {
        self.require_in_region(z)?;
        let d = self.derivative.clone();
        Ok(Arc::new(move |x| d(z, x)))
    }

    pub fn eval(&self, z: Complex64, x: Point) -> Complex64 {
        (self.eval)(z, x)
    }

    pub fn derivative(&self, z: Complex64, x: Point) -> Complex64 {
        (self.derivative)(z, x)
    }
}

/// How strictly the solver enforces the admissibility conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissibilityPolicy {
    /// Requires both ellipticity bounds and the monotonicity condition.
    #[default]
    Strict,
    /// Requires the ellipticity bounds; a failing monotonicity condition is
    /// recorded as a warning.
    EllipticOnly,
}

/// Sampled margins of the admissibility inequalities.
///
/// `ell_margin = min(a^R - |a^I|) - nu`, `upper_margin = L - max(a^R + |a^I|)`,
/// `ell2_margin = min(c1 a^R - c2 |a^I|) - nu`. The check is pointwise on a
/// finite sample, not a proof.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub p: f64,
    pub nu: f64,
    pub upper: f64,
    pub c1: f64,
    pub c2: f64,
    pub ell_margin: f64,
    pub ell2_margin: f64,
    pub upper_margin: f64,
    pub s_star: f64,
    pub pass: bool,
    pub sample_points: usize,
    pub sampled: bool,
}

impl AdmissibilityReport {
    pub fn elliptic(&self) -> bool {
        self.ell_margin > 0.0 && self.upper_margin > 0.0
    }

    /// Returns the reason the report fails under `policy`, if it does.
    pub fn violation(&self, policy: AdmissibilityPolicy) -> Option<String> {
        if self.ell_margin <= 0.0 {
            return Some(format!(
                "nu < a^R - |a^I| fails (margin {:e})",
                self.ell_margin
            ));
        }
        if self.upper_margin <= 0.0 {
            return Some(format!(
                "a^R + |a^I| < L fails (margin {:e})",
                self.upper_margin
            ));
        }
        if policy == AdmissibilityPolicy::Strict && self.ell2_margin <= 0.0 {
            return Some(format!(
                "c1 a^R - c2 |a^I| > nu fails with c1 = {}, c2 = {} (margin {:e})",
                self.c1, self.c2, self.ell2_margin
            ));
        }
        None
    }

    pub fn require(&self, policy: AdmissibilityPolicy) -> Result<()> {
        match self.violation(policy) {
            None => Ok(()),
            Some(reason) => Err(Error::Inadmissible {
                reason,
                report: Box::new(self.clone()),
            }),
        }
    }
}

/// Quadrature points (2x2 Gauss) of every cell followed by all grid nodes.
pub fn sample_points(grid: &RectGrid) -> Vec<Point> {
    let rule = QuadRule::gauss2();
    let mut pts = Vec::with_capacity(grid.n_cells() * rule.len() + grid.n_nodes());
    for (i, j) in grid.cell_iter() {
        pts.extend(rule.points().iter().map(|r| grid.map_point(i, j, *r)));
    }
    pts.extend((0..grid.n_nodes()).map(|id| grid.node_point(id)));
    pts
}

fn sample_values(field: &CoefficientField, grid: &RectGrid) -> Result<Vec<Complex64>> {
    sample_points(grid)
        .par_iter()
        .map(|x| field.eval_checked(*x))
        .collect()
}

fn s_star_of(values: &[Complex64], p: f64) -> f64 {
    let k = (p - 2.0).abs() / p;
    values.iter().fold(0.0f64, |acc, a| {
        if a.re <= 0.0 {
            f64::INFINITY
        } else {
            acc.max(k * a.norm() / a.re)
        }
    })
}

/// Checks the ellipticity and monotonicity conditions at all quadrature
/// points and nodes of `grid`.
pub fn check_admissible(
    field: &CoefficientField,
    grid: &RectGrid,
    p: f64,
) -> Result<AdmissibilityReport> {
    let c1 = c1_of(p)?;
    let c2 = c2_of(p)?;
    let values = sample_values(field, grid)?;
    let (mut lo, mut hi, mut lo2) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for a in &values {
        lo = lo.min(a.re - a.im.abs());
        hi = hi.max(a.re + a.im.abs());
        lo2 = lo2.min(c1 * a.re - c2 * a.im.abs());
    }
    let nu = field.nu();
    let ell_margin = lo - nu;
    let upper_margin = field.upper() - hi;
    let ell2_margin = lo2 - nu;
    Ok(AdmissibilityReport {
        p,
        nu,
        upper: field.upper(),
        c1,
        c2,
        ell_margin,
        ell2_margin,
        upper_margin,
        s_star: s_star_of(&values, p),
        pass: ell_margin > 0.0 && upper_margin > 0.0 && ell2_margin > 0.0,
        sample_points: values.len(),
        sampled: true,
    })
}

/// Smallest `s` with `s a^R >= (|p-2|/p) |a|` over the sample points.
pub fn sensitivity_condition(field: &CoefficientField, grid: &RectGrid, p: f64) -> Result<f64> {
    let values = sample_values(field, grid)?;
    let s = s_star_of(&values, p);
    if s.is_finite() {
        Ok(s)
    } else {
        let report = check_admissible(field, grid, p)?;
        Err(Error::Inadmissible {
            reason: "a^R <= 0 at a sample point".into(),
            report: Box::new(report),
        })
    }
}

/// Offsets `(di, dj)` of the Hölder pair sample at node `(i, j)`: dyadic
/// steps along the axes and both diagonals, plus the full spans.
fn holder_offsets(cells: [usize; 2]) -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    let max = cells[0].max(cells[1]);
    let mut k = 1usize;
    while k <= max {
        let s = k as isize;
        out.extend([(s, 0), (0, s), (s, s), (s, -s)]);
        k *= 2;
    }
    let (sx, sy) = (cells[0] as isize, cells[1] as isize);
    out.extend([(sx, 0), (0, sy), (sx, sy), (sx, -sy)]);
    out.sort_unstable();
    out.dedup();
    out
}

/// Lower estimate of `[f]_{C^exponent}` from node pairs of `grid`.
///
/// The pair set of a grid contains that of every grid it refines by
/// factors of two, so the estimate is nondecreasing under such refinement.
pub fn holder_seminorm_estimate(
    field: &CoefficientField,
    grid: &RectGrid,
    exponent: f64,
) -> Result<f64> {
    if !(exponent > 0.0 && exponent < 1.0) {
        return Err(Error::Domain(format!(
            "exponent must lie in (0,1), got {exponent}"
        )));
    }
    let values: Vec<Complex64> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|id| field.eval_checked(grid.node_point(id)))
        .collect::<Result<_>>()?;
    Ok(holder_from_nodes(grid, &values, exponent))
}

pub(crate) fn holder_from_nodes(grid: &RectGrid, values: &[Complex64], exponent: f64) -> f64 {
    let cells = grid.cells();
    let offsets = holder_offsets(cells);
    let h = grid.spacing();
    (0..grid.n_nodes())
        .into_par_iter()
        .map(|id| {
            let (i, j) = grid.node_ij(id);
            let mut best = 0.0f64;
            for &(di, dj) in &offsets {
                let (ti, tj) = (i as isize + di, j as isize + dj);
                if ti < 0 || tj < 0 || ti > cells[0] as isize || tj > cells[1] as isize {
                    continue;
                }
                let other = grid.node_id(ti as usize, tj as usize);
                let dist = ((di as f64) * h[0]).hypot((dj as f64) * h[1]);
                let diff = (values[id] - values[other]).norm();
                best = best.max(diff / dist.powf(exponent));
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// One row of [`derivative_consistency`]: `sup |a(z+h) - a(z) - h a'(z)| / |h|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeRow {
    pub h: Complex64,
    pub remainder: f64,
}

/// Taylor-remainder table of a parametric family over the sample points of `grid`.
pub fn derivative_consistency(
    pc: &ParametricCoefficient,
    z: Complex64,
    h_list: &[Complex64],
    grid: &RectGrid,
) -> Result<Vec<DerivativeRow>> {
    pc.require_in_region(z)?;
    let pts = sample_points(grid);
    let base: Vec<(Complex64, Complex64)> = pts
        .par_iter()
        .map(|x| (pc.eval(z, *x), pc.derivative(z, *x)))
        .collect();
    h_list
        .iter()
        .map(|&h| {
            if h.norm() == 0.0 {
                return Err(Error::Domain("derivative step must be nonzero".into()));
            }
            pc.require_in_region(z + h)?;
            let remainder = pts
                .par_iter()
                .zip(&base)
                .map(|(x, (a, da))| (pc.eval(z + h, *x) - a - h * da).norm())
                .reduce(|| 0.0, f64::max)
                / h.norm();
            Ok(DerivativeRow { h, remainder })
        })
        .collect()
}

/// True when a remainder table decreases toward zero: each row is at most
/// the previous one (up to `slack` absolute), and the last row is below
/// `fraction` of the first.
pub fn remainders_vanish(rows: &[DerivativeRow], fraction: f64, slack: f64) -> bool {
    if rows.is_empty() {
        return false;
    }
    let first = rows[0].remainder;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].remainder <= w[0].remainder + slack);
    let last = rows[rows.len() - 1].remainder;
    monotone && (last <= fraction * first || last <= slack)
}
