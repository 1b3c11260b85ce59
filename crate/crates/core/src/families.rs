//! Named coefficient, source, boundary and parametric families selectable
//! from configuration.
//!
//! Every family carries Hölder metadata computed from its parameters: the
//! exponent defaults to [`DEFAULT_HOLDER_EXPONENT`] and the bound is an
//! analytic upper bound of the seminorm on the grid's domain.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, Disc, HolderData, ParametricCoefficient, SourceField};
use crate::complex_fields::CMat;
use crate::error::{Error, Result};
use crate::manufactured::ManufacturedSolution;
use crate::mesh::{Point, RectGrid, DIM};
use crate::solver::BoundaryData;
use crate::structure::FluxParams;

pub const DEFAULT_HOLDER_EXPONENT: f64 = 0.5;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn one() -> f64 {
    1.0
}

fn check_axis(axis: usize) -> Result<()> {
    if axis < DIM {
        Ok(())
    } else {
        Err(Error::Domain(format!("axis must be 0 or 1, got {axis}")))
    }
}

fn exponent_or_default(e: Option<f64>) -> f64 {
    e.unwrap_or(DEFAULT_HOLDER_EXPONENT)
}

/// `[f]_{C^g} <= lip * d^{1-g}` for a Lipschitz `f` on a set of diameter `d`.
fn lipschitz_holder(lip: f64, diameter: f64, exponent: f64) -> Result<HolderData> {
    HolderData::new(exponent, lip * diameter.powf(1.0 - exponent))
}

/// Scalar coefficient families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `a = value`.
    Constant { value: Complex64 },
    /// `a = base + slope * x_axis`.
    AffineX {
        base: Complex64,
        slope: Complex64,
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        holder_exponent: Option<f64>,
    },
    /// `a = base + amplitude * cos(pi * frequency * x_axis)`.
    Cosine {
        base: Complex64,
        amplitude: Complex64,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        axis: usize,
        #[serde(default)]
        holder_exponent: Option<f64>,
    },
    /// `a = base + amplitude * |x_axis - kink|^exponent`, Hölder with that exponent only.
    Rough {
        base: Complex64,
        amplitude: Complex64,
        exponent: f64,
        kink: f64,
        #[serde(default)]
        axis: usize,
    },
}

impl CoefficientSpec {
    pub fn build(&self, grid: &RectGrid, nu: f64, upper: f64) -> Result<CoefficientField> {
        let d = grid.diameter();
        let field = match *self {
            Self::Constant { value } => CoefficientField::constant(value, nu, upper)?,
            Self::AffineX {
                base,
                slope,
                axis,
                holder_exponent,
            } => {
                check_axis(axis)?;
                let e = exponent_or_default(holder_exponent);
                CoefficientField::new(move |x| base + slope * x[axis], nu, upper)?
                    .with_holder(lipschitz_holder(slope.norm(), d, e)?)
            }
            Self::Cosine {
                base,
                amplitude,
                frequency,
                axis,
                holder_exponent,
            } => {
                check_axis(axis)?;
                if !frequency.is_finite() {
                    return Err(Error::Domain("frequency must be finite".into()));
                }
                let e = exponent_or_default(holder_exponent);
                // |cos s - cos t| <= min(2, |s - t|) <= 2^{1-e} |s - t|^e
                let bound = amplitude.norm() * 2f64.powf(1.0 - e) * (PI * frequency.abs()).powf(e);
                CoefficientField::new(
                    move |x| base + amplitude * (PI * frequency * x[axis]).cos(),
                    nu,
                    upper,
                )?
                .with_holder(HolderData::new(e, bound)?)
            }
            Self::Rough {
                base,
                amplitude,
                exponent,
                kink,
                axis,
            } => {
                check_axis(axis)?;
                // |x|^e is C^e with seminorm 1
                let holder = HolderData::new(exponent, amplitude.norm())?;
                CoefficientField::new(
                    move |x| base + amplitude * (x[axis] - kink).abs().powf(exponent),
                    nu,
                    upper,
                )?
                .with_holder(holder)
            }
        };
        Ok(field)
    }
}

/// Manufactured exact solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManufacturedSpec {
    /// `amplitude * sin(pi x) sin(pi y)`; defaults to `(1 + i)/sqrt 2`.
    SineBump {
        #[serde(default)]
        amplitude: Option<Complex64>,
    },
}

impl ManufacturedSpec {
    pub fn build(&self) -> ManufacturedSolution {
        match *self {
            Self::SineBump { amplitude: None } => ManufacturedSolution::unit_phase_bump(),
            Self::SineBump { amplitude: Some(a) } => ManufacturedSolution::sine_bump(a),
        }
    }
}

/// Source families `F: Omega -> C^{N x 2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Zero,
    /// Row `k` is `amplitude / (k + 1) * (sin(pi f x), cos(pi f y))`.
    Trig {
        amplitude: Complex64,
        #[serde(default = "one")]
        frequency: f64,
    },
    /// Source of a manufactured solution for the problem's coefficient.
    Manufactured {
        solution: ManufacturedSpec,
    },
}

impl SourceSpec {
    pub fn build(
        &self,
        ncomp: usize,
        grid: &RectGrid,
        a: &CoefficientField,
        params: FluxParams,
    ) -> Result<SourceField> {
        match self {
            Self::Zero => SourceField::zero(ncomp),
            Self::Trig {
                amplitude,
                frequency,
            } => {
                let (amp, f) = (*amplitude, *frequency);
                let lip = amp.norm() * PI * f.abs() * 2f64.sqrt();
                let e = DEFAULT_HOLDER_EXPONENT;
                Ok(SourceField::new(ncomp, move |x| {
                    let mut m = CMat::zeros(ncomp, DIM);
                    for k in 0..ncomp {
                        let s = amp / (k + 1) as f64;
                        m.set(k, 0, s * (PI * f * x[0]).sin());
                        m.set(k, 1, s * (PI * f * x[1]).cos());
                    }
                    m
                })?
                .with_holder(lipschitz_holder(lip, grid.diameter(), e)?))
            }
            Self::Manufactured { solution } => {
                let m = solution.build();
                if m.ncomp() != ncomp {
                    return Err(Error::dimension(format!("N = {ncomp}"), m.ncomp()));
                }
                m.source_for(a, params)
            }
        }
    }
}

/// Dirichlet data families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Zero,
    /// Every component equal to `value`.
    Constant {
        value: Complex64,
    },
    /// Every component equal to `value + gradient . x`.
    Affine {
        value: Complex64,
        gradient: [Complex64; 2],
    },
    /// Trace of a manufactured solution.
    Manufactured {
        solution: ManufacturedSpec,
    },
}

impl BoundarySpec {
    pub fn build(&self, ncomp: usize) -> Result<BoundaryData> {
        match self {
            Self::Zero => Ok(BoundaryData::zero(ncomp)),
            Self::Constant { value } => {
                let v = *value;
                Ok(BoundaryData::new(ncomp, move |_| vec![v; ncomp]))
            }
            Self::Affine { value, gradient } => {
                let (v, g) = (*value, *gradient);
                Ok(BoundaryData::new(ncomp, move |x: Point| {
                    vec![v + g[0] * x[0] + g[1] * x[1]; ncomp]
                }))
            }
            Self::Manufactured { solution } => {
                let m = solution.build();
                if m.ncomp() != ncomp {
                    return Err(Error::dimension(format!("N = {ncomp}"), m.ncomp()));
                }
                Ok(m.boundary())
            }
        }
    }
}

/// Families `a(z, x)` with their complex derivative in `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParametricSpec {
    /// `a(z, x) = a0 + z * a1 * (1 + slope * x_0)`.
    AffineZ {
        a0: Complex64,
        a1: Complex64,
        #[serde(default)]
        slope: f64,
        #[serde(default = "zero")]
        center: Complex64,
        radius: f64,
    },
    /// `a(z, x) = exp(z) * base * (1 + slope * x_0)`.
    ExpZ {
        base: Complex64,
        #[serde(default)]
        slope: f64,
        #[serde(default = "zero")]
        center: Complex64,
        radius: f64,
    },
}

impl ParametricSpec {
    pub fn build(&self, grid: &RectGrid, nu: f64, upper: f64) -> Result<ParametricCoefficient> {
        let e = DEFAULT_HOLDER_EXPONENT;
        let d = grid.diameter();
        match *self {
            Self::AffineZ {
                a0,
                a1,
                slope,
                center,
                radius,
            } => {
                let region = Disc { center, radius };
                let zmax = center.norm() + radius;
                let holder = lipschitz_holder(zmax * a1.norm() * slope.abs(), d, e)?;
                Ok(ParametricCoefficient::new(
                    move |z, x| a0 + z * a1 * (1.0 + slope * x[0]),
                    move |_, x| a1 * (1.0 + slope * x[0]),
                    region,
                    nu,
                    upper,
                )?
                .with_uniform_holder(holder))
            }
            Self::ExpZ {
                base,
                slope,
                center,
                radius,
            } => {
                let region = Disc { center, radius };
                let emax = (center.re + radius).exp();
                let holder = lipschitz_holder(emax * base.norm() * slope.abs(), d, e)?;
                let g = move |x: Point| base * (1.0 + slope * x[0]);
                Ok(ParametricCoefficient::new(
                    move |z, x| z.exp() * g(x),
                    move |z, x| z.exp() * g(x),
                    region,
                    nu,
                    upper,
                )?
                .with_uniform_holder(holder))
            }
        }
    }
}
