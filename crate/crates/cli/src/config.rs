//! Versioned JSON experiment configuration.
//!
//! Unknown keys are rejected at every level. After [`ExperimentConfig::resolve`]
//! every optional field relevant to the experiment kind holds a value, and
//! the resolved config is what gets echoed to the output directory.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use cplap_core::families::{
    BoundarySpec, CoefficientSpec, ManufacturedSpec, ParametricSpec, SourceSpec,
};
use cplap_core::sensitivity::SensitivityMode;
use cplap_core::{FluxParams, RectGrid, SolverConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Solve,
    StructureTest,
    Sensitivity,
    Regularity,
    ConvergenceStudy,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Solve => "solve",
            Kind::StructureTest => "structure-test",
            Kind::Sensitivity => "sensitivity",
            Kind::Regularity => "regularity",
            Kind::ConvergenceStudy => "convergence-study",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: [usize; 2],
    #[serde(default = "unit_bounds")]
    pub bounds: [[f64; 2]; 2],
}

fn unit_bounds() -> [[f64; 2]; 2] {
    [[0.0, 1.0], [0.0, 1.0]]
}

fn default_coefficient() -> CoefficientSpec {
    CoefficientSpec::Constant {
        value: Complex64::new(1.0, 0.0),
    }
}

fn zero_source() -> SourceSpec {
    SourceSpec::Zero
}

fn zero_boundary() -> BoundarySpec {
    BoundarySpec::Zero
}

fn one_component() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub p: f64,
    pub eps: f64,
    #[serde(default = "one_component")]
    pub ncomp: usize,
    pub grid: GridSpec,
    pub nu: f64,
    pub upper: f64,
    #[serde(default = "default_coefficient")]
    pub coefficient: CoefficientSpec,
    #[serde(default = "zero_source")]
    pub source: SourceSpec,
    #[serde(default = "zero_boundary")]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub parametric: Option<ParametricSpec>,
    #[serde(default)]
    pub manufactured: Option<ManufacturedSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default)]
    pub solver: SolverConfig,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub z: Option<Complex64>,
    pub thetas: Option<Vec<Complex64>>,
    pub t_list: Option<Vec<f64>>,
    pub mode: Option<SensitivityMode>,
    pub center: Option<[f64; 2]>,
    pub radii: Option<Vec<f64>>,
    /// Node dump to analyse instead of solving (regularity only).
    pub input: Option<PathBuf>,
    pub meshes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: Kind,
    pub problem: ProblemBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Command-line values that replace config entries.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub p: Option<f64>,
    pub eps: Option<f64>,
    pub cells: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub center: Option<[f64; 2]>,
    pub radii: Option<Vec<f64>>,
    pub input: Option<PathBuf>,
}

/// Config problems, reported with exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_T_LIST: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const DEFAULT_MESHES: [usize; 4] = [8, 16, 32, 64];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.output {
            self.output = Some(v.clone());
        }
        if let Some(v) = o.p {
            self.problem.p = v;
        }
        if let Some(v) = o.eps {
            self.problem.eps = v;
        }
        if let Some(v) = o.cells {
            self.problem.grid.cells = [v, v];
        }
        if let Some(v) = o.tol {
            self.run.solver.tol = v;
        }
        if let Some(v) = o.seed {
            self.run.seed = Some(v);
        }
        if let Some(v) = o.samples {
            self.run.samples = Some(v);
        }
        if let Some(v) = o.center {
            self.run.center = Some(v);
        }
        if let Some(v) = &o.radii {
            self.run.radii = Some(v.clone());
        }
        if let Some(v) = &o.input {
            self.run.input = Some(v.clone());
        }
    }

    pub fn grid(&self) -> Result<RectGrid, ConfigError> {
        let g = &self.problem.grid;
        RectGrid::new(g.bounds, g.cells).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn params(&self) -> Result<FluxParams, ConfigError> {
        FluxParams::new(self.problem.p, self.problem.eps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Validates the config for its kind and fills every relevant default.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let pr = &self.problem;
        if !(pr.p.is_finite() && pr.p > 1.0) {
            return invalid(format!("p must be finite and > 1, got {}", pr.p));
        }
        if !(0.0..=1.0).contains(&pr.eps) {
            return invalid(format!("eps must lie in [0, 1], got {}", pr.eps));
        }
        if pr.ncomp == 0 {
            return invalid("ncomp must be at least 1");
        }
        if self.output.is_none() {
            return invalid("no output directory: set \"output\" or pass --out");
        }
        let grid = self.grid()?;
        self.run
            .solver
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let b = grid.bounds();
        let run = &mut self.run;
        match self.kind {
            Kind::Solve => {}
            Kind::StructureTest => {
                if run.seed.is_none() {
                    return invalid("structure-test needs an explicit run.seed");
                }
                run.samples.get_or_insert(DEFAULT_SAMPLES);
            }
            Kind::Sensitivity => {
                if self.problem.eps <= 0.0 {
                    return invalid(
                        "sensitivity needs eps > 0: the differentiability result assumes a nondegenerate regularization",
                    );
                }
                if self.problem.parametric.is_none() {
                    return invalid("sensitivity needs problem.parametric");
                }
                run.z.get_or_insert(Complex64::new(0.0, 0.0));
                run.thetas.get_or_insert_with(|| {
                    vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]
                });
                run.t_list.get_or_insert_with(|| DEFAULT_T_LIST.to_vec());
                run.mode.get_or_insert(SensitivityMode::Strict);
            }
            Kind::Regularity => {
                run.center
                    .get_or_insert([0.5 * (b[0][0] + b[0][1]), 0.5 * (b[1][0] + b[1][1])]);
                let half = 0.5 * (b[0][1] - b[0][0]).min(b[1][1] - b[1][0]);
                run.radii
                    .get_or_insert_with(|| (1..=5).map(|k| half * 0.5f64.powi(k)).collect());
            }
            Kind::ConvergenceStudy => {
                if self.problem.manufactured.is_none() {
                    return invalid("convergence-study needs problem.manufactured");
                }
                if self.problem.grid.bounds != unit_bounds() {
                    return invalid("convergence-study runs on the unit square");
                }
                run.meshes.get_or_insert_with(|| DEFAULT_MESHES.to_vec());
            }
        }
        Ok(self)
    }
}
