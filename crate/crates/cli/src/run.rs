//! Experiment execution and artifact emission.
//!
//! Experiments stage their artifacts in memory; a single finalizer writes
//! them (and `summary.json`) to the output directory in name order, also
//! when the experiment stops early.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use cplap_core::manufactured::convergence_study;
use cplap_core::mesh::{read_csv, write_csv};
use cplap_core::regularity::{
    comparison_sweep, decay_estimate, decay_fit, excess_upper_bound, grad_oscillation,
    ComparisonReport, DecayEstimate, SubSquare,
};
use cplap_core::sensitivity::{rate_test, Direction};
use cplap_core::structure::{c3_search, structure_test, INEQUALITY_SLACK};
use cplap_core::{
    check_admissible, solve_dirichlet, DirichletProblem, Error, FEFunction, RectGrid,
};

use crate::config::{ConfigError, ExperimentConfig, Kind, SCHEMA_VERSION};

/// Why an experiment stopped; each maps to an exit status.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    NonConvergence(String),
    Invariant(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::NonConvergence(_) => 3,
            Failure::Invariant(_) => 4,
            Failure::Io(_) => 1,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            Failure::Validation(_) => "validation_error",
            Failure::NonConvergence(_) => "non_convergence",
            Failure::Invariant(_) => "invariant_violation",
            Failure::Io(_) => "io_error",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m)
            | Failure::NonConvergence(m)
            | Failure::Invariant(m)
            | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } | Error::Singular { .. } | Error::Degenerate { .. } => {
                Failure::NonConvergence(e.to_string())
            }
            Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    kind: &'a str,
    status: &'a str,
    message: Option<&'a str>,
    checks: &'a [Check],
    artifacts: Vec<&'a str>,
}

/// Staged output files and check results.
#[derive(Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
    checks: Vec<Check>,
}

impl Artifacts {
    fn json(&mut self, name: &str, value: &impl Serialize) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.files.insert(name.to_string(), bytes);
    }

    fn bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    fn solution(&mut self, name: &str, u: &FEFunction) -> Result<(), Failure> {
        let mut buf = Vec::new();
        write_csv(u, &mut buf)?;
        self.bytes(name, buf);
        Ok(())
    }

    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    fn flush(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Runs a resolved config, writes artifacts and returns the exit status.
pub fn execute(cfg: &ExperimentConfig) -> i32 {
    let dir = cfg
        .output
        .clone()
        .expect("resolved config has an output directory");
    let mut art = Artifacts::default();
    art.json("config.json", cfg);
    let result = match cfg.kind {
        Kind::Solve => solve(cfg, &mut art),
        Kind::StructureTest => structure(cfg, &mut art),
        Kind::Sensitivity => sensitivity(cfg, &mut art),
        Kind::Regularity => regularity(cfg, &mut art),
        Kind::ConvergenceStudy => convergence(cfg, &mut art),
    };
    let (status, message, code) = match &result {
        Ok(()) => ("ok", None, 0),
        Err(f) => (f.status(), Some(f.message()), f.exit_code()),
    };
    let checks = art.checks.clone();
    let mut names: Vec<String> = art.files.keys().cloned().collect();
    names.push("summary.json".into());
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind.name(),
        status,
        message,
        checks: &checks,
        artifacts: names.iter().map(String::as_str).collect(),
    };
    art.json("summary.json", &summary);
    if let Err(e) = art.flush(&dir) {
        eprintln!("error: cannot write artifacts to {}: {e}", dir.display());
        return 1;
    }
    if let Some(m) = message {
        eprintln!("error: {m}");
    }
    code
}

fn problem(cfg: &ExperimentConfig, grid: RectGrid) -> Result<DirichletProblem, Failure> {
    let pr = &cfg.problem;
    let params = cfg.params()?;
    let a = pr.coefficient.build(&grid, pr.nu, pr.upper)?;
    let source = pr.source.build(pr.ncomp, &grid, &a, params)?;
    let boundary = pr.boundary.build(pr.ncomp)?;
    Ok(DirichletProblem::new(grid, a, source, boundary, params)?)
}

/// Solves, recording the partial report on non-convergence.
fn solve_recorded(
    problem: &DirichletProblem,
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
) -> Result<(FEFunction, cplap_core::SolveReport), Failure> {
    match solve_dirichlet(problem, &cfg.run.solver) {
        Ok(r) => Ok(r),
        Err(Error::NonConvergence { reason, report }) => {
            art.json("nonconvergence.json", &report);
            Err(Failure::NonConvergence(format!(
                "nonlinear solve did not converge: {reason}"
            )))
        }
        Err(Error::Inadmissible { reason, report }) => {
            art.json("admissibility.json", &report);
            Err(Failure::Validation(format!(
                "coefficient is not admissible: {reason}"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn admissibility(problem: &DirichletProblem, art: &mut Artifacts) -> Result<(), Failure> {
    let rep = check_admissible(&problem.coefficient, &problem.grid, problem.params.p())?;
    art.check(
        "admissibility",
        rep.pass,
        format!(
            "ell {:.4e}, ell2 {:.4e}, upper {:.4e}",
            rep.ell_margin, rep.ell2_margin, rep.upper_margin
        ),
    );
    art.json("admissibility.json", &rep);
    Ok(())
}

fn solve(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let pr = problem(cfg, cfg.grid()?)?;
    admissibility(&pr, art)?;
    let (u, report) = solve_recorded(&pr, cfg, art)?;
    art.solution("solution.csv", &u)?;
    art.json("solve_report.json", &report);
    art.check(
        "converged",
        report.converged,
        format!("final residual {:e}", report.final_residual),
    );
    art.check(
        "energy bound ratio finite",
        report.energy_bound_ratio.is_finite(),
        format!("{:e}", report.energy_bound_ratio),
    );
    let w = &report.monotonicity;
    art.check(
        "monotonicity witness",
        w.violations == 0,
        format!("{} pairs, {} violations", w.pairs, w.violations),
    );
    if w.violations > 0 {
        return Err(Failure::Invariant(format!(
            "monotonicity witness found {} violating pairs (see solve_report.json)",
            w.violations
        )));
    }
    Ok(())
}

fn structure(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let params = cfg.params()?;
    let seed = cfg.run.seed.expect("resolved");
    let samples = cfg.run.samples.expect("resolved");
    // admissibility of the configured coefficient is reported alongside
    admissibility(&problem(cfg, cfg.grid()?)?, art)?;
    let band = c3_search(&params, samples, seed)?;
    let rep = structure_test(&params, samples, seed.wrapping_add(1), band)?;
    art.json("structure.json", &rep);
    art.check(
        "identity",
        rep.identity_max_rel_err <= 1e-12,
        format!("max relative error {:e}", rep.identity_max_rel_err),
    );
    for (name, count) in [
        ("str1 lower bound", rep.str1_violations),
        ("str2 upper bound", rep.str2_violations),
        ("str3 c3 band", rep.str3_violations),
    ] {
        art.check(
            name,
            count == 0,
            format!("{count} violations, slack {INEQUALITY_SLACK:e}"),
        );
    }
    if let Some(v) = &rep.first_violation {
        art.json("violation.json", v);
        return Err(Failure::Invariant(format!(
            "{} violated (sample in violation.json)",
            v.inequality
        )));
    }
    if rep.identity_max_rel_err > 1e-12 {
        return Err(Failure::Invariant(format!(
            "hat/check identity error {:e}",
            rep.identity_max_rel_err
        )));
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

#[derive(Serialize)]
struct SensitivityLeg {
    theta: num_complex::Complex64,
    table: cplap_core::sensitivity::RateTable,
    coercivity: cplap_core::sensitivity::CoercivityWitness,
}

fn sensitivity(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let pr = &cfg.problem;
    let run = &cfg.run;
    let pc = pr
        .parametric
        .as_ref()
        .expect("resolved")
        .build(&grid, pr.nu, pr.upper)?;
    let z = run.z.expect("resolved");
    let base = problem(cfg, grid)?.with_coefficient(pc.slice(z)?);
    admissibility(&base, art)?;
    let mut legs = Vec::new();
    for (k, &theta) in run.thetas.as_ref().expect("resolved").iter().enumerate() {
        let dir = Direction::new(theta)?;
        let (table, sol) = match rate_test(
            &base,
            &pc,
            z,
            &dir,
            run.t_list.as_ref().expect("resolved"),
            &run.solver,
            run.mode.expect("resolved"),
        ) {
            Ok(r) => r,
            Err(Error::NonConvergence { reason, report }) => {
                art.json("nonconvergence.json", &report);
                return Err(Failure::NonConvergence(format!("theta {theta}: {reason}")));
            }
            Err(e) => return Err(e.into()),
        };
        let mut csv = String::from("t,err_over_t,quotient_W12,floor,above_floor\n");
        for r in &table.rows {
            csv.push_str(&format!(
                "{:e},{:e},{:e},{:e},{}\n",
                r.t, r.err_over_t, r.quotient_norm, r.floor, r.above_floor
            ));
        }
        art.bytes(&format!("rate_table_{k}.csv"), csv.into_bytes());
        art.solution(&format!("w_theta_{k}.csv"), &sol.w_theta)?;
        let factor = table.min_decade_factor;
        art.check(
            format!("theta {theta}: err/t drops >= 5x per decade"),
            table.monotone && factor.is_some_and(|f| f >= 5.0),
            format!("s* {:.4}, min factor {}", table.s_star, opt(factor)),
        );
        art.check(
            format!("theta {theta}: quotient norms within factor 3"),
            table.quotient_spread < 3.0,
            format!("spread {:.4}", table.quotient_spread),
        );
        art.check(
            format!("theta {theta}: coercivity witness"),
            sol.coercivity.violations == 0,
            format!(
                "{} samples, min ratio {}",
                sol.coercivity.samples,
                opt(sol.coercivity.min_ratio)
            ),
        );
        let violated = sol.coercivity.violations > 0;
        legs.push(SensitivityLeg {
            theta,
            table,
            coercivity: sol.coercivity,
        });
        if violated {
            art.json("sensitivity.json", &legs);
            return Err(Failure::Invariant(format!(
                "linearized operator failed the coercivity witness for theta {theta}"
            )));
        }
    }
    art.json("sensitivity.json", &legs);
    Ok(())
}

#[derive(Serialize)]
struct RegularityReport {
    profile: cplap_core::regularity::ExcessProfile,
    oscillation: Vec<f64>,
    decay_estimates: Vec<DecayEstimate>,
    comparisons: Vec<ComparisonReport>,
    warnings: Vec<String>,
}

/// `kappa = 0.9 n` in the energy-decay check.
const DECAY_KAPPA: f64 = 1.8;
const DECAY_CONSTANT: f64 = 10.0;

fn regularity(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let run = &cfg.run;
    let center = run.center.expect("resolved");
    let radii = run.radii.clone().expect("resolved");
    let p = cfg.problem.p;
    let u = match &run.input {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Failure::Validation(format!("cannot open {}: {e}", path.display())))?;
            read_csv(std::io::BufReader::new(file))?
        }
        None => {
            let pr = problem(cfg, cfg.grid()?)?;
            admissibility(&pr, art)?;
            let (u, _) = solve_recorded(&pr, cfg, art)?;
            art.solution("solution.csv", &u)?;
            u
        }
    };
    let grid = *u.grid();
    let profile = decay_fit(&u, center, &radii, p)?;
    let mut warnings = Vec::new();
    let mut oscillation = Vec::new();
    let mut csv = String::from("rho,effective_rho,excess,oscillation\n");
    for ((&rho, &er), &ex) in profile
        .radii
        .iter()
        .zip(&profile.effective_radii)
        .zip(&profile.excess)
    {
        let osc = grad_oscillation(&u, center, rho)?;
        oscillation.push(osc);
        csv.push_str(&format!("{rho:e},{er:e},{ex:e},{osc:e}\n"));
        let bound = excess_upper_bound(&u, center, rho, p)?;
        if ex > bound {
            art.bytes("excess_profile.csv", csv.into_bytes());
            art.json(
                "violation.json",
                &serde_json::json!({"rho": rho, "excess": ex, "upper_bound": bound}),
            );
            return Err(Failure::Invariant(format!(
                "excess {ex:e} exceeds its bound {bound:e} at rho {rho}"
            )));
        }
    }
    art.bytes("excess_profile.csv", csv.into_bytes());
    art.check(
        "decay fit",
        !profile.degenerate && profile.fitted_beta > 0.0 && profile.fit_r2 > 0.9,
        format!("beta {:.4}, R2 {:.4}", profile.fitted_beta, profile.fit_r2),
    );
    let r = profile.radii[0];
    let decay_estimates: Vec<DecayEstimate> = profile.radii[1..]
        .iter()
        .map(|&rho| decay_estimate(&u, center, rho, r, p, DECAY_KAPPA))
        .collect::<Result<_, _>>()?;
    let worst = decay_estimates
        .iter()
        .map(|d| d.constant)
        .fold(0.0, f64::max);
    art.check(
        "energy decay constant <= 10",
        worst <= DECAY_CONSTANT,
        format!("largest constant {worst:.4} at kappa {DECAY_KAPPA}"),
    );
    let pr = &cfg.problem;
    let a = pr.coefficient.build(&grid, pr.nu, pr.upper)?;
    // the frozen problem needs interior unknowns: at least 2 cells per axis
    let resolvable: Vec<f64> = profile
        .radii
        .iter()
        .copied()
        .filter(|&rho| {
            SubSquare::resolve(&grid, center, rho)
                .is_ok_and(|s| s.i1 - s.i0 >= 2 && s.j1 - s.j0 >= 2)
        })
        .collect();
    if resolvable.len() < profile.radii.len() {
        warnings.push(format!(
            "comparison skipped for {} radii below two cells",
            profile.radii.len() - resolvable.len()
        ));
    }
    let comparisons =
        match comparison_sweep(&u, center, &resolvable, cfg.params()?, &a, &run.solver) {
            Ok(c) => c,
            Err(Error::NonConvergence { reason, report }) => {
                art.json("nonconvergence.json", &report);
                return Err(Failure::NonConvergence(format!(
                    "frozen-coefficient solve: {reason}"
                )));
            }
            Err(e) => return Err(e.into()),
        };
    art.json(
        "fit.json",
        &RegularityReport {
            profile,
            oscillation,
            decay_estimates,
            comparisons,
            warnings,
        },
    );
    Ok(())
}

fn convergence(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let pr = &cfg.problem;
    let exact = pr.manufactured.as_ref().expect("resolved").build();
    if exact.ncomp() != pr.ncomp {
        return Err(Failure::Validation(format!(
            "manufactured solution has N = {}, problem has N = {}",
            exact.ncomp(),
            pr.ncomp
        )));
    }
    let grid = cfg.grid()?;
    let a = pr.coefficient.build(&grid, pr.nu, pr.upper)?;
    let params = cfg.params()?;
    admissibility(&exact.problem(grid, &a, params)?, art)?;
    let meshes = cfg.run.meshes.clone().expect("resolved");
    let table = match convergence_study(&exact, &a, params, &meshes, &cfg.run.solver) {
        Ok(t) => t,
        Err(Error::NonConvergence { reason, report }) => {
            art.json("nonconvergence.json", &report);
            return Err(Failure::NonConvergence(reason));
        }
        Err(e) => return Err(e.into()),
    };
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    art.bytes("convergence.csv", csv);
    art.json("convergence.json", &table);
    match table.final_orders() {
        Some((w, l)) => {
            art.check(
                "W12 order 1.0 +- 0.2",
                (w - 1.0).abs() <= 0.2,
                format!("{w:.4}"),
            );
            art.check(
                "L2 order 2.0 +- 0.3",
                (l - 2.0).abs() <= 0.3,
                format!("{l:.4}"),
            );
        }
        None => art.check("observed order", false, "single mesh: no order available"),
    }
    Ok(())
}
