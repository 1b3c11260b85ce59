//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero on any FAIL.
//!
//! Every quantity a criterion is judged on is recomputed here with code that
//! does not go through the library routine under test (norms, linear
//! solves, flux, finite differences, closed forms).

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cplap_core::coefficients::{Disc, HolderData};
use cplap_core::manufactured::ManufacturedSolution;
use cplap_core::regularity::{decay_fit, excess};
use cplap_core::sensitivity::{
    difference_quotient_from, rate_test, solve_w_theta, Direction, SensitivityMode,
};
use cplap_core::solver::random_init;
use cplap_core::structure::{c3_search, structure_test, PairSampler};
use cplap_core::{
    check, check_admissible, hat, sensitivity_condition, solve_dirichlet, AdmissibilityPolicy,
    BoundaryData, CMat, CoefficientField, DirichletProblem, FEFunction, FluxParams,
    ParametricCoefficient, RectGrid, SolverConfig, SourceField,
};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ---------- independent helpers ----------

/// Gauss-Legendre 3-point rule on [0, 1].
const G3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Values and gradients of a bilinear function at reference point `(s, t)` of cell `(i, j)`.
fn bilinear(
    u: &FEFunction,
    i: usize,
    j: usize,
    s: f64,
    t: f64,
) -> (Vec<Complex64>, Vec<[Complex64; 2]>) {
    let g = u.grid();
    let [hx, hy] = g.spacing();
    let n = u.ncomp();
    let ids = [
        g.node_id(i, j),
        g.node_id(i + 1, j),
        g.node_id(i + 1, j + 1),
        g.node_id(i, j + 1),
    ];
    let mut vals = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for k in 0..n {
        let v: Vec<Complex64> = ids.iter().map(|&id| u.values()[id * n + k]).collect();
        vals.push(
            v[0] * (1.0 - s) * (1.0 - t)
                + v[1] * s * (1.0 - t)
                + v[2] * s * t
                + v[3] * (1.0 - s) * t,
        );
        let gx = ((v[1] - v[0]) * (1.0 - t) + (v[2] - v[3]) * t) / hx;
        let gy = ((v[3] - v[0]) * (1.0 - s) + (v[2] - v[1]) * s) / hy;
        grads.push([gx, gy]);
    }
    (vals, grads)
}

/// Calls `f(x, weight, values, gradients)` at 3x3 Gauss points of every cell.
fn integrate(u: &FEFunction, mut f: impl FnMut([f64; 2], f64, &[Complex64], &[[Complex64; 2]])) {
    let g = u.grid();
    let [nx, ny] = g.cells();
    let area = g.cell_area();
    let [x0, y0] = [g.bounds()[0][0], g.bounds()[1][0]];
    let [hx, hy] = g.spacing();
    for j in 0..ny {
        for i in 0..nx {
            for &(s, ws) in &G3 {
                for &(t, wt) in &G3 {
                    let (v, gr) = bilinear(u, i, j, s, t);
                    let x = [x0 + (i as f64 + s) * hx, y0 + (j as f64 + t) * hy];
                    f(x, ws * wt * area, &v, &gr);
                }
            }
        }
    }
}

fn grad_sq(gr: &[[Complex64; 2]]) -> f64 {
    gr.iter().map(|g| g[0].norm_sqr() + g[1].norm_sqr()).sum()
}

fn w12(u: &FEFunction) -> f64 {
    let mut acc = 0.0;
    integrate(u, |_, w, v, gr| {
        acc += w * (v.iter().map(|z| z.norm_sqr()).sum::<f64>() + grad_sq(gr))
    });
    acc.sqrt()
}

fn w12_dist(a: &FEFunction, b: &FEFunction) -> f64 {
    w12(&a.sub(b).expect("same grid"))
}

/// `(||u - u*||_{L2}, ||u - u*||_{W12})` for a scalar exact solution.
fn exact_errors(
    u: &FEFunction,
    value: impl Fn([f64; 2]) -> Complex64,
    grad: impl Fn([f64; 2]) -> [Complex64; 2],
) -> (f64, f64) {
    let (mut l2, mut h1) = (0.0, 0.0);
    integrate(u, |x, w, v, gr| {
        let e = grad(x);
        l2 += w * (v[0] - value(x)).norm_sqr();
        h1 += w * ((gr[0][0] - e[0]).norm_sqr() + (gr[0][1] - e[1]).norm_sqr());
    });
    (l2.sqrt(), (l2 + h1).sqrt())
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn entries(m: &CMat) -> Vec<Complex64> {
    let (r, k) = m.shape();
    (0..r)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| m.get(i, j))
        .collect()
}

fn trig_source(amp: Complex64) -> SourceField {
    SourceField::new(1, move |x| {
        CMat::from_complex(
            1,
            2,
            &[
                amp * ((PI * x[1]).sin() + x[0]),
                amp * (PI * x[0]).cos() * x[1],
            ],
        )
        .unwrap()
    })
    .unwrap()
    .with_holder(HolderData::new(0.5, 10.0).unwrap())
}

fn smooth_coefficient() -> CoefficientField {
    CoefficientField::new(|x| c(1.0 + 0.2 * x[0], 0.01), 0.01, 3.0)
        .unwrap()
        .with_holder(HolderData::new(0.5, 0.2).unwrap())
}

fn fixture(p: f64, eps: f64, n: usize) -> DirichletProblem {
    DirichletProblem::new(
        RectGrid::unit_square(n).unwrap(),
        smooth_coefficient(),
        trig_source(c(1.0, 0.5)),
        BoundaryData::zero(1),
        FluxParams::new(p, eps).unwrap(),
    )
    .unwrap()
}

// ---------- reporting ----------

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(id: usize, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (
            false,
            format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        ),
    };
    if let Some(b) = budget {
        if elapsed > b {
            pass = false;
            detail.push_str(&format!("; over runtime budget {:.0?}", b));
        }
    }
    println!(
        "{} criterion {id} ({title}) [{:.2}s]: {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

// ---------- criteria ----------

/// Independent flux `(eps^2 + |xi|^2)^{(p-2)/2} xi`.
fn flux_of(p: f64, eps: f64, xi: &[Complex64]) -> Vec<Complex64> {
    let s: f64 = xi.iter().map(|z| z.norm_sqr()).sum();
    if s == 0.0 {
        return vec![c(0.0, 0.0); xi.len()];
    }
    let w = (eps * eps + s).powf(0.5 * (p - 2.0));
    xi.iter().map(|z| z * w).collect()
}

fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for p in [1.2, 1.5, 2.0, 3.0, 4.5] {
        // c1, c2 from their closed forms
        let c1 = if p > 2.0 {
            (1.0 / 3.0) * (1.0 / (3.0 * 2f64.sqrt())).powf(p - 2.0)
        } else if p < 2.0 {
            p - 1.0
        } else {
            1.0
        };
        let c2 = if p > 2.0 {
            p - 1.0
        } else if p < 2.0 {
            8.0
        } else {
            1.0
        };
        for eps in [0.0, 0.1, 1.0] {
            let params = FluxParams::new(p, eps).unwrap();
            let band = c3_search(&params, 10_000, 11).unwrap();
            let rep = structure_test(&params, 10_000, 29, band.clone()).unwrap();
            let lib_ok = rep.identity_max_rel_err <= 1e-12
                && rep.str1_violations == 0
                && rep.str2_violations == 0
                && rep.str3_violations == 0;
            // second route on a fresh stream with the flux written out here
            let mut sampler = PairSampler::new(4242 + (p * 10.0) as u64 + (eps * 100.0) as u64);
            let (mut id_err, mut v1, mut v2, mut v3) = (0.0f64, 0, 0, 0);
            for _ in 0..10_000 {
                let (f, g) = sampler.next_pair();
                let (fe, ge) = (entries(&f), entries(&g));
                let d: Vec<Complex64> = fe.iter().zip(&ge).map(|(a, b)| a - b).collect();
                let da: Vec<Complex64> = flux_of(p, eps, &fe)
                    .iter()
                    .zip(flux_of(p, eps, &ge))
                    .map(|(a, b)| a - b)
                    .collect();
                let pair = cdot(&da, &d);
                let dam = CMat::from_complex(f.rows(), f.cols(), &da).unwrap();
                let dm = f.sub(&g).unwrap();
                let hre = hat(&dam).dot(&hat(&dm)).unwrap();
                let him = hat(&dam).dot(&check(&dm)).unwrap();
                let dn = cdot(&d, &d).re;
                let dan = cdot(&da, &da).re;
                let scale = (dn * dan).sqrt();
                if scale > 0.0 {
                    id_err = id_err.max((pair.re - hre).abs().max((pair.im - him).abs()) / scale);
                }
                if dn == 0.0 {
                    continue;
                }
                let s = cdot(&fe, &fe).re + cdot(&ge, &ge).re;
                let base = eps * eps + s;
                if base == 0.0 {
                    continue;
                }
                let w = base.powf(0.5 * (p - 2.0));
                if pair.re < c1 * w * dn * (1.0 - 1e-12) {
                    v1 += 1;
                }
                if dan.sqrt() > c2 * w * dn.sqrt() * (1.0 + 1e-12) {
                    v2 += 1;
                }
                let vf: Vec<Complex64> = {
                    let sf = cdot(&fe, &fe).re;
                    let wf = if sf == 0.0 {
                        0.0
                    } else {
                        (eps * eps + sf).powf(0.25 * (p - 2.0))
                    };
                    fe.iter().map(|z| z * wf).collect()
                };
                let vg: Vec<Complex64> = {
                    let sg = cdot(&ge, &ge).re;
                    let wg = if sg == 0.0 {
                        0.0
                    } else {
                        (eps * eps + sg).powf(0.25 * (p - 2.0))
                    };
                    ge.iter().map(|z| z * wg).collect()
                };
                let dv: Vec<Complex64> = vf.iter().zip(&vg).map(|(a, b)| a - b).collect();
                let ratio = cdot(&dv, &dv).re / (w * dn);
                if ratio.is_finite() && !(ratio >= 1.0 / band.c3 && ratio <= band.c3) {
                    v3 += 1;
                }
            }
            let here_ok = id_err <= 1e-12 && v1 == 0 && v2 == 0 && v3 == 0;
            if !(lib_ok && here_ok) {
                ok = false;
                notes.push(format!(
                    "p={p} eps={eps}: lib(id {:.1e}, {}/{}/{}) here(id {id_err:.1e}, {v1}/{v2}/{v3})",
                    rep.identity_max_rel_err, rep.str1_violations, rep.str2_violations, rep.str3_violations
                ));
            }
        }
    }
    if ok {
        notes.push("15 (p, eps) cells x 2 x 10^4 pairs, zero violations".into());
    }
    outcome(ok, notes.join("; "))
}

/// Banded Cholesky of a real SPD matrix stored densely by band rows.
struct BandChol {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandChol {
    fn new(n: usize, bw: usize, get: impl Fn(usize, usize) -> f64) -> Self {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        // l[i*w + (i-j)] = L[i][j] for i-bw <= j <= i
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = get(i, j);
                for k in i.saturating_sub(bw).max(j.saturating_sub(bw))..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    assert!(s > 0.0, "not SPD");
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Self { n, bw, l }
    }

    #[allow(clippy::needless_range_loop)]
    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let w = self.bw + 1;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= y[k] * self.l[i * w + (i - k)];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= y[k] * self.l[k * w + (k - i)];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}

fn criterion_2() -> Outcome {
    let n = 64;
    let a = c(1.0, 0.3);
    let grid = RectGrid::unit_square(n).unwrap();
    let source = trig_source(c(1.0, -0.4));
    let problem = DirichletProblem::new(
        grid,
        CoefficientField::constant(a, 0.01, 3.0).unwrap(),
        source.clone(),
        BoundaryData::zero(1),
        FluxParams::new(2.0, 0.0).unwrap(),
    )
    .unwrap();
    let (u, report) = match solve_dirichlet(&problem, &SolverConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("solver failed: {e}")),
    };
    // direct route: a S x = b with the Q1 stiffness S of a square cell
    let m = n - 1;
    let idx = |i: usize, j: usize| (j - 1) * m + (i - 1);
    let ke = [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ];
    let mut dense_band = std::collections::HashMap::new();
    let mut b = vec![c(0.0, 0.0); m * m];
    let h = 1.0 / n as f64;
    let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    for j in 0..n {
        for i in 0..n {
            let nodes = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            for (r, &(ia, ja)) in nodes.iter().enumerate() {
                if ia == 0 || ja == 0 || ia == n || ja == n {
                    continue;
                }
                for (s, &(ib, jb)) in nodes.iter().enumerate() {
                    if ib == 0 || jb == 0 || ib == n || jb == n {
                        continue;
                    }
                    *dense_band.entry((idx(ia, ja), idx(ib, jb))).or_insert(0.0) += ke[r][s] / 6.0;
                }
                for &s in &gp {
                    for &t in &gp {
                        let x = [(i as f64 + s) * h, (j as f64 + t) * h];
                        let fx = source.eval(x);
                        // gradient of the bilinear hat of local node r
                        let (dx, dy) = match r {
                            0 => (-(1.0 - t), -(1.0 - s)),
                            1 => (1.0 - t, -s),
                            2 => (t, s),
                            _ => (-t, 1.0 - s),
                        };
                        b[idx(ia, ja)] +=
                            (fx.get(0, 0) * (dx / h) + fx.get(0, 1) * (dy / h)) * (0.25 * h * h);
                    }
                }
            }
        }
    }
    let chol = BandChol::new(m * m, m + 1, |r, s| {
        *dense_band.get(&(r, s)).unwrap_or(&0.0)
    });
    let x = chol.solve(&b);
    let mut direct = FEFunction::zeros(grid, 1);
    for jj in 1..n {
        for ii in 1..n {
            direct.values_mut()[grid.node_id(ii, jj)] = x[idx(ii, jj)] / a;
        }
    }
    let d = w12_dist(&u, &direct);
    outcome(
        d <= 1e-10,
        format!(
            "W12 distance {d:.2e} (<= 1e-10), {} Newton steps",
            report.newton_iterations
        ),
    )
}

fn criterion_3() -> Outcome {
    let eps = 0.5;
    let meshes = [8, 16, 32, 64];
    let amp = c(1.0, 1.0) / 2f64.sqrt();
    let value = move |x: [f64; 2]| amp * ((PI * x[0]).sin() * (PI * x[1]).sin());
    let grad = move |x: [f64; 2]| {
        [
            amp * (PI * (PI * x[0]).cos() * (PI * x[1]).sin()),
            amp * (PI * (PI * x[0]).sin() * (PI * x[1]).cos()),
        ]
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [1.5, 2.0, 3.0] {
        let a = CoefficientField::new(|x| c(1.0, 0.3 * (PI * x[0]).cos()), 0.01, 3.0).unwrap();
        let params = FluxParams::new(p, eps).unwrap();
        // (ell2) fails for this coefficient at p != 2; only (ell) is required
        let cfg = SolverConfig::default().with_policy(if p == 2.0 {
            AdmissibilityPolicy::Strict
        } else {
            AdmissibilityPolicy::EllipticOnly
        });
        // source written out here: F = a (eps^2 + |grad u*|^2)^{(p-2)/2} grad u*
        let a_src = a.clone();
        let source = SourceField::new(1, move |x| {
            let g = grad(x);
            let w = (eps * eps + g[0].norm_sqr() + g[1].norm_sqr()).powf(0.5 * (p - 2.0));
            let av = a_src.eval(x);
            CMat::from_complex(1, 2, &[av * w * g[0], av * w * g[1]]).unwrap()
        })
        .unwrap();
        let mut errs = Vec::new();
        for &n in &meshes {
            let pr = DirichletProblem::new(
                RectGrid::unit_square(n).unwrap(),
                a.clone(),
                source.clone(),
                BoundaryData::zero(1),
                params,
            )
            .unwrap();
            match solve_dirichlet(&pr, &cfg) {
                Ok((u, _)) => errs.push(exact_errors(&u, value, grad)),
                Err(e) => {
                    ok = false;
                    notes.push(format!("p={p} n={n}: {e}"));
                    break;
                }
            }
        }
        if errs.len() != meshes.len() {
            continue;
        }
        let orders: Vec<(f64, f64)> = errs
            .windows(2)
            .map(|w| ((w[0].1 / w[1].1).log2(), (w[0].0 / w[1].0).log2()))
            .collect();
        let good = orders
            .iter()
            .all(|(w, l)| (w - 1.0).abs() <= 0.2 && (l - 2.0).abs() <= 0.3);
        ok &= good;
        notes.push(format!(
            "p={p}: W12 orders [{}] L2 orders [{}]",
            orders
                .iter()
                .map(|o| format!("{:.3}", o.0))
                .collect::<Vec<_>>()
                .join(", "),
            orders
                .iter()
                .map(|o| format!("{:.3}", o.1))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    // the library's own manufactured harness must agree on the finest pair
    let lib = cplap_core::manufactured::convergence_study(
        &ManufacturedSolution::unit_phase_bump(),
        &CoefficientField::new(|x| c(1.0, 0.3 * (PI * x[0]).cos()), 0.01, 3.0).unwrap(),
        FluxParams::new(2.0, eps).unwrap(),
        &[32, 64],
        &SolverConfig::default(),
    );
    match lib.ok().and_then(|t| t.final_orders()) {
        Some((w, l)) if (w - 1.0).abs() <= 0.2 && (l - 2.0).abs() <= 0.3 => {}
        other => {
            ok = false;
            notes.push(format!("library study disagrees: {other:?}"));
        }
    }
    outcome(ok, notes.join("; "))
}

fn criterion_4() -> Outcome {
    let problem = fixture(3.0, 0.1, 32);
    let cfg = SolverConfig::default();
    let mut sols = Vec::new();
    for seed in 1..=5u64 {
        match cplap_core::solver::solve_from(&problem, random_init(&problem, seed, 1.0), &cfg) {
            Ok((u, _)) => sols.push(u),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let mut worst = 0.0f64;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            worst = worst.max(w12_dist(&sols[i], &sols[j]));
        }
    }
    let bound = 10.0 * cfg.tol;
    outcome(
        worst <= bound,
        format!("max pairwise W12 distance {worst:.2e} (<= {bound:.0e})"),
    )
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [1.5, 2.0, 3.0] {
        let q = p / (p - 1.0);
        let mut ratios = Vec::new();
        for n in [8, 16, 32, 64] {
            let pr = fixture(p, 0.5, n);
            let u = match solve_dirichlet(&pr, &SolverConfig::default()) {
                Ok((u, _)) => u,
                Err(e) => return outcome(false, format!("p={p} n={n}: {e}")),
            };
            let (mut num, mut den) = (0.0, 0.0);
            integrate(&u, |x, w, _, gr| {
                num += w * grad_sq(gr).powf(0.5 * p);
                let f = pr.source.eval(x);
                den += w * ((f.get(0, 0).norm_sqr() + f.get(0, 1).norm_sqr()).powf(0.5 * q) + 1.0);
            });
            ratios.push(num / den);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        let spread = (hi - lo) / lo;
        let good = ratios.iter().all(|r| r.is_finite()) && spread < 0.1;
        ok &= good;
        notes.push(format!(
            "p={p}: ratio {lo:.4}..{hi:.4} (spread {:.2}%)",
            100.0 * spread
        ));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let grid = RectGrid::unit_square(8).unwrap();
    let p = 3.0;
    let nu = 0.01;
    let c1 = (1.0 / 3.0) * (1.0 / (3.0 * 2f64.sqrt()));
    let c2 = p - 1.0;
    let expect_reject = c1 * 1.0 - c2 * 0.5 < nu;
    let expect_accept = c1 * 1.0 - c2 * 0.02 > nu && 1.0 - 0.02 > nu && 1.02 < 2.0;
    let bad = check_admissible(
        &CoefficientField::constant(c(1.0, 0.5), nu, 2.0).unwrap(),
        &grid,
        p,
    )
    .unwrap();
    let good = check_admissible(
        &CoefficientField::constant(c(1.0, 0.02), nu, 2.0).unwrap(),
        &grid,
        p,
    )
    .unwrap();
    let ok = expect_reject
        && expect_accept
        && !bad.pass
        && bad.ell2_margin < 0.0
        && (bad.ell2_margin - (c1 - c2 * 0.5 - nu)).abs() <= 1e-14
        && good.pass
        && (good.ell2_margin - (c1 - c2 * 0.02 - nu)).abs() <= 1e-14;
    outcome(
        ok,
        format!(
            "1+0.5i: pass={} ell2 margin {:.4}; 1+0.02i: pass={} ell2 margin {:.4}",
            bad.pass, bad.ell2_margin, good.pass, good.ell2_margin
        ),
    )
}

fn affine_family(a0: Complex64, a1: Complex64) -> ParametricCoefficient {
    ParametricCoefficient::new(
        move |z, _| a0 + z * a1,
        move |_, _| a1,
        Disc {
            center: c(0.0, 0.0),
            radius: 0.5,
        },
        0.01,
        3.0,
    )
    .unwrap()
}

fn criterion_7() -> Outcome {
    let pc = affine_family(c(1.0, 0.01), c(0.2, 0.005));
    let z = c(0.05, 0.0);
    let dir = Direction::new(c(1.0, 0.0)).unwrap();
    let cfg = SolverConfig::default().with_tol(1e-12);
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [2.0, 3.0] {
        let base = fixture(p, 0.5, 16);
        let (u_z, _) = match solve_dirichlet(&base.with_coefficient(pc.slice(z).unwrap()), &cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("p={p}: {e}")),
        };
        let mut norms = Vec::new();
        for t in [1e-1, 1e-2, 1e-3, 1e-4] {
            match difference_quotient_from(&base, &pc, z, &u_z, &dir, t, &cfg) {
                Ok(q) => norms.push(w12(&q)),
                Err(e) => return outcome(false, format!("p={p} t={t}: {e}")),
            }
        }
        let hi = norms.iter().cloned().fold(0.0, f64::max);
        let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        ok &= lo > 0.0 && hi / lo < 3.0;
        notes.push(format!(
            "p={p}: quotient W12 in [{lo:.4e}, {hi:.4e}], factor {:.4}",
            hi / lo
        ));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let pc = affine_family(c(1.0, 0.01), c(0.2, 0.005));
    let z = c(0.05, 0.0);
    let cfg = SolverConfig::default().with_tol(1e-12);
    let t_list = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [2.0, 3.0] {
        let base = fixture(p, 0.5, 16);
        let slice = pc.slice(z).unwrap();
        // s* from its definition at the nodes, and the library's value
        let mut s_here = 0.0f64;
        for id in 0..base.grid.n_nodes() {
            let av = slice.eval(base.grid.node_point(id));
            s_here = s_here.max((p - 2.0).abs() / p * av.norm() / av.re);
        }
        let s_lib = sensitivity_condition(&slice, &base.grid, p).unwrap();
        if !(s_here < 1.0 && s_lib < 1.0) {
            ok = false;
            notes.push(format!("p={p}: s* {s_lib} not < 1"));
            continue;
        }
        for theta in [c(1.0, 0.0), c(0.0, 1.0)] {
            let dir = Direction::new(theta).unwrap();
            let (table, sol) =
                match rate_test(&base, &pc, z, &dir, &t_list, &cfg, SensitivityMode::Strict) {
                    Ok(r) => r,
                    Err(e) => return outcome(false, format!("p={p} theta={theta}: {e}")),
                };
            // err(t)/t = ||q_t - w|| since |theta| = 1
            let mut rows = Vec::new();
            for &t in &t_list {
                let q = difference_quotient_from(&base, &pc, z, &sol.u_z, &dir, t, &cfg).unwrap();
                rows.push((t, w12_dist(&q, &sol.w_theta), 10.0 * cfg.tol / t));
            }
            let mut factors = Vec::new();
            for w in rows.windows(2) {
                if w[0].1 <= w[0].2 || w[1].1 <= w[1].2 {
                    break;
                }
                factors.push(w[0].1 / w[1].1);
            }
            let good = !factors.is_empty()
                && factors.iter().all(|&f| f >= 5.0)
                && table.monotone
                && table.min_decade_factor.is_some_and(|f| f >= 5.0);
            ok &= good;
            notes.push(format!(
                "p={p} theta={theta}: s*={s_lib:.3}, decade factors [{}]",
                factors
                    .iter()
                    .map(|f| format!("{f:.2}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
    }
    // p = 2: theta independence and the closed form -a1/(a0 + z a1) u(z)
    let (a0, a1) = (c(1.0, 0.3), c(0.2, -0.1));
    let pc2 = affine_family(a0, a1);
    let z = c(0.1, 0.05);
    let base = fixture(2.0, 0.5, 16);
    let ws: Vec<_> = [c(1.0, 0.0), c(0.0, 1.0), c(0.6, -0.8)]
        .iter()
        .map(|t| {
            solve_w_theta(
                &base,
                &pc2,
                z,
                &Direction::new(*t).unwrap(),
                &cfg,
                SensitivityMode::Strict,
            )
            .unwrap()
        })
        .collect();
    let spread = ws[1..]
        .iter()
        .map(|s| w12_dist(&s.w_theta, &ws[0].w_theta))
        .fold(0.0, f64::max);
    let closed = ws[0].u_z.scale(-a1 / (a0 + z * a1));
    let cf = w12_dist(&closed, &ws[0].w_theta);
    ok &= spread <= 1e-12 && cf <= 1e-9;
    notes.push(format!(
        "p=2: theta spread {spread:.1e}, closed-form distance {cf:.1e}"
    ));
    outcome(ok, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    for p in [1.5, 2.0, 3.0] {
        let pr = fixture(p, 0.5, 8);
        let form = pr.weak_form(false).unwrap();
        let u = random_init(&pr, 7, 1.0);
        let jac = form.jacobian(&u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99 + p as u64);
        let t = 1e-5;
        for _ in 0..20 {
            let w: Vec<f64> = (0..form.n_dofs())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut up = u.clone();
            up.add_interior(&w, t);
            let mut um = u.clone();
            um.add_interior(&w, -t);
            let rp = form.residual(&up).unwrap();
            let rm = form.residual(&um).unwrap();
            let fd: Vec<f64> = rp
                .iter()
                .zip(&rm)
                .map(|(a, b)| (a - b) / (2.0 * t))
                .collect();
            let jw = jac.matvec(&w);
            let num: f64 = jw
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = jw.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
    }
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 60 directions (<= 1e-5)"),
    )
}

fn criterion_10() -> Outcome {
    let n = 128;
    let radii = [0.25, 0.125, 0.0625, 0.03125, 0.015625];
    let center = [0.5, 0.5];
    let mut ok = true;
    let mut notes = Vec::new();
    for p in [2.0, 3.0] {
        let pr = fixture(p, 0.1, n);
        let cfg = SolverConfig::default().with_tol(1e-8);
        let u = match solve_dirichlet(&pr, &cfg) {
            Ok((u, _)) => u,
            Err(e) => return outcome(false, format!("p={p}: {e}")),
        };
        match decay_fit(&u, center, &radii, p) {
            Ok(prof) => {
                // refit from excess values recomputed independently
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (&rho, &e_lib) in prof.radii.iter().zip(&prof.excess) {
                    let e = excess_here(&u, center, rho, p);
                    if (e - e_lib).abs() > 1e-10 * e.max(1e-300) {
                        ok = false;
                        notes.push(format!("p={p} rho={rho}: excess {e_lib} vs {e}"));
                    }
                    xs.push(rho.ln());
                    ys.push(e.ln());
                }
                let (slope, r2) = fit(&xs, &ys);
                let beta = slope / p;
                let good = prof.radii.len() == 5
                    && prof.fitted_beta > 0.0
                    && prof.fit_r2 > 0.9
                    && beta > 0.0
                    && r2 > 0.9;
                ok &= good;
                notes.push(format!(
                    "p={p}: beta {:.3} (R2 {:.4})",
                    prof.fitted_beta, prof.fit_r2
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("p={p}: {e}"));
            }
        }
    }
    let grid = RectGrid::unit_square(n).unwrap();
    let affine = FEFunction::interpolate(grid, 1, |x| {
        vec![c(
            0.75 * x[0] - 0.5 * x[1] + 0.25,
            0.125 * x[0] + 2.0 * x[1],
        )]
    });
    let zero = radii.iter().all(|&r| {
        excess(&affine, center, r, 3.0).unwrap() == 0.0
            && excess(&affine, center, r, 2.0).unwrap() == 0.0
    });
    ok &= zero;
    notes.push(format!("affine excess exactly zero: {zero}"));
    outcome(ok, notes.join("; "))
}

/// Excess over cells fully inside `[c - rho, c + rho]^2` at 2x2 Gauss points.
fn excess_here(u: &FEFunction, center: [f64; 2], rho: f64, p: f64) -> f64 {
    let g = u.grid();
    let h = g.spacing()[0];
    let lo_i = ((center[0] - rho) / h - 1e-9).ceil() as usize;
    let hi_i = ((center[0] + rho) / h + 1e-9).floor() as usize;
    let lo_j = ((center[1] - rho) / h - 1e-9).ceil() as usize;
    let hi_j = ((center[1] + rho) / h + 1e-9).floor() as usize;
    let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut samples = Vec::new();
    for j in lo_j..hi_j {
        for i in lo_i..hi_i {
            for &s in &gp {
                for &t in &gp {
                    samples.push(bilinear(u, i, j, s, t).1[0]);
                }
            }
        }
    }
    let m = samples.len() as f64;
    let mean = [
        samples.iter().map(|g| g[0]).sum::<Complex64>() / m,
        samples.iter().map(|g| g[1]).sum::<Complex64>() / m,
    ];
    samples
        .iter()
        .map(|g| ((g[0] - mean[0]).norm_sqr() + (g[1] - mean[1]).norm_sqr()).powf(0.5 * p))
        .sum::<f64>()
        / m
}

fn fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let s = Duration::from_secs;
    let results = [
        run(1, "structure inequalities", Some(s(30)), criterion_1),
        run(2, "linear-case oracle", Some(s(10)), criterion_2),
        run(3, "manufactured convergence", Some(s(300)), criterion_3),
        run(4, "uniqueness probe", Some(s(120)), criterion_4),
        run(5, "energy estimate", None, criterion_5),
        run(6, "admissibility gate", None, criterion_6),
        run(7, "difference-quotient boundedness", None, criterion_7),
        run(8, "differentiability rate", Some(s(300)), criterion_8),
        run(9, "Jacobian consistency", None, criterion_9),
        run(10, "regularity probe", Some(s(180)), criterion_10),
    ];
    let failed = results.iter().filter(|r| !**r).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
