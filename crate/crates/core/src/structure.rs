//! The regularized p-Laplace flux `A(xi) = (eps^2 + |xi|^2)^{(p-2)/2} xi`,
//! its companion `V(xi) = (eps^2 + |xi|^2)^{(p-2)/4} xi`, and the
//! monotonicity / Lipschitz structure inequalities with their constants.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex_fields::{check, cinner, cnorm, hat, CMat};
use crate::error::{Error, Result};

/// Exponent `p` and regularization `eps` of the flux.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxParams {
    p: f64,
    eps: f64,
}

impl FluxParams {
    pub fn new(p: f64, eps: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::Domain(format!("p must lie in (1, inf), got {p}")));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Domain(format!("eps must lie in [0, 1], got {eps}")));
        }
        Ok(Self { p, eps })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Hölder conjugate `p' = p / (p - 1)`.
    pub fn conjugate(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// `(eps^2 + s)^e` evaluated through `exp(e ln(.))`; `0^e` is 0 for
    /// `e > 0` and infinite for `e < 0`.
    #[inline]
    pub fn regularized_power(&self, norm_sqr: f64, exponent: f64) -> f64 {
        if exponent == 0.0 {
            return 1.0;
        }
        let base = self.eps * self.eps + norm_sqr;
        if base == 0.0 {
            return if exponent > 0.0 { 0.0 } else { f64::INFINITY };
        }
        (exponent * base.ln()).exp()
    }

    /// Flux weight `mu = (eps^2 + |xi|^2)^{(p-2)/2}` as a function of `|xi|^2`.
    #[inline]
    pub fn weight(&self, norm_sqr: f64) -> f64 {
        self.regularized_power(norm_sqr, 0.5 * (self.p - 2.0))
    }

    /// `(eps^2 + |xi|^2)^{(p-4)/2}`, the weight of the rank-one part of the
    /// flux derivative.
    #[inline]
    pub fn weight_derivative_factor(&self, norm_sqr: f64) -> f64 {
        self.regularized_power(norm_sqr, 0.5 * (self.p - 4.0))
    }

    /// True when the weight blows up at vanishing gradients.
    pub fn is_singular(&self) -> bool {
        self.p < 2.0 && self.eps == 0.0
    }
}

/// Constants of the monotonicity (`c1`), Lipschitz (`c2`) and `V`-comparison
/// (`c3`) inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// `(1/3)(1/(3 sqrt 2))^{p-2}` for `p >= 2`, `p - 1` for `p < 2`, and exactly 1 at `p = 2`.
pub fn c1_of(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(if p == 2.0 {
        1.0
    } else if p > 2.0 {
        (1.0 / 3.0) * (1.0 / (3.0 * 2f64.sqrt())).powf(p - 2.0)
    } else {
        p - 1.0
    })
}

/// `p - 1` for `p >= 2`, 8 for `p < 2`, and exactly 1 at `p = 2`.
pub fn c2_of(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(if p == 2.0 {
        1.0
    } else if p > 2.0 {
        p - 1.0
    } else {
        8.0
    })
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("p must exceed 1, got {p}")))
    }
}

/// `A(xi) = (eps^2 + |xi|^2)^{(p-2)/2} xi`, extended by 0 at `xi = 0`.
pub fn flux(params: &FluxParams, xi: &CMat) -> CMat {
    scaled_by_power(params, xi, 0.5 * (params.p - 2.0))
}

/// `V(xi) = (eps^2 + |xi|^2)^{(p-2)/4} xi`.
pub fn v_map(params: &FluxParams, xi: &CMat) -> CMat {
    scaled_by_power(params, xi, 0.25 * (params.p - 2.0))
}

fn scaled_by_power(params: &FluxParams, xi: &CMat, exponent: f64) -> CMat {
    if exponent == 0.0 {
        return xi.clone();
    }
    let s = xi.norm_sqr();
    if s == 0.0 {
        return CMat::zeros(xi.rows(), xi.cols());
    }
    xi.scale_real(params.regularized_power(s, exponent))
}

/// `<A(F) - A(G), F - G>`.
pub fn monotonicity_pair(params: &FluxParams, f: &CMat, g: &CMat) -> Result<Complex64> {
    let da = flux(params, f).sub(&flux(params, g))?;
    cinner(&da, &f.sub(g)?)
}

/// The hat/check decomposition of [`monotonicity_pair`]:
/// `(hat dA . (hat F - hat G), hat dA . (check F - check G))`.
pub fn realified_pair(params: &FluxParams, f: &CMat, g: &CMat) -> Result<(f64, f64)> {
    f.check_same_shape(g)?;
    let da = hat(&flux(params, f)).sub(&hat(&flux(params, g)))?;
    let re = da.dot(&hat(f).sub(&hat(g))?)?;
    let im = da.dot(&check(f).sub(&check(g))?)?;
    Ok((re, im))
}

fn gap_weight(params: &FluxParams, f: &CMat, g: &CMat) -> f64 {
    params.weight(f.norm_sqr() + g.norm_sqr())
}

/// `c1 (eps^2 + |F|^2 + |G|^2)^{(p-2)/2} |F - G|^2`.
pub fn lower_gap(params: &FluxParams, f: &CMat, g: &CMat) -> Result<f64> {
    let d = f.sub(g)?.norm_sqr();
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(c1_of(params.p)? * gap_weight(params, f, g) * d)
}

/// `c2 (eps^2 + |F|^2 + |G|^2)^{(p-2)/2} |F - G|`.
pub fn lipschitz_gap(params: &FluxParams, f: &CMat, g: &CMat) -> Result<f64> {
    let d = cnorm(&f.sub(g)?);
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(c2_of(params.p)? * gap_weight(params, f, g) * d)
}

/// `|V(F) - V(G)|^2 / ((eps^2 + |F|^2 + |G|^2)^{(p-2)/2} |F - G|^2)`, or
/// `None` when the ratio is undefined.
pub fn v_ratio(params: &FluxParams, f: &CMat, g: &CMat) -> Result<Option<f64>> {
    let d = f.sub(g)?.norm_sqr();
    let denom = gap_weight(params, f, g) * d;
    if d == 0.0 || !(denom.is_finite() && denom > 0.0) {
        return Ok(None);
    }
    let num = v_map(params, f).sub(&v_map(params, g))?.norm_sqr();
    let r = num / denom;
    Ok(r.is_finite().then_some(r))
}

/// Seeded generator of `(F, G)` pairs with random shapes `N, n <= 3`,
/// mixing generic pairs with near-parallel, tiny-difference and near-zero
/// configurations.
#[derive(Clone, Debug)]
pub struct PairSampler {
    rng: ChaCha8Rng,
    counter: u64,
}

/// Ratios `|F - G| / |F|` used for the adversarial pairs.
pub const ADVERSARIAL_RATIOS: [f64; 4] = [1e-8, 1e-4, 1.0, 1e4];

impl PairSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: 0,
        }
    }

    fn random_cmat(&mut self, rows: usize, cols: usize, scale: f64) -> CMat {
        let n = rows * cols;
        let re = (0..n)
            .map(|_| scale * self.rng.gen_range(-1.0..1.0))
            .collect();
        let im = (0..n)
            .map(|_| scale * self.rng.gen_range(-1.0..1.0))
            .collect();
        CMat::from_parts(rows, cols, re, im).expect("finite random entries")
    }

    fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        10f64.powf(self.rng.gen_range(lo..hi))
    }

    pub fn next_pair(&mut self) -> (CMat, CMat) {
        let rows = self.rng.gen_range(1..=3);
        let cols = self.rng.gen_range(1..=3);
        let kind = self.counter % 7;
        self.counter += 1;
        match kind {
            0 | 1 => {
                let sf = self.log_uniform(-3.0, 2.0);
                let sg = self.log_uniform(-3.0, 2.0);
                (
                    self.random_cmat(rows, cols, sf),
                    self.random_cmat(rows, cols, sg),
                )
            }
            2..=5 => {
                let ratio = ADVERSARIAL_RATIOS[(kind - 2) as usize];
                let s = self.log_uniform(-3.0, 2.0);
                let f = self.random_cmat(rows, cols, s);
                let d = self.random_cmat(rows, cols, 1.0);
                let scale = ratio * cnorm(&f) / cnorm(&d).max(f64::MIN_POSITIVE);
                let g = f.add(&d.scale_real(scale)).expect("same shape");
                (f, g)
            }
            _ => {
                // near-zero, parallel pair G = lambda F with a complex unit phase
                let s = self.log_uniform(-6.0, 0.0);
                let f = self.random_cmat(rows, cols, s);
                let lambda = self.rng.gen_range(-2.0..2.0);
                let phase = if self.rng.gen_bool(0.5) {
                    Complex64::new(lambda, 0.0)
                } else {
                    Complex64::from_polar(lambda, self.rng.gen_range(0.0..1e-3))
                };
                let g = f.scale(phase);
                (f, g)
            }
        }
    }
}

/// Result of an empirical search for the two-sided `V`-comparison constant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct C3Report {
    pub p: f64,
    pub eps: f64,
    pub samples: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub c3: f64,
}

impl C3Report {
    pub fn structure_constants(&self) -> Result<StructureConstants> {
        Ok(StructureConstants {
            c1: c1_of(self.p)?,
            c2: c2_of(self.p)?,
            c3: self.c3,
        })
    }

    /// Whether `ratio` lies in the band `[1/c3, c3]`.
    pub fn in_band(&self, ratio: f64) -> bool {
        ratio >= 1.0 / self.c3 && ratio <= self.c3
    }
}

pub const C3_SAFETY_FACTOR: f64 = 2.0;
const CHUNK: usize = 1024;

fn chunk_seed(seed: u64, chunk: usize) -> u64 {
    seed ^ (chunk as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs `f` over `samples` pairs split into fixed-size seeded chunks, so the
/// merged result is independent of the thread schedule.
pub(crate) fn sample_chunks<T: Send>(
    samples: usize,
    seed: u64,
    f: impl Fn(&mut PairSampler, usize) -> T + Sync,
) -> Vec<T> {
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sampler = PairSampler::new(chunk_seed(seed, c));
            let count = CHUNK.min(samples - c * CHUNK);
            f(&mut sampler, count)
        })
        .collect()
}

/// Empirical extremes of the `V`-comparison ratio; `c3` is the larger of
/// `ratio_max` and `1/ratio_min`, times [`C3_SAFETY_FACTOR`].
pub fn c3_search(params: &FluxParams, samples: usize, seed: u64) -> Result<C3Report> {
    if samples < 1000 {
        return Err(Error::Domain(format!(
            "c3_search needs at least 1000 samples, got {samples}"
        )));
    }
    let extremes = sample_chunks(samples, seed, |sampler, count| {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for _ in 0..count {
            let (f, g) = sampler.next_pair();
            if let Ok(Some(r)) = v_ratio(params, &f, &g) {
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        (lo, hi)
    });
    let (ratio_min, ratio_max) = extremes
        .into_iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (l, h)| {
            (lo.min(l), hi.max(h))
        });
    if !(ratio_min.is_finite() && ratio_min > 0.0) {
        return Err(Error::InsufficientData("no valid ratio samples".into()));
    }
    Ok(C3Report {
        p: params.p,
        eps: params.eps,
        samples,
        ratio_min,
        ratio_max,
        c3: C3_SAFETY_FACTOR * ratio_max.max(1.0 / ratio_min),
    })
}

/// Counts of structure-inequality checks over a seeded sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureTestReport {
    pub p: f64,
    pub eps: f64,
    pub samples: usize,
    /// Largest relative mismatch in the hat/check identity for `<A(F)-A(G), F-G>`.
    pub identity_max_rel_err: f64,
    pub str1_violations: usize,
    pub str2_violations: usize,
    pub str3_violations: usize,
    /// Smallest `Re<A(F)-A(G), F-G> / lower_gap` observed.
    pub str1_min_ratio: f64,
    /// Largest `|A(F)-A(G)| / lipschitz_gap` observed.
    pub str2_max_ratio: f64,
    pub c3: C3Report,
    /// First violating pair in sample order, if any.
    pub first_violation: Option<ViolationSample>,
}

/// A pair breaking one of the structure inequalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationSample {
    /// `"str1"`, `"str2"` or `"str3"`.
    pub inequality: String,
    pub f: CMat,
    pub g: CMat,
    /// The checked ratio (lower bound, upper bound or `V`-comparison).
    pub ratio: f64,
}

fn note(rep: &mut StructureTestReport, inequality: &str, f: &CMat, g: &CMat, ratio: f64) {
    if rep.first_violation.is_none() {
        rep.first_violation = Some(ViolationSample {
            inequality: inequality.into(),
            f: f.clone(),
            g: g.clone(),
            ratio,
        });
    }
}

/// Relative slack granted to the inequality checks.
pub const INEQUALITY_SLACK: f64 = 1e-12;

/// Checks the identity and the three structure inequalities on `samples`
/// fresh pairs (seeded by `seed`), using a `c3` band from a separate search.
pub fn structure_test(
    params: &FluxParams,
    samples: usize,
    seed: u64,
    c3: C3Report,
) -> Result<StructureTestReport> {
    let c1 = c1_of(params.p)?;
    let c2 = c2_of(params.p)?;
    let partial = sample_chunks(
        samples,
        seed,
        |sampler, count| -> Result<StructureTestReport> {
            let mut rep = StructureTestReport {
                str1_min_ratio: f64::INFINITY,
                ..Default::default()
            };
            for _ in 0..count {
                let (f, g) = sampler.next_pair();
                let fa = flux(params, &f);
                let ga = flux(params, &g);
                let da = fa.sub(&ga)?;
                let d = f.sub(&g)?;
                let pair = cinner(&da, &d)?;
                let (re, im) = realified_pair(params, &f, &g)?;
                let scale = cnorm(&da) * cnorm(&d);
                if scale > 0.0 {
                    let err = (pair.re - re).abs().max((pair.im - im).abs()) / scale;
                    rep.identity_max_rel_err = rep.identity_max_rel_err.max(err);
                }
                let w = params.weight(f.norm_sqr() + g.norm_sqr());
                let dn2 = d.norm_sqr();
                if dn2 > 0.0 {
                    let lower = c1 * w * dn2;
                    if pair.re < lower * (1.0 - INEQUALITY_SLACK) {
                        rep.str1_violations += 1;
                        note(&mut rep, "str1", &f, &g, pair.re / lower);
                    }
                    rep.str1_min_ratio = rep.str1_min_ratio.min(pair.re / lower);
                    let upper = c2 * w * dn2.sqrt();
                    let lhs = cnorm(&da);
                    if lhs > upper * (1.0 + INEQUALITY_SLACK) {
                        rep.str2_violations += 1;
                        note(&mut rep, "str2", &f, &g, lhs / upper);
                    }
                    rep.str2_max_ratio = rep.str2_max_ratio.max(lhs / upper);
                }
                if let Some(r) = v_ratio(params, &f, &g)? {
                    if !c3.in_band(r) {
                        rep.str3_violations += 1;
                        note(&mut rep, "str3", &f, &g, r);
                    }
                }
            }
            Ok(rep)
        },
    );
    let mut total = StructureTestReport {
        p: params.p,
        eps: params.eps,
        samples,
        str1_min_ratio: f64::INFINITY,
        c3,
        ..Default::default()
    };
    for rep in partial {
        let rep = rep?;
        total.identity_max_rel_err = total.identity_max_rel_err.max(rep.identity_max_rel_err);
        total.str1_violations += rep.str1_violations;
        total.str2_violations += rep.str2_violations;
        total.str3_violations += rep.str3_violations;
        total.str1_min_ratio = total.str1_min_ratio.min(rep.str1_min_ratio);
        total.str2_max_ratio = total.str2_max_ratio.max(rep.str2_max_ratio);
        if total.first_violation.is_none() {
            total.first_violation = rep.first_violation;
        }
    }
    Ok(total)
}
