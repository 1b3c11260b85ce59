//! Values in `C^{N x n}`, their sesquilinear pairing and the hat/check
//! realifications into `R^{2N x n}`.
//!
//! Storage is split-real: `re` and `im` are separate row-major planes of
//! shape `N x n`, so the hat map is a concatenation and the check map a
//! signed swap.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of components / spatial columns accepted by [`CMat::zeros`].
pub const MAX_DIM: usize = 16;

/// An element of `C^{N x n}`: `N` rows (solution components) and `n`
/// columns (spatial directions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&rows) && (1..=MAX_DIM).contains(&cols),
            "CMat shape {rows}x{cols} out of range"
        );
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn from_parts(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
            return Err(Error::dimension(
                format!("1..={MAX_DIM} rows and columns"),
                format!("{rows}x{cols}"),
            ));
        }
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::dimension(
                format!("{} entries per plane", rows * cols),
                format!("re {}, im {}", re.len(), im.len()),
            ));
        }
        if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("CMat entries must be finite".into()));
        }
        Ok(Self { rows, cols, re, im })
    }

    /// Builds a matrix from complex entries given row by row.
    pub fn from_complex(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        let re = entries.iter().map(|z| z.re).collect();
        let im = entries.iter().map(|z| z.im).collect();
        Self::from_parts(rows, cols, re, im)
    }

    /// Single unit entry `E_{jd}` scaled by `value`.
    pub fn unit(rows: usize, cols: usize, row: usize, col: usize, value: Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        m.set(row, col, value);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        let k = row * self.cols + col;
        Complex64::new(self.re[k], self.im[k])
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        let k = row * self.cols + col;
        self.re[k] = value.re;
        self.im[k] = value.im;
    }

    #[inline]
    pub fn add_at(&mut self, row: usize, col: usize, value: Complex64) {
        let k = row * self.cols + col;
        self.re[k] += value.re;
        self.im[k] += value.im;
    }

    pub fn fill_zero(&mut self) {
        self.re.iter_mut().for_each(|v| *v = 0.0);
        self.im.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `|F|^2 = |F^R|^2 + |F^I|^2`.
    #[inline]
    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().map(|v| v * v).sum::<f64>() + self.im.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        let mut out = self.clone();
        for k in 0..self.re.len() {
            let z = alpha * Complex64::new(self.re[k], self.im[k]);
            out.re[k] = z.re;
            out.im[k] = z.im;
        }
        out
    }

    pub fn scale_real(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().map(|v| alpha * v).collect(),
            im: self.im.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn add(&self, other: &CMat) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &CMat) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.clone(),
            im: self.im.iter().map(|v| -v).collect(),
        }
    }

    fn zip_with(&self, other: &CMat, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self
                .re
                .iter()
                .zip(&other.re)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            im: self
                .im
                .iter()
                .zip(&other.im)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &CMat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }
}

/// An element of `R^{2N x n}`, the image of the hat and check maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealMat2N {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl RealMat2N {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    /// Row `j` as a slice of length `n`.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    /// Euclidean inner product on `R^{2N x n}`.
    pub fn dot(&self, other: &RealMat2N) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dimension(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &RealMat2N) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dimension(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// `<F, G> = sum_j (F_j^R.G_j^R + F_j^I.G_j^I + i(F_j^I.G_j^R - F_j^R.G_j^I))`,
/// linear in `F` and conjugate-linear in `G`.
pub fn cinner(f: &CMat, g: &CMat) -> Result<Complex64> {
    f.check_same_shape(g)?;
    let mut re = 0.0;
    let mut im = 0.0;
    for k in 0..f.re.len() {
        re += f.re[k] * g.re[k] + f.im[k] * g.im[k];
        im += f.im[k] * g.re[k] - f.re[k] * g.im[k];
    }
    Ok(Complex64::new(re, im))
}

/// `|F| = (|F^R|^2 + |F^I|^2)^{1/2}`.
pub fn cnorm(f: &CMat) -> f64 {
    f.norm_sqr().sqrt()
}

/// `(F_1^R, ..., F_N^R, F_1^I, ..., F_N^I)`.
pub fn hat(f: &CMat) -> RealMat2N {
    let mut entries = Vec::with_capacity(2 * f.re.len());
    entries.extend_from_slice(&f.re);
    entries.extend_from_slice(&f.im);
    RealMat2N {
        rows: 2 * f.rows,
        cols: f.cols,
        entries,
    }
}

/// `(-F_1^I, ..., -F_N^I, F_1^R, ..., F_N^R)`; equals `hat(i F)`.
pub fn check(f: &CMat) -> RealMat2N {
    let mut entries = Vec::with_capacity(2 * f.re.len());
    entries.extend(f.im.iter().map(|v| -v));
    entries.extend_from_slice(&f.re);
    RealMat2N {
        rows: 2 * f.rows,
        cols: f.cols,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rng: &mut impl Rng, rows: usize, cols: usize) -> CMat {
        let re = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let im = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        CMat::from_parts(rows, cols, re, im).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn unit_entries() {
        let e = CMat::unit(1, 2, 0, 0, Complex64::new(1.0, 0.0));
        let ie = CMat::unit(1, 2, 0, 0, Complex64::new(0.0, 1.0));
        assert_eq!(cinner(&e, &e).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(cinner(&ie, &e).unwrap(), Complex64::new(0.0, 1.0));

        assert_eq!(hat(&e).entries(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(hat(&ie).entries(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(check(&e).entries(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(check(&ie).entries(), &[-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(cnorm(&CMat::zeros(2, 3)), 0.0);
        let f = CMat::unit(1, 1, 0, 0, Complex64::new(3.0, 4.0));
        assert_eq!(cnorm(&f), 5.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let f = CMat::zeros(1, 2);
        let g = CMat::zeros(2, 2);
        assert!(matches!(cinner(&f, &g), Err(Error::Dimension { .. })));
        assert!(f.sub(&g).is_err());
        assert!(CMat::from_parts(1, 2, vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(CMat::from_parts(1, 1, vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn realification_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let f = random_cmat(&mut rng, 2, 3);
            let g = random_cmat(&mut rng, 2, 3);
            let lhs = cinner(&f, &g).unwrap();
            let re = hat(&f).dot(&hat(&g)).unwrap();
            let im = hat(&f).dot(&check(&g)).unwrap();
            let scale = cnorm(&f) * cnorm(&g);
            assert!((lhs.re - re).abs() <= 1e-14 * scale);
            assert!((lhs.im - im).abs() <= 1e-14 * scale);
        }
    }

    #[test]
    fn norm_equivalence_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let f = random_cmat(&mut rng, 3, 2);
            let n = cnorm(&f);
            assert!(rel(hat(&f).norm(), n) <= 1e-15);
            assert!(rel(check(&f).norm(), n) <= 1e-15);
            assert!(rel(n * n, cinner(&f, &f).unwrap().re) <= 1e-14);
            assert_eq!(cinner(&f, &f).unwrap().im, 0.0);
        }
    }

    #[test]
    fn check_is_hat_of_i_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let f = random_cmat(&mut rng, 2, 2);
            let lhs = check(&f);
            let rhs = hat(&f.scale(Complex64::i()));
            assert_eq!(lhs.entries(), rhs.entries());
        }
    }

    #[test]
    fn hermitian_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let f = random_cmat(&mut rng, 2, 3);
        let g = random_cmat(&mut rng, 2, 3);
        assert_eq!(cinner(&f, &g).unwrap(), cinner(&g, &f).unwrap().conj());
    }
}
