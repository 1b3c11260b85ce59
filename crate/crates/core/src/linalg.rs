//! Banded real matrices and their LU factorization without pivoting.
//!
//! The realified Galerkin operators have a positive definite symmetric part
//! under the admissibility conditions, so elimination without row exchanges
//! is stable for them and keeps all fill inside the band.

use crate::error::{Error, Result};

/// Square band matrix; `A[i][j]` lives at `data[i * width + (j + kl - i)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            i < self.n && j < self.n && self.in_band(i, j),
            "({i},{j}) outside band"
        );
        i * self.width() + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` to `A[i][j]`; the entry must lie inside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i},{j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let k = self.offset(i, j);
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let w = self.width();
        (0..self.n)
            .map(|i| {
                let j0 = i.saturating_sub(self.kl);
                let j1 = (i + self.ku).min(self.n - 1);
                let row = &self.data[i * w..(i + 1) * w];
                (j0..=j1).map(|j| row[j + self.kl - i] * x[j]).sum()
            })
            .collect()
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Dense copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// In-place LU factorization; fails on a pivot that is zero or tiny
    /// relative to the largest diagonal entry.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku, w) = (self.kl, self.ku, self.width());
        let scale = (0..n)
            .map(|i| self.data[i * w + kl].abs())
            .fold(0.0f64, f64::max);
        let threshold = scale * 1e-14;
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if !(pivot.is_finite() && pivot.abs() > threshold) {
                return Err(Error::Singular { row: k });
            }
            let last_col = (k + ku).min(n - 1);
            let last_row = (k + kl).min(n - 1);
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let pivot_row = &head[k * w + kl + 1..k * w + kl + 1 + (last_col - k)];
            for r in (k + 1)..=last_row {
                let row = &mut tail[(r - k - 1) * w..(r - k) * w];
                let c0 = k + kl - r;
                let l = row[c0] / pivot;
                row[c0] = l;
                if l != 0.0 {
                    for (a, b) in row[c0 + 1..c0 + 1 + pivot_row.len()]
                        .iter_mut()
                        .zip(pivot_row)
                    {
                        *a -= l * b;
                    }
                }
            }
        }
        Ok(BandLu { lu: self })
    }
}

/// LU factors of a [`BandMatrix`] with unit lower triangle.
#[derive(Clone, Debug)]
pub struct BandLu {
    lu: BandMatrix,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = &self.lu;
        assert_eq!(x.len(), m.n);
        let (n, kl, ku, w) = (m.n, m.kl, m.ku, m.width());
        for i in 0..n {
            let j0 = i.saturating_sub(kl);
            let row = &m.data[i * w..(i + 1) * w];
            let mut s = x[i];
            for j in j0..i {
                s -= row[j + kl - i] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let j1 = (i + ku).min(n - 1);
            let row = &m.data[i * w..(i + 1) * w];
            let mut s = x[i];
            for j in (i + 1)..=j1 {
                s -= row[j + kl - i] * x[j];
            }
            x[i] = s / row[kl];
        }
    }
}

/// Factors and solves `A x = b` in one call.
pub fn band_solve(a: BandMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(a.factor()?.solve(b))
}
