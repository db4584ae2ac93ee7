//! Symmetric banded factorisations.
//!
//! Every direct solve in the crate goes through here: the fine-scale reference
//! solver, the local shift-invert operators of the eigensolver, the coarse
//! matrix and the PDE filter. Structured-grid matrices ordered y-fastest have a
//! bandwidth of about two grid columns, which keeps the factors small.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower band of a symmetric matrix, row-major: row `i` stores columns `i-bw ..= i`.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    /// Takes the lower triangle of `a`; the upper triangle is assumed to mirror it.
    pub fn from_csr(a: &CsrMatrix) -> Self {
        let mut m = Self::zeros(a.nrows, a.bandwidth());
        for i in 0..a.nrows {
            for (j, v) in a.row(i) {
                if j <= i {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at (i, j) with j ≤ i.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.band[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.band[self.idx(i, j)]
        }
    }

    pub fn shift_diagonal(&mut self, sigma: f64) {
        for i in 0..self.n {
            let k = self.idx(i, i);
            self.band[k] += sigma;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.band[self.idx(i, i)]).sum()
    }

    /// In-place Cholesky factorisation A = L Lᵀ.
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let band = &mut self.band;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                let s = band[ri + j] - dot4(&band[ri + lo..ri + j], &band[rj + lo..rj + j]);
                if i == j {
                    if s.is_nan() || s <= 0.0 {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    band[ri + i] = s.sqrt();
                } else {
                    band[ri + j] = s / band[rj + j];
                }
            }
        }
        Ok(BandedCholesky { l: self })
    }

    /// Number of negative, zero and positive pivots of an unpivoted LDLᵀ
    /// factorisation. By Sylvester's law of inertia this counts the eigenvalues
    /// of the matrix below, at and above zero. Tiny pivots are reported as
    /// `None` so that the caller can perturb the shift.
    pub fn inertia(&self) -> Option<(usize, usize, usize)> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut l = self.band.clone();
        let mut d = vec![0.0; n];
        let mut t = vec![0.0; bw + 1];
        let scale = (0..n)
            .map(|i| self.band[i * w + bw].abs())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let (mut neg, mut zero, mut pos) = (0, 0, 0);
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let rj = j * w + bw - j;
                let mut s = l[ri + j];
                for k in lo..j {
                    s -= t[k - lo_i] * l[rj + k];
                }
                if j < i {
                    let lij = s / d[j];
                    l[ri + j] = lij;
                    t[j - lo_i] = lij * d[j];
                } else {
                    d[i] = s;
                }
            }
            if !d[i].is_finite() || d[i].abs() < 1e-13 * scale {
                return None;
            }
            if d[i] < 0.0 {
                neg += 1;
            } else if d[i] == 0.0 {
                zero += 1;
            } else {
                pos += 1;
            }
        }
        Some((neg, zero, pos))
    }
}

#[derive(Clone, Debug)]
pub struct BandedCholesky {
    l: BandedMatrix,
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.l.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.l.n, self.l.bw, self.l.bw + 1);
        let band = &self.l.band;
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            x[i] = (x[i] - dot4(&band[ri + lo..ri + i], &x[lo..i])) / band[ri + i];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let xi = x[i] / band[ri + i];
            x[i] = xi;
            for (xk, l) in x[lo..i].iter_mut().zip(&band[ri + lo..ri + i]) {
                *xk -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// SPD solver for a general sparse matrix: banded Cholesky in the original or
/// the RCM order, whichever has the narrower band.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    perm: Vec<usize>,
    factor: BandedCholesky,
}

impl SparseCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let rcm = crate::sparse::reverse_cuthill_mckee(a);
        let pa = a.permuted(&rcm);
        let (perm, pa) = if pa.bandwidth() < a.bandwidth() {
            (rcm, pa)
        } else {
            ((0..a.nrows).collect(), a.clone())
        };
        let factor = BandedMatrix::from_csr(&pa).cholesky()?;
        Ok(Self { perm, factor })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut pb: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        self.factor.solve_in_place(&mut pb);
        let mut x = vec![0.0; b.len()];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = pb[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, bw: usize) -> BandedMatrix {
        let mut m = BandedMatrix::zeros(n, bw);
        for i in 0..n {
            m.add(i, i, 4.0 + i as f64 * 0.1);
            for k in 1..=bw.min(i) {
                m.add(i, i - k, -1.0 / (k as f64 + 1.0));
            }
        }
        m
    }

    fn dense_mul(m: &BandedMatrix, x: &[f64]) -> Vec<f64> {
        (0..m.dim())
            .map(|i| (0..m.dim()).map(|j| m.get(i, j) * x[j]).sum())
            .collect()
    }

    #[test]
    fn cholesky_solves() {
        let m = spd(30, 4);
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let b = dense_mul(&m, &x);
        let f = m.clone().cholesky().unwrap();
        let y = f.solve(&b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = spd(5, 1);
        m.shift_diagonal(-10.0);
        assert!(matches!(m.cholesky(), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn inertia_counts_eigenvalues_below_shift() {
        // diag(1..=6) with weak coupling; shifting by 3.5 leaves three negatives.
        let mut m = BandedMatrix::zeros(6, 1);
        for i in 0..6 {
            m.add(i, i, (i + 1) as f64);
            if i > 0 {
                m.add(i, i - 1, 0.01);
            }
        }
        m.shift_diagonal(-3.5);
        assert_eq!(m.inertia(), Some((3, 0, 3)));
    }
}
