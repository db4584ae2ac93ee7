//! Smallest eigenpairs of the pencil `(K, diag(w))`.
//!
//! The pencil is reduced to the standard problem `Â y = λ y` with
//! `Â = W^{-1/2} K W^{-1/2}` (a Jacobi scaling, so high-contrast matrices
//! become well scaled) and `ψ = W^{-1/2} y`. The number of eigenvalues below
//! the threshold is fixed beforehand by the inertia of `Â − λ_max I`; the pairs
//! themselves come from a subspace expansion driven by the shift-invert
//! operator `(Â + δ I)^{-1}` with Rayleigh–Ritz extraction. Small problems go
//! straight to a dense solver.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::BandedMatrix;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const DENSE_LIMIT: usize = 600;
const MAX_OUTER: usize = 400;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EigenPairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// `vectors[j]` is w-orthonormal to the others.
    pub vectors: Vec<Vec<f64>>,
    /// Eigenvalues of the pencil strictly below the threshold (before capping).
    pub count_below: usize,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps pairs with `λ < threshold`, but always at least the first one.
    pub fn truncated(&self, threshold: f64) -> EigenPairs {
        let keep = self.values.iter().take_while(|&&l| l < threshold).count().max(1);
        EigenPairs {
            values: self.values[..keep].to_vec(),
            vectors: self.vectors[..keep].to_vec(),
            count_below: self.values.iter().filter(|&&l| l < threshold).count(),
        }
    }
}

/// All eigenpairs with `λ < lambda_max`, at most `m_cap` of them and never
/// fewer than one.
pub fn smallest_eigpairs(k: &CsrMatrix, w: &[f64], lambda_max: f64, m_cap: usize) -> Result<EigenPairs> {
    smallest_eigpairs_seeded(k, w, lambda_max, m_cap, 0x6d73_6665_6d31)
}

pub fn smallest_eigpairs_seeded(
    k: &CsrMatrix,
    w: &[f64],
    lambda_max: f64,
    m_cap: usize,
    seed: u64,
) -> Result<EigenPairs> {
    let n = k.nrows;
    assert_eq!(w.len(), n);
    assert!(w.iter().all(|&x| x > 0.0), "weights must be positive");
    let m_cap = m_cap.clamp(1, n);
    let scale: Vec<f64> = w.iter().map(|&x| 1.0 / x.sqrt()).collect();
    let mut a = k.clone();
    for i in 0..n {
        let (s, e) = (a.row_ptr[i], a.row_ptr[i + 1]);
        for p in s..e {
            let j = a.col_idx[p] as usize;
            a.values[p] *= scale[i] * scale[j];
        }
    }

    let (values, mut vectors, count_below) = if n <= DENSE_LIMIT {
        dense_pairs(&a, lambda_max, m_cap)
    } else {
        iterative_pairs(&a, lambda_max, m_cap, seed)?
    };

    for v in vectors.iter_mut() {
        for (x, s) in v.iter_mut().zip(&scale) {
            *x *= s;
        }
        fix_sign(v);
    }
    Ok(EigenPairs {
        values,
        vectors,
        count_below,
    })
}

/// Largest-magnitude entry made positive (first one on ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn dense_pairs(a: &CsrMatrix, lambda_max: f64, m_cap: usize) -> (Vec<f64>, Vec<Vec<f64>>, usize) {
    let n = a.nrows;
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in a.row(i) {
            d[(i, j)] += v;
        }
    }
    let d = (&d + d.transpose()) * 0.5;
    let eig = SymmetricEigen::new(d);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let count_below = order.iter().filter(|&&i| eig.eigenvalues[i] < lambda_max).count();
    let m = count_below.clamp(1, m_cap);
    let values = order[..m].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order[..m]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors, count_below)
}

/// Number of eigenvalues of `a` below `shift`, nudging the shift when the
/// unpivoted factorisation meets a tiny pivot.
fn count_below(a: &BandedMatrix, shift: f64) -> usize {
    if !shift.is_finite() {
        return a.dim();
    }
    let mut s = shift;
    for attempt in 0..8 {
        let mut shifted = a.clone();
        shifted.shift_diagonal(-s);
        if let Some((neg, _, _)) = shifted.inertia() {
            return neg;
        }
        s = shift * (1.0 + 1e-7 * (attempt + 1) as f64) + 1e-14;
    }
    log::warn!("inertia count failed near shift {shift:e}; assuming none below");
    0
}

fn iterative_pairs(
    a: &CsrMatrix,
    lambda_max: f64,
    m_cap: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
    let n = a.nrows;
    let banded = BandedMatrix::from_csr(a);
    let below = count_below(&banded, lambda_max);
    let m = below.clamp(1, m_cap);
    let anorm = (0..n)
        .map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let tol = RESIDUAL_TOL * anorm;

    let delta = if lambda_max.is_finite() && lambda_max > 0.0 {
        lambda_max.min(1e-1)
    } else {
        1e-3
    };
    let mut shifted = banded;
    shifted.shift_diagonal(delta);
    let chol = shifted.cholesky()?;
    let apply_inverse = |block: &mut DMatrix<f64>| {
        for mut col in block.column_iter_mut() {
            chol.solve_in_place(col.as_mut_slice());
        }
    };
    let apply_a = |block: &DMatrix<f64>| {
        let mut out = DMatrix::<f64>::zeros(n, block.ncols());
        for (src, mut dst) in block.column_iter().zip(out.column_iter_mut()) {
            a.mul_vec_into(src.as_slice(), dst.as_mut_slice());
        }
        out
    };

    let block = (m + (m / 4).max(8)).min(n);
    let qmax = (3 * block).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = DMatrix::<f64>::from_fn(n, block, |_, _| rng.gen::<f64>() - 0.5);
    apply_inverse(&mut start);
    apply_inverse(&mut start);
    let mut v = DMatrix::<f64>::zeros(n, 0);
    let mut av = DMatrix::<f64>::zeros(n, 0);
    let mut h = DMatrix::<f64>::zeros(0, 0);
    expand(&mut v, &mut av, &mut h, start, &apply_a);

    let mut worst = f64::INFINITY;
    let mut converged = 0;
    for _outer in 0..MAX_OUTER {
        let q = v.ncols();
        let eig = SymmetricEigen::new((&h + h.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
        let kept = block.min(q);
        let y = DMatrix::<f64>::from_fn(q, kept, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order[..kept].iter().map(|&i| eig.eigenvalues[i]).collect();
        let x = &v * &y;
        let ax = &av * &y;
        let mut resid = ax.clone();
        for (c, &t) in theta.iter().enumerate() {
            let mut col = resid.column_mut(c);
            col.axpy(-t, &x.column(c), 1.0);
        }
        let norms: Vec<f64> = resid.column_iter().map(|c| c.norm()).collect();
        converged = norms[..m].iter().take_while(|&&r| r <= tol).count();
        worst = norms[..m].iter().copied().fold(0.0, f64::max);
        if converged == m {
            let values = theta[..m].to_vec();
            let vectors = (0..m).map(|c| x.column(c).iter().copied().collect()).collect();
            return Ok((values, vectors, below));
        }

        let todo: Vec<usize> = (0..kept).filter(|&c| norms[c] > tol).collect();
        let mut corr = DMatrix::<f64>::from_fn(n, todo.len(), |r, c| resid[(r, todo[c])]);
        apply_inverse(&mut corr);

        if q + corr.ncols() > qmax {
            v = x;
            av = ax;
            h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(theta));
        }
        expand(&mut v, &mut av, &mut h, corr, &apply_a);
    }
    Err(Error::EigenNotConverged {
        iterations: MAX_OUTER,
        converged,
        wanted: m,
        worst_residual: worst,
    })
}

/// Orthonormalises `new` against `v` (two Gram–Schmidt passes), drops
/// dependent directions and appends the rest, extending `av = A v` and the
/// projected matrix `h = vᵀ A v`.
fn expand<F>(v: &mut DMatrix<f64>, av: &mut DMatrix<f64>, h: &mut DMatrix<f64>, mut new: DMatrix<f64>, apply_a: &F)
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let n = new.nrows();
    let before: Vec<f64> = new.column_iter().map(|c| c.norm()).collect();
    for _ in 0..2 {
        if v.ncols() > 0 {
            let coeff = v.tr_mul(&new);
            new -= &*v * coeff;
        }
    }
    let mut accepted: Vec<nalgebra::DVector<f64>> = Vec::new();
    for (c, col) in new.column_iter().enumerate() {
        let mut x = col.clone_owned();
        for _ in 0..2 {
            for prev in &accepted {
                let d = prev.dot(&x);
                x.axpy(-d, prev, 1.0);
            }
            if v.ncols() > 0 {
                let coeff = v.tr_mul(&x);
                x -= &*v * coeff;
            }
        }
        let nx = x.norm();
        if nx > 1e-10 * before[c].max(f64::MIN_POSITIVE) && nx > 0.0 {
            accepted.push(x / nx);
        }
    }
    if accepted.is_empty() {
        return;
    }
    let w = DMatrix::from_columns(&accepted);
    let aw = apply_a(&w);
    let q = v.ncols();
    let b = w.ncols();
    let cross = v.tr_mul(&aw);
    let inner = w.tr_mul(&aw);
    let mut hn = DMatrix::<f64>::zeros(q + b, q + b);
    hn.view_mut((0, 0), (q, q)).copy_from(h);
    hn.view_mut((0, q), (q, b)).copy_from(&cross);
    hn.view_mut((q, 0), (b, q)).copy_from(&cross.transpose());
    hn.view_mut((q, q), (b, b)).copy_from(&inner);
    *h = hn;
    let mut vn = DMatrix::<f64>::zeros(n, q + b);
    vn.view_mut((0, 0), (n, q)).copy_from(v);
    vn.view_mut((0, q), (n, b)).copy_from(&w);
    *v = vn;
    let mut avn = DMatrix::<f64>::zeros(n, q + b);
    avn.view_mut((0, 0), (n, q)).copy_from(av);
    avn.view_mut((0, q), (n, b)).copy_from(&aw);
    *av = avn;
}
