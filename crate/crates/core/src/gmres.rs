//! Left-preconditioned GMRES without restarts.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::spectral::Preconditioner;
use crate::sparse::{axpy, dot, norm, CsrMatrix};

pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Preconditioned residual relative to `‖M⁻¹ f‖`, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub basis_recomputed: bool,
    pub basis_seconds: f64,
    pub coarse_seconds: f64,
    pub solve_seconds: f64,
}

/// Solves `K x = f` to `‖M⁻¹(f − K x)‖ ≤ tol · ‖M⁻¹ f‖`.
pub fn gmres_solve<P: Preconditioner + ?Sized>(
    k: &CsrMatrix,
    f: &[f64],
    precond: &P,
    tol: f64,
    x0: Option<&[f64]>,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let start = Instant::now();
    let n = f.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut stats = SolveStats::default();

    let ref_norm = norm(&precond.apply(f));
    if ref_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        stats.residual_history.push(0.0);
        stats.solve_seconds = start.elapsed().as_secs_f64();
        return Ok((x, stats));
    }
    let mut r = vec![0.0; n];
    k.residual_into(f, &x, &mut r);
    let r = precond.apply(&r);
    let beta = norm(&r);
    stats.residual_history.push(beta / ref_norm);
    if beta <= tol * ref_norm {
        stats.solve_seconds = start.elapsed().as_secs_f64();
        return Ok((x, stats));
    }

    let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
    // Columns of the Hessenberg matrix after rotation, i.e. the R factor.
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![beta];
    let mut w = vec![0.0; n];

    for j in 0..max_iter {
        k.mul_vec_into(&basis[j], &mut w);
        let mut v = precond.apply(&w);
        let mut col = vec![0.0; j + 2];
        for (i, q) in basis.iter().enumerate() {
            let hij = dot(&v, q);
            col[i] = hij;
            axpy(-hij, q, &mut v);
        }
        let hnext = norm(&v);
        col[j + 1] = hnext;
        for i in 0..j {
            let (a, b) = (col[i], col[i + 1]);
            col[i] = cs[i] * a + sn[i] * b;
            col[i + 1] = -sn[i] * a + cs[i] * b;
        }
        let (a, b) = (col[j], col[j + 1]);
        let rho = a.hypot(b);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b / rho) };
        cs.push(c);
        sn.push(s);
        col[j] = rho;
        col[j + 1] = 0.0;
        let gj = g[j];
        g[j] = c * gj;
        g.push(-s * gj);
        h.push(col);
        stats.iterations = j + 1;
        let res = g[j + 1].abs();
        stats.residual_history.push(res / ref_norm);

        let done = res <= tol * ref_norm || hnext <= 1e-300;
        if done || j + 1 == max_iter {
            let m = j + 1;
            let mut y = vec![0.0; m];
            for i in (0..m).rev() {
                let mut s = g[i];
                for l in i + 1..m {
                    s -= h[l][i] * y[l];
                }
                y[i] = s / h[i][i];
            }
            for (yi, q) in y.iter().zip(&basis) {
                axpy(*yi, q, &mut x);
            }
            stats.solve_seconds = start.elapsed().as_secs_f64();
            if done {
                return Ok((x, stats));
            }
            return Err(Error::GmresNotConverged {
                iterations: m,
                final_residual: res / ref_norm,
                history: stats.residual_history,
            });
        }
        v.iter_mut().for_each(|e| *e /= hnext);
        basis.push(v);
    }
    unreachable!("loop returns on the final iteration")
}
