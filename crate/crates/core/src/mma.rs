//! Method of moving asymptotes for one objective and one inequality
//! constraint, following Svanberg's 2007 MMA/GCMMA notes. The subproblem
//! dual is one-dimensional and solved by bisection.

use crate::error::{Error, Result};

const RAA0: f64 = 1e-5;
const ALBEFA: f64 = 0.1;
const MOVE: f64 = 1.0;
const SHRINK: f64 = 0.7;
const GROW: f64 = 1.2;
const ASYMIN: f64 = 1e-3;
/// Largest asymptote distance as a multiple of the initial one. Scaling with
/// `asyinit` keeps steps bounded when a steep projection follows the design.
const ASYMAX_FACTOR: f64 = 10.0;
/// Penalty on the elastic variable of the constraint.
const C_ELASTIC: f64 = 1000.0;
const D_ELASTIC: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct MmaState {
    pub xmin: Vec<f64>,
    pub xmax: Vec<f64>,
    /// Initial asymptote distance as a fraction of `xmax − xmin`.
    pub asyinit: f64,
    /// Smallest asymptote distance, as a fraction of `xmax − xmin`.
    pub asymin: f64,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    iter: usize,
}

/// Initial asymptote fraction `0.5 / (1 + β)`.
pub fn initial_asymptote(beta: f64) -> f64 {
    0.5 / (1.0 + beta)
}

impl MmaState {
    pub fn new(x0: &[f64], xmin: Vec<f64>, xmax: Vec<f64>, asyinit: f64) -> Self {
        Self {
            xmin,
            xmax,
            asyinit,
            asymin: ASYMIN,
            xold1: x0.to_vec(),
            xold2: x0.to_vec(),
            low: vec![0.0; x0.len()],
            upp: vec![0.0; x0.len()],
            iter: 0,
        }
    }

    /// Forgets the iteration history; the next two updates use the initial
    /// asymptotes again.
    pub fn restart(&mut self, x: &[f64], asyinit: f64) {
        self.asyinit = asyinit;
        self.xold1 = x.to_vec();
        self.xold2 = x.to_vec();
        self.iter = 0;
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// One MMA step for `min f s.t. g ≤ 0`. Returns the new design.
    pub fn update(&mut self, x: &[f64], df: &[f64], g: f64, dg: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        self.iter += 1;
        if g > 0.0 && dg.iter().all(|&d| d == 0.0) {
            return Err(Error::Optimizer(
                "MMA: constraint violated with a zero constraint gradient".into(),
            ));
        }
        for j in 0..n {
            let span = (self.xmax[j] - self.xmin[j]).max(1e-12);
            if self.iter <= 2 {
                self.low[j] = x[j] - self.asyinit * span;
                self.upp[j] = x[j] + self.asyinit * span;
            } else {
                let osc = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if osc < 0.0 {
                    SHRINK
                } else if osc > 0.0 {
                    GROW
                } else {
                    1.0
                };
                let low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                let dmin = self.asymin * span;
                let dmax = (ASYMAX_FACTOR * self.asyinit * span).max(dmin);
                self.low[j] = low.clamp(x[j] - dmax, x[j] - dmin);
                self.upp[j] = upp.clamp(x[j] + dmin, x[j] + dmax);
            }
        }

        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut p1 = vec![0.0; n];
        let mut q1 = vec![0.0; n];
        let mut b = -g;
        for j in 0..n {
            let span = (self.xmax[j] - self.xmin[j]).max(1e-12);
            let (l, u) = (self.low[j], self.upp[j]);
            alpha[j] = self.xmin[j].max(l + ALBEFA * (x[j] - l)).max(x[j] - MOVE * span);
            beta[j] = self.xmax[j].min(u - ALBEFA * (u - x[j])).min(x[j] + MOVE * span);
            let ux2 = (u - x[j]).powi(2);
            let xl2 = (x[j] - l).powi(2);
            let reg = RAA0 / span;
            p0[j] = ux2 * (1.001 * df[j].max(0.0) + 0.001 * (-df[j]).max(0.0) + reg);
            q0[j] = xl2 * (0.001 * df[j].max(0.0) + 1.001 * (-df[j]).max(0.0) + reg);
            p1[j] = ux2 * (1.001 * dg[j].max(0.0) + 0.001 * (-dg[j]).max(0.0) + reg);
            q1[j] = xl2 * (0.001 * dg[j].max(0.0) + 1.001 * (-dg[j]).max(0.0) + reg);
            b += p1[j] / (u - x[j]) + q1[j] / (x[j] - l);
        }

        let x_of = |lam: f64| -> Vec<f64> {
            (0..n)
                .map(|j| {
                    let p = (p0[j] + lam * p1[j]).sqrt();
                    let q = (q0[j] + lam * q1[j]).sqrt();
                    ((p * self.low[j] + q * self.upp[j]) / (p + q)).clamp(alpha[j], beta[j])
                })
                .collect()
        };
        // Derivative of the dual function: constraint approximation minus the
        // elastic variable.
        let dual_grad = |lam: f64| -> f64 {
            let xs = x_of(lam);
            let mut s = -b;
            for j in 0..n {
                s += p1[j] / (self.upp[j] - xs[j]) + q1[j] / (xs[j] - self.low[j]);
            }
            s - ((lam - C_ELASTIC) / D_ELASTIC).max(0.0)
        };

        let lam = if dual_grad(0.0) <= 0.0 {
            0.0
        } else {
            let mut hi = 1.0;
            while dual_grad(hi) > 0.0 {
                hi *= 2.0;
                if hi > 1e12 {
                    break;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if dual_grad(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-10 * hi.max(1e-10) {
                    break;
                }
            }
            0.5 * (lo + hi)
        };
        let xnew = x_of(lam);
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        Ok(xnew)
    }
}
