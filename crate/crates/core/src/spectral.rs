//! Spectral multiscale coarse space and the two-level preconditioner built on it.
//!
//! Each agglomerate contributes the lowest eigenvectors of its local pencil
//! `(K_ω, diag K_ω)`, multiplied by the bilinear coarse hat of its node. The
//! restriction `R` is never formed: every agglomerate keeps a reference to the
//! eigenvector block of its class and applies the hat weights on the fly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::banded::{BandedCholesky, BandedMatrix};
use crate::eigen::{smallest_eigpairs, EigenPairs};
use crate::error::{Error, Result};
use crate::fem::{assemble_local, ElementStiffness};
use crate::mesh::{Agglomerate, ClassMap, MeshTopology};
use crate::sparse::CsrMatrix;

/// Hat weight `χ_i` at every local node of an agglomerate (y-fastest).
pub fn hat_weights(mesh: &MeshTopology, agg: &Agglomerate) -> Vec<f64> {
    let (clx, cly) = agg.centre_local(mesh);
    let n = mesh.n as f64;
    let mut chi = Vec::with_capacity(agg.nodes_x() * agg.nodes_y());
    for lx in 0..agg.nodes_x() {
        let wx = 1.0 - lx.abs_diff(clx) as f64 / n;
        for ly in 0..agg.nodes_y() {
            let wy = 1.0 - ly.abs_diff(cly) as f64 / n;
            chi.push((wx * wy).max(0.0));
        }
    }
    chi
}

/// `Σ_i χ_i` at every fine node; identically one for a valid partition.
pub fn partition_sum(mesh: &MeshTopology, aggs: &[Agglomerate]) -> Vec<f64> {
    let mut sum = vec![0.0; mesh.num_nodes()];
    for agg in aggs {
        let chi = hat_weights(mesh, agg);
        for (k, &d) in agg.fine_dofs.iter().step_by(2).enumerate() {
            sum[d / 2] += chi[k];
        }
    }
    sum
}

/// Retained eigenpairs of one agglomerate class. `psi` is `|ω| × N`.
#[derive(Clone, Debug)]
pub struct ClassModes {
    pub values: Vec<f64>,
    pub psi: DMatrix<f64>,
    /// Eigenvalues below the threshold the modes were computed for.
    pub count_below: usize,
}

impl ClassModes {
    fn from_pairs(p: EigenPairs) -> Self {
        let rows = p.vectors[0].len();
        let psi = DMatrix::from_fn(rows, p.len(), |r, c| p.vectors[c][r]);
        Self {
            values: p.values,
            psi,
            count_below: p.count_below,
        }
    }

    /// Modes with `λ < threshold`, never fewer than one.
    pub fn truncated(&self, threshold: f64) -> Self {
        let keep = self.values.iter().take_while(|&&l| l < threshold).count().max(1);
        Self {
            values: self.values[..keep].to_vec(),
            psi: self.psi.columns(0, keep).into_owned(),
            count_below: self.values.iter().filter(|&&l| l < threshold).count(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One eigensolve per class, in parallel, on the representative agglomerate.
pub fn compute_class_modes(
    mesh: &MeshTopology,
    k0: &ElementStiffness,
    moduli: &[f64],
    aggs: &[Agglomerate],
    classes: &ClassMap,
    lambda_threshold: f64,
    max_modes: usize,
) -> Result<Vec<ClassModes>> {
    (0..classes.num_classes())
        .into_par_iter()
        .map(|c| {
            let agg = &aggs[classes.representative(c)];
            let (k, w) = assemble_local(mesh, k0, moduli, agg);
            let pairs = smallest_eigpairs(&k, &w, lambda_threshold, max_modes)?;
            Ok(ClassModes::from_pairs(pairs))
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Slot {
    dofs: Vec<usize>,
    /// Hat weight per local DOF, zero on Dirichlet DOFs.
    chi: Vec<f64>,
    class: usize,
    offset: usize,
    count: usize,
    origin: (usize, usize),
    extent: (usize, usize),
}

/// Coarse space `span{χ_i ψ_j}` with implicit restriction operator.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub lambda_threshold: f64,
    classes: Arc<Vec<ClassModes>>,
    slots: Vec<Slot>,
    num_coarse: usize,
    num_fine: usize,
    grid: (usize, usize, usize),
}

impl SpectralBasis {
    /// `aggs` must be in the order produced by `build_agglomerates`.
    pub fn from_modes(
        mesh: &MeshTopology,
        aggs: &[Agglomerate],
        modes: Arc<Vec<ClassModes>>,
        lambda_threshold: f64,
    ) -> Self {
        let mut offset = 0;
        let slots = aggs
            .iter()
            .map(|agg| {
                let chi_nodes = hat_weights(mesh, agg);
                let chi = agg
                    .fine_dofs
                    .iter()
                    .enumerate()
                    .map(|(k, &d)| if mesh.is_dirichlet(d) { 0.0 } else { chi_nodes[k / 2] })
                    .collect();
                let count = modes[agg.class_id].len();
                let slot = Slot {
                    dofs: agg.fine_dofs.clone(),
                    chi,
                    class: agg.class_id,
                    offset,
                    count,
                    origin: agg.origin,
                    extent: agg.extent,
                };
                offset += count;
                slot
            })
            .collect();
        Self {
            lambda_threshold,
            classes: modes,
            slots,
            num_coarse: offset,
            num_fine: mesh.num_dofs(),
            grid: (mesh.my, mesh.mx, mesh.n),
        }
    }

    /// Same space restricted to eigenvalues below a smaller threshold.
    pub fn truncated(&self, mesh: &MeshTopology, aggs: &[Agglomerate], threshold: f64) -> Self {
        let modes: Vec<ClassModes> = self.classes.iter().map(|m| m.truncated(threshold)).collect();
        Self::from_modes(mesh, aggs, Arc::new(modes), threshold)
    }

    /// Coarse space dimension `N_t`.
    pub fn num_coarse(&self) -> usize {
        self.num_coarse
    }

    pub fn class_modes(&self) -> &[ClassModes] {
        &self.classes
    }

    /// `(class, mode, λ)` for every retained mode.
    pub fn spectrum(&self) -> Vec<(usize, usize, f64)> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(c, m)| m.values.iter().enumerate().map(move |(j, &l)| (c, j, l)))
            .collect()
    }

    /// `c = R r`
    pub fn restrict(&self, r: &[f64]) -> Vec<f64> {
        debug_assert_eq!(r.len(), self.num_fine);
        let parts: Vec<DVector<f64>> = self
            .slots
            .par_iter()
            .map(|s| {
                let t = DVector::from_iterator(s.dofs.len(), s.dofs.iter().zip(&s.chi).map(|(&d, &x)| x * r[d]));
                self.classes[s.class].psi.tr_mul(&t)
            })
            .collect();
        let mut c = vec![0.0; self.num_coarse];
        for (s, p) in self.slots.iter().zip(parts) {
            c[s.offset..s.offset + s.count].copy_from_slice(p.as_slice());
        }
        c
    }

    /// `z = Rᵀ c`
    pub fn prolong(&self, c: &[f64]) -> Vec<f64> {
        debug_assert_eq!(c.len(), self.num_coarse);
        let parts: Vec<DVector<f64>> = self
            .slots
            .par_iter()
            .map(|s| {
                let ci = DVector::from_column_slice(&c[s.offset..s.offset + s.count]);
                &self.classes[s.class].psi * ci
            })
            .collect();
        let mut z = vec![0.0; self.num_fine];
        for (s, p) in self.slots.iter().zip(parts) {
            for ((&d, &x), v) in s.dofs.iter().zip(&s.chi).zip(p.iter()) {
                z[d] += x * v;
            }
        }
        z
    }

    /// Rows of `R` as dense vectors. Only for small problems.
    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.num_coarse);
        for s in &self.slots {
            let psi = &self.classes[s.class].psi;
            for j in 0..s.count {
                let mut row = vec![0.0; self.num_fine];
                for (k, (&d, &x)) in s.dofs.iter().zip(&s.chi).enumerate() {
                    row[d] = x * psi[(k, j)];
                }
                rows.push(row);
            }
        }
        rows
    }

    /// `K_c = R K Rᵀ` for the stiffness defined by `moduli`, accumulated one
    /// coarse cell at a time, then regularised and factorised.
    pub fn factorise(&self, mesh: &MeshTopology, k0: &ElementStiffness, moduli: &[f64]) -> Result<CoarseFactor> {
        let kc = self.coarse_matrix(mesh, k0, moduli);
        CoarseFactor::new(kc)
    }

    pub fn coarse_matrix(&self, mesh: &MeshTopology, k0: &ElementStiffness, moduli: &[f64]) -> BandedMatrix {
        let (my, mx, n) = self.grid;
        let agg_of = |ax: usize, ay: usize| ax * (mx + 1) + ay;
        let cells: Vec<(usize, usize)> = (0..my).flat_map(|cx| (0..mx).map(move |cy| (cx, cy))).collect();

        let mut bw = 0;
        for &(cx, cy) in &cells {
            let ids = [agg_of(cx, cy), agg_of(cx, cy + 1), agg_of(cx + 1, cy), agg_of(cx + 1, cy + 1)];
            let lo = ids.iter().map(|&i| self.slots[i].offset).min().unwrap();
            let hi = ids.iter().map(|&i| self.slots[i].offset + self.slots[i].count).max().unwrap();
            bw = bw.max(hi - lo - 1);
        }

        let nn = n + 1;
        let ndc = 2 * nn * nn;
        let blocks: Vec<([usize; 4], DMatrix<f64>)> = cells
            .par_iter()
            .map(|&(cx, cy)| {
                let ids = [agg_of(cx, cy), agg_of(cx, cy + 1), agg_of(cx + 1, cy), agg_of(cx + 1, cy + 1)];
                let ncols: usize = ids.iter().map(|&i| self.slots[i].count).sum();
                let mut phi = DMatrix::<f64>::zeros(ndc, ncols);
                let mut col = 0;
                for &i in &ids {
                    let s = &self.slots[i];
                    let psi = &self.classes[s.class].psi;
                    let sny = s.extent.1 + 1;
                    for a in 0..nn {
                        for b in 0..nn {
                            let lx = cx * n + a - s.origin.0;
                            let ly = cy * n + b - s.origin.1;
                            let local = lx * sny + ly;
                            for comp in 0..2 {
                                let ld = 2 * local + comp;
                                let x = s.chi[ld];
                                if x == 0.0 {
                                    continue;
                                }
                                let row = 2 * (a * nn + b) + comp;
                                for j in 0..s.count {
                                    phi[(row, col + j)] = x * psi[(ld, j)];
                                }
                            }
                        }
                    }
                    col += s.count;
                }
                let mut kphi = DMatrix::<f64>::zeros(ndc, ncols);
                let mut pe = [0.0; 8];
                for ea in 0..n {
                    for eb in 0..n {
                        let e = mesh.element(cx * n + ea, cy * n + eb);
                        let ee = moduli[e];
                        let n0 = ea * nn + eb;
                        let n1 = (ea + 1) * nn + eb;
                        let nodes = [n0, n1, n1 + 1, n0 + 1];
                        let dofs = nodes.map(|q| [2 * q, 2 * q + 1]);
                        let dofs: [usize; 8] = std::array::from_fn(|k| dofs[k / 2][k % 2]);
                        for j in 0..ncols {
                            let pc = phi.column(j);
                            let mut nz = false;
                            for k in 0..8 {
                                pe[k] = pc[dofs[k]];
                                nz |= pe[k] != 0.0;
                            }
                            if !nz {
                                continue;
                            }
                            let mut kc = kphi.column_mut(j);
                            for (a, row) in k0.k.iter().enumerate() {
                                let v: f64 = row.iter().zip(&pe).map(|(x, y)| x * y).sum();
                                kc[dofs[a]] += ee * v;
                            }
                        }
                    }
                }
                (ids, phi.tr_mul(&kphi))
            })
            .collect();

        let mut kc = BandedMatrix::zeros(self.num_coarse, bw);
        for (ids, block) in blocks {
            let index: Vec<usize> = ids
                .iter()
                .flat_map(|&i| {
                    let s = &self.slots[i];
                    s.offset..s.offset + s.count
                })
                .collect();
            for (a, &gi) in index.iter().enumerate() {
                for (b, &gj) in index.iter().enumerate() {
                    if gj <= gi {
                        kc.add(gi, gj, 0.5 * (block[(a, b)] + block[(b, a)]));
                    }
                }
            }
        }
        kc
    }
}

/// Regularised Cholesky factor of the coarse matrix.
#[derive(Clone, Debug)]
pub struct CoarseFactor {
    factor: BandedCholesky,
    pub regularisation: f64,
}

impl CoarseFactor {
    /// Adds `1e-12 · trace / N_t` to the diagonal; grows the shift tenfold on
    /// failure, up to six times.
    pub fn new(kc: BandedMatrix) -> Result<Self> {
        let nt = kc.dim().max(1);
        let mut eps = 1e-12 * kc.trace() / nt as f64;
        let mut last = None;
        for _ in 0..7 {
            let mut m = kc.clone();
            m.shift_diagonal(eps);
            match m.cholesky() {
                Ok(factor) => {
                    return Ok(Self {
                        factor,
                        regularisation: eps,
                    })
                }
                Err(e) => {
                    log::warn!("coarse factorisation failed with shift {eps:e}; increasing");
                    last = Some(e);
                    eps *= 10.0;
                }
            }
        }
        Err(last.unwrap_or(Error::NotPositiveDefinite { row: 0, pivot: 0.0 }))
    }

    pub fn solve(&self, c: &[f64]) -> Vec<f64> {
        self.factor.solve(c)
    }
}

/// Action of an approximate inverse.
pub trait Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Symmetric Gauss–Seidel pre-smoothing, coarse correction, symmetric
/// Gauss–Seidel post-smoothing. Symmetric positive definite for SPD `K`.
pub struct TwoLevel<'a> {
    pub k: &'a CsrMatrix,
    pub basis: &'a SpectralBasis,
    pub coarse: &'a CoarseFactor,
}

impl TwoLevel<'_> {
    /// Standalone coarse approximation `Rᵀ K_c⁻¹ R f`.
    pub fn coarse_solve(&self, f: &[f64]) -> Vec<f64> {
        let fc = self.basis.restrict(f);
        self.basis.prolong(&self.coarse.solve(&fc))
    }
}

impl Preconditioner for TwoLevel<'_> {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut x = vec![0.0; n];
        self.k.gauss_seidel_forward(r, &mut x);
        self.k.gauss_seidel_backward(r, &mut x);
        let mut res = vec![0.0; n];
        self.k.residual_into(r, &x, &mut res);
        let corr = self.coarse_solve(&res);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        self.k.gauss_seidel_forward(r, &mut x);
        self.k.gauss_seidel_backward(r, &mut x);
        x
    }
}

/// `‖u − u_a‖_K / ‖u‖_K`
pub fn energy_error(k: &CsrMatrix, u: &[f64], ua: &[f64]) -> f64 {
    let e: Vec<f64> = u.iter().zip(ua).map(|(a, b)| a - b).collect();
    let num = crate::sparse::dot(&e, &k.mul_vec(&e));
    let den = crate::sparse::dot(u, &k.mul_vec(u));
    if den == 0.0 {
        return 0.0;
    }
    (num.max(0.0) / den).sqrt()
}
