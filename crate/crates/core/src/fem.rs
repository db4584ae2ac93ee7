//! Bilinear quadrilateral plane elasticity with modified SIMP interpolation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Agglomerate, MeshTopology};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlaneModel {
    #[default]
    Stress,
    Strain,
}

/// Stiffness of a unit-modulus square element, DOFs ordered
/// `(ux, uy)` per node, nodes counter-clockwise from bottom-left.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementStiffness {
    pub k: [[f64; 8]; 8],
}

pub fn element_stiffness_template(nu: f64) -> Result<ElementStiffness> {
    element_stiffness_for(nu, PlaneModel::Stress)
}

pub fn element_stiffness_for(nu: f64, model: PlaneModel) -> Result<ElementStiffness> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::InvalidMaterial { nu });
    }
    // Plane strain is plane stress with E' = E / (1 - nu^2), nu' = nu / (1 - nu).
    let (scale, nu) = match model {
        PlaneModel::Stress => (1.0, nu),
        PlaneModel::Strain => (1.0 / (1.0 - nu * nu), nu / (1.0 - nu)),
    };
    let c = scale / (1.0 - nu * nu);
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    const IDX: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let mut out = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            out[i][j] = c * k[IDX[i][j]];
        }
    }
    Ok(ElementStiffness { k: out })
}

impl ElementStiffness {
    /// uᵀ K0 u for an element displacement vector.
    #[inline]
    pub fn energy(&self, ue: &[f64; 8]) -> f64 {
        let mut s = 0.0;
        for i in 0..8 {
            let mut row = 0.0;
            for j in 0..8 {
                row += self.k[i][j] * ue[j];
            }
            s += ue[i] * row;
        }
        s
    }
}

/// `Emin + (Emax − Emin) ρ^p`.
#[inline]
pub fn simp_modulus(rho: f64, p: f64, emin: f64, emax: f64) -> f64 {
    emin + (emax - emin) * rho.powf(p)
}

/// d/dρ of [`simp_modulus`].
#[inline]
pub fn simp_derivative(rho: f64, p: f64, emin: f64, emax: f64) -> f64 {
    if rho == 0.0 {
        if p == 1.0 {
            emax - emin
        } else {
            0.0
        }
    } else {
        p * (emax - emin) * rho.powf(p - 1.0)
    }
}

/// Physical densities on the unique design tile(s) plus the map placing them
/// on the fine grid.
#[derive(Clone, Debug)]
pub struct PhysicalField {
    pub rho: Vec<f64>,
    pub tiling: Arc<Vec<u32>>,
    pub penal: f64,
    pub emin: f64,
    pub emax: f64,
}

impl PhysicalField {
    /// Young's modulus of every fine element.
    pub fn moduli(&self) -> Vec<f64> {
        self.tiling
            .iter()
            .map(|&t| simp_modulus(self.rho[t as usize], self.penal, self.emin, self.emax))
            .collect()
    }

    /// Physical density of every fine element.
    pub fn fine_densities(&self) -> Vec<f64> {
        self.tiling.iter().map(|&t| self.rho[t as usize]).collect()
    }
}

/// Assembly of a rectangular block of the fine grid with a fixed sparsity
/// pattern. The full problem is the block covering the whole mesh; agglomerate
/// matrices use their bounding box.
#[derive(Clone, Debug)]
pub struct Assembler {
    k0: ElementStiffness,
    pattern: CsrMatrix,
    /// Global element index of each element in the block.
    elements: Vec<usize>,
    /// Value positions of the 64 element entries; `u32::MAX` marks entries
    /// removed by Dirichlet elimination.
    scatter: Vec<[u32; 64]>,
    constrained_diag: Vec<usize>,
}

impl Assembler {
    pub fn new(mesh: &MeshTopology, k0: &ElementStiffness) -> Self {
        Self::for_block(mesh, k0, (0, 0), (mesh.nex, mesh.ney))
    }

    pub fn for_agglomerate(mesh: &MeshTopology, k0: &ElementStiffness, agg: &Agglomerate) -> Self {
        Self::for_block(mesh, k0, agg.origin, agg.extent)
    }

    pub fn for_block(
        mesh: &MeshTopology,
        k0: &ElementStiffness,
        origin: (usize, usize),
        extent: (usize, usize),
    ) -> Self {
        let (nx, ny) = extent;
        let nny = ny + 1;
        let local_node = |lx: usize, ly: usize| lx * nny + ly;
        let nnodes = (nx + 1) * nny;
        let ndofs = 2 * nnodes;

        let mut row_ptr = Vec::with_capacity(ndofs + 1);
        let mut col_idx = Vec::with_capacity(ndofs * 18);
        row_ptr.push(0);
        for lx in 0..=nx {
            for ly in 0..=ny {
                for _comp in 0..2 {
                    for mx in lx.saturating_sub(1)..=(lx + 1).min(nx) {
                        for my in ly.saturating_sub(1)..=(ly + 1).min(ny) {
                            let m = local_node(mx, my) as u32;
                            col_idx.push(2 * m);
                            col_idx.push(2 * m + 1);
                        }
                    }
                    row_ptr.push(col_idx.len());
                }
            }
        }
        let pattern = CsrMatrix::from_pattern(ndofs, ndofs, row_ptr, col_idx);

        let global_dof = |local: usize| {
            let node = local / 2;
            let (lx, ly) = (node / nny, node % nny);
            2 * mesh.node(origin.0 + lx, origin.1 + ly) + local % 2
        };
        let constrained: Vec<bool> = (0..ndofs).map(|d| mesh.is_dirichlet(global_dof(d))).collect();

        let mut elements = Vec::with_capacity(nx * ny);
        let mut scatter = Vec::with_capacity(nx * ny);
        for lx in 0..nx {
            for ly in 0..ny {
                elements.push(mesh.element(origin.0 + lx, origin.1 + ly));
                let n0 = local_node(lx, ly);
                let n1 = local_node(lx + 1, ly);
                let nodes = [n0, n1, n1 + 1, n0 + 1];
                let dofs: Vec<usize> = nodes.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
                let mut pos = [u32::MAX; 64];
                for a in 0..8 {
                    for b in 0..8 {
                        if !constrained[dofs[a]] && !constrained[dofs[b]] {
                            pos[a * 8 + b] = pattern.position(dofs[a], dofs[b]).unwrap() as u32;
                        }
                    }
                }
                scatter.push(pos);
            }
        }
        let constrained_diag = (0..ndofs)
            .filter(|&d| constrained[d])
            .map(|d| pattern.position(d, d).unwrap())
            .collect();

        Self {
            k0: k0.clone(),
            pattern,
            elements,
            scatter,
            constrained_diag,
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.pattern.nrows
    }

    /// K = Σ_e E_e K0 with constrained rows/columns replaced by the identity.
    /// `moduli` is indexed by global element.
    pub fn assemble(&self, moduli: &[f64]) -> CsrMatrix {
        let mut k = self.pattern.clone();
        self.assemble_into(moduli, &mut k);
        k
    }

    /// Refills the values of a matrix previously returned by [`Self::assemble`].
    pub fn assemble_into(&self, moduli: &[f64], k: &mut CsrMatrix) {
        debug_assert_eq!(k.nnz(), self.pattern.nnz());
        let values = &mut k.values;
        values.iter_mut().for_each(|v| *v = 0.0);
        let k0 = &self.k0.k;
        for (&e, pos) in self.elements.iter().zip(&self.scatter) {
            let ee = moduli[e];
            for a in 0..8 {
                for b in 0..8 {
                    let p = pos[a * 8 + b];
                    if p != u32::MAX {
                        values[p as usize] += ee * k0[a][b];
                    }
                }
            }
        }
        for &p in &self.constrained_diag {
            values[p] = 1.0;
        }
    }
}

/// Local agglomerate stiffness (assembled from the agglomerate's own elements,
/// with the Dirichlet data of the full problem) and its diagonal weight.
pub fn assemble_local(
    mesh: &MeshTopology,
    k0: &ElementStiffness,
    moduli: &[f64],
    agg: &Agglomerate,
) -> (CsrMatrix, Vec<f64>) {
    let k = Assembler::for_agglomerate(mesh, k0, agg).assemble(moduli);
    let w = k.diagonal();
    debug_assert!(w.iter().all(|&x| x > 0.0), "zero diagonal in agglomerate matrix");
    (k, w)
}

/// fᵀu
pub fn compliance(f: &[f64], u: &[f64]) -> f64 {
    crate::sparse::dot(f, u)
}

/// u_eᵀ K0 u_e for every fine element.
pub fn element_energies(mesh: &MeshTopology, k0: &ElementStiffness, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_elements()];
    for ex in 0..mesh.nex {
        for ey in 0..mesh.ney {
            let dofs = mesh.element_dofs(ex, ey);
            let ue = dofs.map(|d| u[d]);
            out[mesh.element(ex, ey)] = k0.energy(&ue);
        }
    }
    out
}

/// Compliance gradient with respect to the physical tile densities:
/// `−Σ_copies dE/dρ · u_eᵀ K0 u_e`.
pub fn element_sensitivities(
    mesh: &MeshTopology,
    k0: &ElementStiffness,
    u: &[f64],
    field: &PhysicalField,
) -> Vec<f64> {
    let energies = element_energies(mesh, k0, u);
    accumulate_sensitivities(&energies, field)
}

pub fn accumulate_sensitivities(energies: &[f64], field: &PhysicalField) -> Vec<f64> {
    let mut grad = vec![0.0; field.rho.len()];
    for (&t, &en) in field.tiling.iter().zip(energies) {
        let t = t as usize;
        grad[t] -= simp_derivative(field.rho[t], field.penal, field.emin, field.emax) * en;
    }
    grad
}
