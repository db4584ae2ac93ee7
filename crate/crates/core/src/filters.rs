//! Density filters on the design tile(s), Heaviside projection and the
//! non-discreteness measure.
//!
//! Design vectors use the tile layout of [`crate::mesh::DesignLayout`]: entry
//! `tile * n² + lx * n + ly`.

use crate::banded::SparseCholesky;
use crate::error::{Error, Result};
use crate::mesh::LayoutKind;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub beta: f64,
    pub eta: f64,
}

/// Smoothed Heaviside projection.
pub fn heaviside(x: f64, p: Projection) -> f64 {
    let Projection { beta, eta } = p;
    let a = (beta * eta).tanh();
    (a + (beta * (x - eta)).tanh()) / (a + (beta * (1.0 - eta)).tanh())
}

pub fn heaviside_derivative(x: f64, p: Projection) -> f64 {
    let Projection { beta, eta } = p;
    let t = (beta * (x - eta)).tanh();
    beta * (1.0 - t * t) / ((beta * eta).tanh() + (beta * (1.0 - eta)).tanh())
}

pub fn project(field: &[f64], p: Projection) -> Vec<f64> {
    field.iter().map(|&x| heaviside(x, p)).collect()
}

/// Mean of `4ρ(1−ρ)`; zero for a 0/1 design, one for a uniform grey one.
pub fn nondiscreteness(rho: &[f64]) -> f64 {
    if rho.is_empty() {
        return 0.0;
    }
    rho.iter().map(|&r| 4.0 * r * (1.0 - r)).sum::<f64>() / rho.len() as f64
}

/// Same measure with per-entry multiplicities (copies of a tile variable).
pub fn nondiscreteness_weighted(rho: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    rho.iter()
        .zip(weights)
        .map(|(&r, &w)| w * 4.0 * r * (1.0 - r))
        .sum::<f64>()
        / total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Neighbourhood,
    Pde,
}

/// Linear density filter `ρ̃ = F ρ` on the design vector.
#[derive(Clone, Debug)]
pub enum DensityFilter {
    Identity,
    Neighbourhood(CsrMatrix),
    Pde(PdeFilter),
}

impl DensityFilter {
    /// `rmin` is in fine-element edge lengths.
    pub fn build(kind: FilterKind, layout: LayoutKind, num_tiles: usize, n: usize, rmin: f64) -> Result<Self> {
        match kind {
            FilterKind::Neighbourhood => neighbourhood_matrix(num_tiles, n, rmin).map(Self::Neighbourhood),
            FilterKind::Pde => PdeFilter::new(layout, num_tiles, n, rmin).map(Self::Pde),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => x.to_vec(),
            Self::Neighbourhood(w) => w.mul_vec(x),
            Self::Pde(p) => p.apply(x),
        }
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => y.to_vec(),
            Self::Neighbourhood(w) => w.tr_mul_vec(y),
            Self::Pde(p) => p.apply(y),
        }
    }
}

/// Cone-weighted filter of each tile against the 3×3 block of its own copies,
/// rows normalised. Equivalent to toroidal filtering of the tile.
pub fn neighbourhood_matrix(num_tiles: usize, n: usize, rmin: f64) -> Result<CsrMatrix> {
    if rmin < 1.0 {
        return Err(Error::Config(format!("filter: rmin = {rmin} is below one element")));
    }
    if rmin > 1.5 * n as f64 {
        return Err(Error::Config(format!(
            "filter: rmin = {rmin} exceeds 1.5 tiles of {n} elements"
        )));
    }
    let reach = rmin.ceil() as i64;
    let ni = n as i64;
    let mut triplets = Vec::new();
    for t in 0..num_tiles {
        let base = t * n * n;
        for lx in 0..ni {
            for ly in 0..ni {
                let row = base + (lx * ni + ly) as usize;
                let mut entries: Vec<(usize, f64)> = Vec::new();
                for dx in -reach..=reach {
                    for dy in -reach..=reach {
                        let w = rmin - ((dx * dx + dy * dy) as f64).sqrt();
                        if w <= 0.0 {
                            continue;
                        }
                        let (gx, gy) = (lx + dx, ly + dy);
                        // Stay inside the 3×3 block around the centre tile.
                        if gx < -ni || gx >= 2 * ni || gy < -ni || gy >= 2 * ni {
                            continue;
                        }
                        let col = base + (gx.rem_euclid(ni) * ni + gy.rem_euclid(ni)) as usize;
                        entries.push((col, w));
                    }
                }
                let total: f64 = entries.iter().map(|e| e.1).sum();
                triplets.extend(entries.into_iter().map(|(c, w)| (row, c, w / total)));
            }
        }
    }
    let size = num_tiles * n * n;
    Ok(CsrMatrix::from_triplets(size, size, &triplets))
}

/// Screened-Poisson filter `−r²∇²ρ̃ + ρ̃ = ρ` with `r = rmin / (2√3)`, bilinear
/// nodal elements, tile edges collapsed according to the layout.
#[derive(Clone, Debug)]
pub struct PdeFilter {
    n: usize,
    num_tiles: usize,
    /// Unique node of each (tile, local node).
    node_map: Vec<usize>,
    solver: SparseCholesky,
}

impl PdeFilter {
    pub fn new(layout: LayoutKind, num_tiles: usize, n: usize, rmin: f64) -> Result<Self> {
        if rmin <= 0.0 || n == 0 || num_tiles == 0 {
            return Err(Error::Config("filter: PDE filter needs rmin > 0 and a nonempty tile".into()));
        }
        let nn = n + 1;
        let per_tile = nn * nn;
        let total = num_tiles * per_tile;
        let id = |t: usize, a: usize, b: usize| t * per_tile + a * nn + b;
        let mut uf = UnionFind::new(total);
        for t in 0..num_tiles {
            for b in 0..nn {
                uf.union(id(t, 0, b), id(t, n, b));
            }
        }
        match layout {
            LayoutKind::Single | LayoutKind::Layers => {
                for t in 0..num_tiles {
                    for a in 0..nn {
                        uf.union(id(t, a, 0), id(t, a, n));
                        uf.union(id(t, a, 0), id(0, a, 0));
                    }
                }
            }
            LayoutKind::Slice => {
                for t in 1..num_tiles {
                    for a in 0..nn {
                        uf.union(id(t - 1, a, n), id(t, a, 0));
                    }
                }
            }
        }
        let mut label = vec![usize::MAX; total];
        let mut node_map = vec![0; total];
        let mut count = 0;
        for i in 0..total {
            let root = uf.find(i);
            if label[root] == usize::MAX {
                label[root] = count;
                count += 1;
            }
            node_map[i] = label[root];
        }

        let r = rmin / (2.0 * 3f64.sqrt());
        let r2 = r * r;
        let lap = [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ];
        let mass = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
        let mut triplets = Vec::with_capacity(num_tiles * n * n * 16);
        for t in 0..num_tiles {
            for lx in 0..n {
                for ly in 0..n {
                    let nodes = [id(t, lx, ly), id(t, lx + 1, ly), id(t, lx + 1, ly + 1), id(t, lx, ly + 1)]
                        .map(|q| node_map[q]);
                    for a in 0..4 {
                        for b in 0..4 {
                            triplets.push((nodes[a], nodes[b], r2 * lap[a][b] / 6.0 + mass[a][b] / 36.0));
                        }
                    }
                }
            }
        }
        let a = CsrMatrix::from_triplets(count, count, &triplets);
        let solver = SparseCholesky::new(&a)?;
        Ok(Self {
            n,
            num_tiles,
            node_map,
            solver,
        })
    }

    fn element_nodes(&self, t: usize, lx: usize, ly: usize) -> [usize; 4] {
        let nn = self.n + 1;
        let id = |a: usize, b: usize| t * nn * nn + a * nn + b;
        [id(lx, ly), id(lx + 1, ly), id(lx + 1, ly + 1), id(lx, ly + 1)].map(|q| self.node_map[q])
    }

    /// Self-adjoint: `F = Tᵀ A⁻¹ T`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut rhs = vec![0.0; self.solver_dim()];
        for t in 0..self.num_tiles {
            for lx in 0..n {
                for ly in 0..n {
                    let v = 0.25 * x[t * n * n + lx * n + ly];
                    for q in self.element_nodes(t, lx, ly) {
                        rhs[q] += v;
                    }
                }
            }
        }
        let psi = self.solver.solve(&rhs);
        let mut out = vec![0.0; x.len()];
        for t in 0..self.num_tiles {
            for lx in 0..n {
                for ly in 0..n {
                    out[t * n * n + lx * n + ly] =
                        0.25 * self.element_nodes(t, lx, ly).iter().map(|&q| psi[q]).sum::<f64>();
                }
            }
        }
        out
    }

    fn solver_dim(&self) -> usize {
        self.node_map.iter().copied().max().map_or(0, |m| m + 1)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Design-variable gradient from a gradient with respect to the projected
/// tile densities: `Fᵀ (H'(ρ̃) ⊙ g)`.
pub fn backprop(filter: &DensityFilter, filtered: &[f64], p: Projection, d_dphys: &[f64]) -> Vec<f64> {
    let scaled: Vec<f64> = filtered
        .iter()
        .zip(d_dphys)
        .map(|(&x, &g)| heaviside_derivative(x, p) * g)
        .collect();
    filter.apply_adjoint(&scaled)
}
