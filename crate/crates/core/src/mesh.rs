//! Structured fine/coarse grids, boundary conditions and agglomerates.
//!
//! Numbering is x-outer, y-fastest everywhere: node `(ix, iy)` has index
//! `ix * (ney + 1) + iy`, element `(ex, ey)` has index `ex * ney + ey`, and
//! node `k` owns DOFs `2k` (x) and `2k + 1` (y). Agglomerate-local numbering
//! follows the same rule inside the agglomerate's bounding box, so local order
//! is the sorted order of the global DOFs.
//!
//! `x` runs along the length `L` (`my` coarse cells), `y` along the height `B`
//! (`mx` coarse cells). Coarse row `cy` counts from the bottom.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// Both displacement components fixed on the left and right edges.
    DoubleClamped,
    /// Both components fixed on the left edge.
    Cantilever,
    /// No Dirichlet data (only useful for local tests).
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoadKind {
    /// Concentrated force applied at the node nearest to `(x, y)`.
    Point { x: f64, y: f64 },
    /// Force per unit length along a whole edge, lumped consistently.
    Edge(Edge),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Load {
    pub kind: LoadKind,
    /// 0 = x, 1 = y.
    pub component: usize,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshConfig {
    pub length: f64,
    pub height: f64,
    /// Coarse cells across the height.
    pub mx: usize,
    /// Coarse cells along the length.
    pub my: usize,
    /// Fine elements per coarse-cell edge.
    pub n: usize,
    pub support: Support,
    pub loads: Vec<Load>,
}

#[derive(Clone, Debug)]
pub struct MeshTopology {
    pub length: f64,
    pub height: f64,
    pub mx: usize,
    pub my: usize,
    pub n: usize,
    /// Coarse cell edge `H = B / mx`.
    pub coarse_h: f64,
    /// Fine element edge `h = H / n`.
    pub h: f64,
    /// Fine elements along x and y.
    pub nex: usize,
    pub ney: usize,
    pub support: Support,
    pub loads: Vec<Load>,
    pub dirichlet_dofs: Vec<usize>,
    dirichlet_mask: Vec<bool>,
}

pub fn build_mesh(cfg: &MeshConfig) -> Result<MeshTopology> {
    if cfg.mx == 0 || cfg.my == 0 || cfg.n == 0 {
        return Err(Error::Config(format!(
            "mesh: mx, my and n must be at least 1 (got {}, {}, {})",
            cfg.mx, cfg.my, cfg.n
        )));
    }
    if !(cfg.length > 0.0 && cfg.height > 0.0) {
        return Err(Error::Config(format!(
            "mesh: zero-measure domain {} x {}",
            cfg.length, cfg.height
        )));
    }
    let hx = cfg.length / cfg.my as f64;
    let hy = cfg.height / cfg.mx as f64;
    if (hx - hy).abs() > 1e-12 * hx.max(hy) {
        return Err(Error::Config(format!(
            "mesh: coarse cells must be square (L/my = {hx}, B/mx = {hy})"
        )));
    }
    let coarse_h = hy;
    let h = coarse_h / cfg.n as f64;
    let nex = cfg.my * cfg.n;
    let ney = cfg.mx * cfg.n;
    let nnodes = (nex + 1) * (ney + 1);

    let mut mask = vec![false; 2 * nnodes];
    let fixed_columns: &[usize] = match cfg.support {
        Support::DoubleClamped => &[0, nex],
        Support::Cantilever => &[0],
        Support::Free => &[],
    };
    for &ix in fixed_columns {
        for iy in 0..=ney {
            let node = ix * (ney + 1) + iy;
            mask[2 * node] = true;
            mask[2 * node + 1] = true;
        }
    }
    let dirichlet_dofs = (0..mask.len()).filter(|&d| mask[d]).collect();

    let tol = 1e-9 * cfg.length.max(cfg.height);
    for load in &cfg.loads {
        if load.component > 1 {
            return Err(Error::Config(format!("load component {} is not 0 or 1", load.component)));
        }
        if let LoadKind::Point { x, y } = load.kind {
            if x < -tol || x > cfg.length + tol || y < -tol || y > cfg.height + tol {
                return Err(Error::Config(format!("point load at ({x}, {y}) lies off the mesh")));
            }
        }
    }

    Ok(MeshTopology {
        length: cfg.length,
        height: cfg.height,
        mx: cfg.mx,
        my: cfg.my,
        n: cfg.n,
        coarse_h,
        h,
        nex,
        ney,
        support: cfg.support,
        loads: cfg.loads.clone(),
        dirichlet_dofs,
        dirichlet_mask: mask,
    })
}

impl MeshTopology {
    pub fn nodes_x(&self) -> usize {
        self.nex + 1
    }

    pub fn nodes_y(&self) -> usize {
        self.ney + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_x() * self.nodes_y()
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    pub fn num_elements(&self) -> usize {
        self.nex * self.ney
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        ix * (self.ney + 1) + iy
    }

    #[inline]
    pub fn element(&self, ex: usize, ey: usize) -> usize {
        ex * self.ney + ey
    }

    /// Element coordinates from its index.
    #[inline]
    pub fn element_coords(&self, e: usize) -> (usize, usize) {
        (e / self.ney, e % self.ney)
    }

    /// Counter-clockwise corner nodes starting bottom-left.
    #[inline]
    pub fn element_nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        let n0 = self.node(ex, ey);
        let n1 = self.node(ex + 1, ey);
        [n0, n1, n1 + 1, n0 + 1]
    }

    #[inline]
    pub fn element_dofs(&self, ex: usize, ey: usize) -> [usize; 8] {
        let n = self.element_nodes(ex, ey);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet_mask[dof]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet_mask
    }

    /// Coarse cell `(cx, cy)` containing fine element `(ex, ey)`.
    pub fn coarse_cell_of(&self, ex: usize, ey: usize) -> (usize, usize) {
        (ex / self.n, ey / self.n)
    }

    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let ix = ((x / self.h).round().max(0.0) as usize).min(self.nex);
        let iy = ((y / self.h).round().max(0.0) as usize).min(self.ney);
        self.node(ix, iy)
    }

    /// Global load vector; constrained entries are zero.
    pub fn load_vector(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.num_dofs()];
        for load in &self.loads {
            match load.kind {
                LoadKind::Point { x, y } => {
                    let node = self.nearest_node(x, y);
                    f[2 * node + load.component] += load.magnitude;
                }
                LoadKind::Edge(edge) => {
                    let (count, node_at): (usize, Box<dyn Fn(usize) -> usize>) = match edge {
                        Edge::Left => (self.ney, Box::new(|k| self.node(0, k))),
                        Edge::Right => (self.ney, Box::new(|k| self.node(self.nex, k))),
                        Edge::Bottom => (self.nex, Box::new(|k| self.node(k, 0))),
                        Edge::Top => (self.nex, Box::new(|k| self.node(k, self.ney))),
                    };
                    let share = 0.5 * load.magnitude * self.h;
                    for seg in 0..count {
                        f[2 * node_at(seg) + load.component] += share;
                        f[2 * node_at(seg + 1) + load.component] += share;
                    }
                }
            }
        }
        for &d in &self.dirichlet_dofs {
            f[d] = 0.0;
        }
        f
    }
}

/// Which unique design tile fills each coarse row.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignLayout {
    pub kind: LayoutKind,
    /// Tile index of coarse row `cy` (counted from the bottom).
    pub tile_of_row: Vec<usize>,
    pub num_tiles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayoutKind {
    /// One periodic tile everywhere.
    Single,
    /// Horizontal layers, each with its own periodic tile.
    Layers,
    /// One tile per coarse row, periodic horizontally only.
    Slice,
}

impl DesignLayout {
    pub fn single(mx: usize) -> Self {
        Self {
            kind: LayoutKind::Single,
            tile_of_row: vec![0; mx],
            num_tiles: 1,
        }
    }

    /// `fractions` lists layer thicknesses from the top layer down.
    pub fn layers(mx: usize, fractions: &[f64]) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::Config("layout: no layer thicknesses given".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f <= 0.0) {
            return Err(Error::Config(format!(
                "layout: layer thicknesses must be positive and sum to 1 (sum = {total})"
            )));
        }
        let mut rows_top_down = Vec::with_capacity(mx);
        for (layer, &f) in fractions.iter().enumerate() {
            let rows = f * mx as f64;
            if (rows - rows.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "layout: layer {layer} covers {rows} coarse rows, not an integer for mx = {mx}"
                )));
            }
            rows_top_down.extend(std::iter::repeat(layer).take(rows.round() as usize));
        }
        debug_assert_eq!(rows_top_down.len(), mx);
        rows_top_down.reverse();
        Ok(Self {
            kind: LayoutKind::Layers,
            tile_of_row: rows_top_down,
            num_tiles: fractions.len(),
        })
    }

    pub fn slice(mx: usize) -> Self {
        Self {
            kind: LayoutKind::Slice,
            tile_of_row: (0..mx).collect(),
            num_tiles: mx,
        }
    }

    /// Design variables per tile (`n × n`).
    pub fn tile_size(n: usize) -> usize {
        n * n
    }

    /// Maps each fine element to its design-tile entry `tile * n² + lx * n + ly`.
    pub fn tiling_map(&self, mesh: &MeshTopology) -> Vec<u32> {
        let n = mesh.n;
        let mut map = vec![0u32; mesh.num_elements()];
        for ex in 0..mesh.nex {
            for ey in 0..mesh.ney {
                let tile = self.tile_of_row[ey / n];
                let local = (ex % n) * n + (ey % n);
                map[mesh.element(ex, ey)] = (tile * n * n + local) as u32;
            }
        }
        map
    }

    /// Number of fine elements controlled by each design variable.
    pub fn copy_counts(&self, mesh: &MeshTopology) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_tiles * mesh.n * mesh.n];
        for &t in &self.tiling_map(mesh) {
            counts[t as usize] += 1.0;
        }
        counts
    }
}

/// Union of the closed coarse cells around one coarse node.
#[derive(Clone, Debug)]
pub struct Agglomerate {
    /// Coarse node `(cx, cy)`.
    pub coarse_node: (usize, usize),
    /// Member coarse cells `(cx, cy)`, sorted.
    pub member_cells: Vec<(usize, usize)>,
    /// Fine node at the bottom-left of the bounding box.
    pub origin: (usize, usize),
    /// Fine elements along x and y.
    pub extent: (usize, usize),
    /// Global DOFs in local order (which is ascending).
    pub fine_dofs: Vec<usize>,
    pub class_id: usize,
}

impl Agglomerate {
    pub fn nodes_x(&self) -> usize {
        self.extent.0 + 1
    }

    pub fn nodes_y(&self) -> usize {
        self.extent.1 + 1
    }

    pub fn num_dofs(&self) -> usize {
        self.fine_dofs.len()
    }

    /// True when the coarse node is not on the domain boundary.
    pub fn is_interior(&self, mesh: &MeshTopology) -> bool {
        let (cx, cy) = self.coarse_node;
        cx > 0 && cx < mesh.my && cy > 0 && cy < mesh.mx
    }

    /// Fine node offset of the coarse node inside the bounding box.
    pub fn centre_local(&self, mesh: &MeshTopology) -> (usize, usize) {
        let (cx, cy) = self.coarse_node;
        (cx * mesh.n - self.origin.0, cy * mesh.n - self.origin.1)
    }
}

/// Coarse nodes are numbered `cx * (mx + 1) + cy`.
pub fn build_agglomerates(mesh: &MeshTopology) -> Vec<Agglomerate> {
    let n = mesh.n;
    let mut out = Vec::with_capacity((mesh.my + 1) * (mesh.mx + 1));
    for cx in 0..=mesh.my {
        for cy in 0..=mesh.mx {
            let xs: Vec<usize> = [cx.wrapping_sub(1), cx]
                .into_iter()
                .filter(|&i| i < mesh.my)
                .collect();
            let ys: Vec<usize> = [cy.wrapping_sub(1), cy]
                .into_iter()
                .filter(|&j| j < mesh.mx)
                .collect();
            let mut cells = Vec::new();
            for &i in &xs {
                for &j in &ys {
                    cells.push((i, j));
                }
            }
            let origin = (xs[0] * n, ys[0] * n);
            let extent = (xs.len() * n, ys.len() * n);
            let mut dofs = Vec::with_capacity(2 * (extent.0 + 1) * (extent.1 + 1));
            for lx in 0..=extent.0 {
                for ly in 0..=extent.1 {
                    let node = mesh.node(origin.0 + lx, origin.1 + ly);
                    dofs.push(2 * node);
                    dofs.push(2 * node + 1);
                }
            }
            out.push(Agglomerate {
                coarse_node: (cx, cy),
                member_cells: cells,
                origin,
                extent,
                fine_dofs: dofs,
                class_id: usize::MAX,
            });
        }
    }
    out
}

/// Equivalence classes of agglomerates whose local matrices coincide.
#[derive(Clone, Debug)]
pub struct ClassMap {
    /// Member agglomerate indices per class, ascending.
    pub members: Vec<Vec<usize>>,
}

impl ClassMap {
    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn representative(&self, class: usize) -> usize {
        self.members[class][0]
    }
}

/// Groups agglomerates by shape, the design tile of each member cell and the
/// local Dirichlet pattern. Matching keys imply identical local stiffness
/// matrices for any tile-periodic physical field.
pub fn classify_agglomerates(
    aggs: &mut [Agglomerate],
    mesh: &MeshTopology,
    layout: &DesignLayout,
) -> ClassMap {
    type Key = ((usize, usize), Vec<usize>, Vec<bool>);
    let mut index: BTreeMap<Key, usize> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (a, agg) in aggs.iter_mut().enumerate() {
        let tiles = agg
            .member_cells
            .iter()
            .map(|&(_, cy)| layout.tile_of_row[cy])
            .collect();
        let pattern = agg.fine_dofs.iter().map(|&d| mesh.is_dirichlet(d)).collect();
        let key = (agg.extent, tiles, pattern);
        let next = members.len();
        let class = *index.entry(key).or_insert(next);
        if class == next {
            members.push(Vec::new());
        }
        members[class].push(a);
        agg.class_id = class;
    }
    ClassMap { members }
}


#[cfg(test)]
mod tests {
    use super::tests_support::small_mesh as double_clamped;
    use super::*;

    #[test]
    fn paper_benchmark_mesh_size() {
        let cfg = MeshConfig {
            mx: 8,
            my: 16,
            n: 20,
            ..double_clamped(8, 20)
        };
        let m = build_mesh(&cfg).unwrap();
        assert_eq!((m.ney, m.nex), (160, 320));
        assert_eq!(m.num_nodes(), 161 * 321);
        assert_eq!(m.num_dofs(), 103_362);
        assert_eq!(build_agglomerates(&m).len(), 153);
    }

    #[test]
    fn minimal_grid() {
        let cfg = MeshConfig {
            length: 1.0,
            height: 1.0,
            mx: 1,
            my: 1,
            n: 1,
            support: Support::Free,
            loads: vec![],
        };
        let m = build_mesh(&cfg).unwrap();
        assert_eq!(m.num_elements(), 1);
        assert_eq!(m.num_nodes(), 4);
        assert_eq!(m.num_dofs(), 8);
    }

    #[test]
    fn cantilever_left_edge_count() {
        for k in 1..4 {
            let mx = 3 * k;
            let cfg = MeshConfig {
                support: Support::Cantilever,
                ..double_clamped(mx, 4)
            };
            let m = build_mesh(&cfg).unwrap();
            assert_eq!(m.dirichlet_dofs.len(), 2 * (mx * 4 + 1));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = double_clamped(2, 4);
        cfg.n = 0;
        assert!(build_mesh(&cfg).is_err());
        let mut cfg = double_clamped(2, 4);
        cfg.height = 0.0;
        assert!(build_mesh(&cfg).is_err());
        let mut cfg = double_clamped(2, 4);
        cfg.loads[0].kind = LoadKind::Point { x: 3.0, y: 0.5 };
        assert!(build_mesh(&cfg).is_err());
        let mut cfg = double_clamped(2, 4);
        cfg.my = 3;
        assert!(build_mesh(&cfg).is_err());
    }

    #[test]
    fn centre_point_load_sits_on_centre_node() {
        let m = build_mesh(&double_clamped(2, 4)).unwrap();
        let f = m.load_vector();
        let centre = m.node(m.nex / 2, m.ney / 2);
        assert_eq!(f[2 * centre + 1], -0.01);
        assert_eq!(f.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn distributed_edge_load_integrates_to_total() {
        let cfg = MeshConfig {
            support: Support::Cantilever,
            loads: vec![Load {
                kind: LoadKind::Edge(Edge::Right),
                component: 0,
                magnitude: 0.01,
            }],
            ..double_clamped(3, 5)
        };
        let m = build_mesh(&cfg).unwrap();
        let total: f64 = m.load_vector().iter().sum();
        assert!((total - 0.01 * m.height).abs() < 1e-15);
    }

    #[test]
    fn agglomerate_shapes() {
        let m = build_mesh(&double_clamped(2, 3)).unwrap();
        let aggs = build_agglomerates(&m);
        for a in &aggs {
            let (cx, cy) = a.coarse_node;
            let on_x = cx == 0 || cx == m.my;
            let on_y = cy == 0 || cy == m.mx;
            let expect = match (on_x, on_y) {
                (true, true) => 1,
                (true, false) | (false, true) => 2,
                (false, false) => 4,
            };
            assert_eq!(a.member_cells.len(), expect);
            if expect == 1 {
                assert_eq!(a.num_dofs(), 2 * 4 * 4);
            }
            let mut sorted = a.fine_dofs.clone();
            sorted.sort();
            assert_eq!(sorted, a.fine_dofs);
        }
    }

    #[test]
    fn cells_covered_between_one_and_four_times() {
        let m = build_mesh(&double_clamped(3, 2)).unwrap();
        let mut cover = vec![0; m.mx * m.my];
        for a in build_agglomerates(&m) {
            for (cx, cy) in a.member_cells {
                cover[cx * m.mx + cy] += 1;
            }
        }
        assert!(cover.iter().all(|&c| (1..=4).contains(&c)));
    }

    #[test]
    fn layer_layout_validation() {
        assert!(DesignLayout::layers(18, &[3.0 / 18.0, 12.0 / 18.0, 3.0 / 18.0]).is_ok());
        assert!(DesignLayout::layers(18, &[0.3, 0.3, 0.3]).is_err());
        let l = DesignLayout::layers(3, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        // Top layer first in the input, bottom row first in storage.
        assert_eq!(l.tile_of_row, vec![2, 1, 0]);
    }

    #[test]
    fn single_tile_interior_classes() {
        let m = build_mesh(&double_clamped(4, 2)).unwrap();
        let mut aggs = build_agglomerates(&m);
        let classes = classify_agglomerates(&mut aggs, &m, &DesignLayout::single(4));
        let interior: std::collections::BTreeSet<_> = aggs
            .iter()
            .filter(|a| a.is_interior(&m))
            .map(|a| a.class_id)
            .collect();
        assert_eq!(interior.len(), 3);
        // Five column types (two clamped edges, two next to them, free) times
        // two row types: the one-cell-high top and bottom rows coincide.
        assert_eq!(classes.num_classes(), 10);
    }

    #[test]
    fn three_layer_interior_classes() {
        let m = build_mesh(&double_clamped(6, 2)).unwrap();
        let layout = DesignLayout::layers(6, &[1.0 / 3.0; 3]).unwrap();
        let mut aggs = build_agglomerates(&m);
        classify_agglomerates(&mut aggs, &m, &layout);
        let interior: std::collections::BTreeSet<_> = aggs
            .iter()
            .filter(|a| a.is_interior(&m))
            .map(|a| a.class_id)
            .collect();
        assert_eq!(interior.len(), 15);
    }
}
