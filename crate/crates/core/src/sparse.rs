//! Compressed sparse row storage with the handful of kernels the solvers need.

use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
    /// Position of the diagonal entry of each row in `values`, if present.
    diag_pos: Vec<u32>,
}

impl CsrMatrix {
    /// Builds from a row-wise sorted pattern; values start at zero.
    pub fn from_pattern(nrows: usize, ncols: usize, row_ptr: Vec<usize>, col_idx: Vec<u32>) -> Self {
        let nnz = col_idx.len();
        let mut m = Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
            diag_pos: Vec::new(),
        };
        m.index_diagonal();
        m
    }

    /// Sums duplicate entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); nrows];
        for &(i, j, v) in triplets {
            *rows[i].entry(j as u32).or_insert(0.0) += v;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        let mut m = Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            diag_pos: Vec::new(),
        };
        m.index_diagonal();
        m
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    fn index_diagonal(&mut self) {
        self.diag_pos = (0..self.nrows)
            .map(|i| {
                let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
                self.col_idx[s..e]
                    .binary_search(&(i as u32))
                    .map(|k| (s + k) as u32)
                    .unwrap_or(u32::MAX)
            })
            .collect();
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Index into `values` of entry (i, j), if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e].binary_search(&(j as u32)).ok().map(|k| s + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag_pos
            .iter()
            .map(|&p| if p == u32::MAX { 0.0 } else { self.values[p as usize] })
            .collect()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e]
            .iter()
            .zip(&self.values[s..e])
            .map(|(&j, &v)| (j as usize, v))
    }

    /// y = A x
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for (&j, &v) in self.col_idx[s..e].iter().zip(&self.values[s..e]) {
                acc += v * x[j as usize];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// y = Aᵀ x
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// r = b − A x
    pub fn residual_into(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        for i in 0..self.nrows {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for (&j, &v) in self.col_idx[s..e].iter().zip(&self.values[s..e]) {
                acc += v * x[j as usize];
            }
            r[i] = b[i] - acc;
        }
    }

    /// One forward Gauss–Seidel sweep on A x = b (natural ordering), in place.
    pub fn gauss_seidel_forward(&self, b: &[f64], x: &mut [f64]) {
        for i in 0..self.nrows {
            self.gs_row(i, b, x);
        }
    }

    /// One backward Gauss–Seidel sweep on A x = b, in place.
    pub fn gauss_seidel_backward(&self, b: &[f64], x: &mut [f64]) {
        for i in (0..self.nrows).rev() {
            self.gs_row(i, b, x);
        }
    }

    #[inline]
    fn gs_row(&self, i: usize, b: &[f64], x: &mut [f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        let mut acc = 0.0;
        for (&j, &v) in self.col_idx[s..e].iter().zip(&self.values[s..e]) {
            acc += v * x[j as usize];
        }
        let d = self.values[self.diag_pos[i] as usize];
        x[i] += (b[i] - acc) / d;
    }

    /// Largest |A_ij − A_ji| over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Maximum distance of a stored entry from the diagonal.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Symmetric permutation P A Pᵀ where `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> CsrMatrix {
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                triplets.push((inv[i], inv[j], v));
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Reverse Cuthill–McKee ordering of the graph of a structurally symmetric matrix.
/// Returns `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let degree: Vec<usize> = (0..n).map(|i| a.row_ptr[i + 1] - a.row_ptr[i]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .expect("unvisited node exists");
        visited[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = a
                .row(v)
                .map(|(j, _)| j)
                .filter(|&j| !visited[j])
                .collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                if !visited[j] {
                    visited[j] = true;
                    order.push(j);
                }
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn matvec_and_transpose_agree_for_symmetric() {
        let a = lap1d(6);
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(a.mul_vec(&x), a.tr_mul_vec(&x));
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(a.bandwidth(), 1);
    }

    #[test]
    fn gauss_seidel_converges_on_spd() {
        let a = lap1d(8);
        let b = vec![1.0; 8];
        let mut x = vec![0.0; 8];
        for _ in 0..400 {
            a.gauss_seidel_forward(&b, &mut x);
            a.gauss_seidel_backward(&b, &mut x);
        }
        let mut r = vec![0.0; 8];
        a.residual_into(&b, &x, &mut r);
        assert!(norm(&r) < 1e-10);
    }

    #[test]
    fn rcm_is_a_permutation_and_keeps_path_banded() {
        let a = lap1d(10);
        let p = reverse_cuthill_mckee(&a);
        let mut s = p.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(a.permuted(&p).bandwidth(), 1);
    }
}
