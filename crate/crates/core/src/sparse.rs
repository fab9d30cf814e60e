//! Row-compressed sparse matrices and sparse direct solves.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Compressed sparse rows with duplicate entries summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` entries; duplicates are summed in the
    /// order they appear, so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut m = Self::new(ncols);
        let mut it = entries.into_iter().peekable();
        for i in 0..nrows {
            while let Some(&(r, c, v)) = it.peek() {
                if r != i {
                    break;
                }
                it.next();
                if m.cols.len() > m.row_ptr[i] && *m.cols.last().unwrap() == c {
                    *m.vals.last_mut().unwrap() += v;
                } else {
                    m.cols.push(c);
                    m.vals.push(v);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }

    /// Appends a row; repeated columns are merged.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        let start = self.cols.len();
        for &(c, v) in entries {
            debug_assert!(c < self.ncols);
            if let Some(k) = self.cols[start..].iter().position(|&x| x == c) {
                self.vals[start + k] += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    /// `A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `Aᵀ y`, accumulated into `out`.
    pub fn tmul_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        for i in 0..self.nrows() {
            let s = scale * y[i];
            if s != 0.0 {
                for (c, v) in self.row(i) {
                    out[c] += v * s;
                }
            }
        }
    }

    /// Entries of `scale · AᵀA` as triplets.
    pub fn gram_triplets(&self, scale: f64, out: &mut Vec<(usize, usize, f64)>) {
        for i in 0..self.nrows() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let cols = &self.cols[r.clone()];
            let vals = &self.vals[r];
            for a in 0..cols.len() {
                for b in 0..cols.len() {
                    out.push((cols[a], cols[b], scale * vals[a] * vals[b]));
                }
            }
        }
    }

    /// Diagonal of `scale · AᵀA`, accumulated into `out`.
    pub fn gram_diag_add(&self, scale: f64, out: &mut [f64]) {
        for (c, v) in self.cols.iter().zip(&self.vals) {
            out[*c] += scale * v * v;
        }
    }

    /// Keeps only the listed columns, renumbered in the order given by `map`
    /// (`map[old] = Some(new)`).
    pub fn select_columns(&self, map: &[Option<usize>], new_ncols: usize) -> Self {
        let mut m = Self::new(new_ncols);
        for i in 0..self.nrows() {
            for (c, v) in self.row(i) {
                if let Some(nc) = map[c] {
                    m.cols.push(nc);
                    m.vals.push(v);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }
}

/// `Σ_k w_k A_kᵀA_k + diag(shift)` for blocks sharing a column space.
pub fn normal_matrix(blocks: &[(&SparseRows, f64)], shift: &[f64]) -> Result<SparseColMat<usize, f64>> {
    let ncols = shift.len();
    let mut t = Vec::new();
    let mut row0 = 0;
    for (m, w) in blocks {
        if m.ncols() != ncols {
            return Err(Error::State("normal-matrix blocks differ in column count".into()));
        }
        let s = w.sqrt();
        for i in 0..m.nrows() {
            for (c, v) in m.row(i) {
                t.push(Triplet::new(row0 + i, c, s * v));
            }
        }
        row0 += m.nrows();
    }
    let j = SparseColMat::<usize, f64>::try_new_from_triplets(row0, ncols, &t)
        .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
    let jt = j
        .as_ref()
        .transpose()
        .to_col_major()
        .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
    let gram = &jt * &j;
    let d: Vec<Triplet<usize, usize, f64>> = shift.iter().enumerate().map(|(i, &v)| Triplet::new(i, i, v)).collect();
    let d = SparseColMat::<usize, f64>::try_new_from_triplets(ncols, ncols, &d)
        .map_err(|e| Error::LinearSolver(format!("{e:?}")))?;
    Ok(&gram + &d)
}

/// Solves `A x = b` for a symmetric positive definite sparse `A`.
pub fn solve_spd_matrix(a: &SparseColMat<usize, f64>, b: &[f64]) -> Result<Vec<f64>> {
    let chol = a
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::LinearSolver(format!("cholesky factorization failed: {e:?}")))?;
    let x = chol.solve(&rhs_mat(b));
    Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
}

fn to_faer(n: usize, entries: &[(usize, usize, f64)]) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::LinearSolver(format!("{e:?}")))
}

fn rhs_mat(b: &[f64]) -> Mat<f64> {
    Mat::from_fn(b.len(), 1, |i, _| b[i])
}

/// Solves `A x = b` for symmetric positive definite `A` given as triplets
/// (both triangles present).
pub fn solve_spd(n: usize, entries: &[(usize, usize, f64)], b: &[f64]) -> Result<Vec<f64>> {
    let a = to_faer(n, entries)?;
    let chol = a
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::LinearSolver(format!("cholesky factorization failed: {e:?}")))?;
    let x = chol.solve(&rhs_mat(b));
    Ok((0..n).map(|i| x[(i, 0)]).collect())
}

/// Solves a general square sparse system by LU.
pub fn solve_general(n: usize, entries: &[(usize, usize, f64)], b: &[f64]) -> Result<Vec<f64>> {
    let a = to_faer(n, entries)?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::LinearSolver(format!("lu factorization failed: {e:?}")))?;
    let x = lu.solve(&rhs_mat(b));
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolver("singular system".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseRows::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5), (0, 1, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.mul(&[1.0, 2.0, 3.0]), vec![0.0, 4.5]);
        let mut out = vec![0.0; 3];
        m.tmul_add(&[1.0, 2.0], 1.0, &mut out);
        assert_eq!(out, vec![2.0, -1.0, 3.0]);
    }

    #[test]
    fn gram_solve_recovers_least_squares() {
        // overdetermined: x = 1, y = 2, x + y = 3.3
        let mut a = SparseRows::new(2);
        a.push_row(&[(0, 1.0)]);
        a.push_row(&[(1, 1.0)]);
        a.push_row(&[(0, 1.0), (1, 1.0)]);
        let b = [1.0, 2.0, 3.3];
        let mut t = Vec::new();
        a.gram_triplets(1.0, &mut t);
        let mut rhs = vec![0.0; 2];
        a.tmul_add(&b, 1.0, &mut rhs);
        let x = solve_spd(2, &t, &rhs).unwrap();
        assert!((x[0] - 1.1).abs() < 1e-12 && (x[1] - 2.1).abs() < 1e-12);
        let mut d = vec![0.0; 2];
        a.gram_diag_add(1.0, &mut d);
        assert_eq!(d, vec![2.0, 2.0]);
    }

    #[test]
    fn normal_matrix_matches_triplet_gram() {
        let mut a = SparseRows::new(3);
        a.push_row(&[(0, 1.0), (2, -2.0)]);
        a.push_row(&[(1, 3.0), (2, 1.0)]);
        let mut b = SparseRows::new(3);
        b.push_row(&[(0, 0.5), (1, 0.5)]);
        let m = normal_matrix(&[(&a, 2.0), (&b, 4.0)], &[0.1, 0.2, 0.3]).unwrap();
        let dense = m.to_dense();
        let mut t = Vec::new();
        a.gram_triplets(2.0, &mut t);
        b.gram_triplets(4.0, &mut t);
        let reference = SparseRows::from_triplets(3, 3, t);
        for i in 0..3 {
            for j in 0..3 {
                let shift = if i == j { [0.1, 0.2, 0.3][i] } else { 0.0 };
                assert!((dense[(i, j)] - reference.get(i, j) - shift).abs() < 1e-14);
            }
        }
        let x = solve_spd_matrix(&m, &[1.0, 2.0, 3.0]).unwrap();
        let mut y = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                y[i] += dense[(i, j)] * x[j];
            }
        }
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn general_solve_and_column_selection() {
        let x = solve_general(2, &[(0, 1, 1.0), (1, 0, 2.0)], &[3.0, 4.0]).unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
        let mut a = SparseRows::new(3);
        a.push_row(&[(0, 1.0), (2, 5.0), (0, 1.0)]);
        assert_eq!(a.get(0, 0), 2.0);
        let s = a.select_columns(&[None, Some(1), Some(0)], 2);
        assert_eq!(s.get(0, 0), 5.0);
        assert_eq!(s.nnz(), 1);
    }
}
