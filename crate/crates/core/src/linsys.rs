//! Thin sparse-matrix layer: triplet assembly plus an LU-backed direct solve.
//!
//! Assembly scatters element contributions as (row, col, value) triplets;
//! duplicate entries are summed when the CSC matrix is built. The direct
//! solve uses faer's sparse LU with partial pivoting, which handles the
//! indefinite saddle-point systems produced by the constraint coupling.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Result, SimError};

/// Square sparse matrix under assembly.
#[derive(Debug, Clone)]
pub struct TripletMatrix {
    pub dim: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.dim && col < self.dim);
        if val != 0.0 {
            self.entries.push(Triplet::new(row, col, val));
        }
    }

    pub fn nnz_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|t| (t.row, t.col, t.val))
    }

    /// Dense copy, for small oracle checks in tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.dim]; self.dim];
        for t in &self.entries {
            a[t.row][t.col] += t.val;
        }
        a
    }

    /// Multiply by a vector (duplicates sum naturally).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
        y
    }

    fn to_csc(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.dim, self.dim, &self.entries)
            .map_err(|e| SimError::SolverFailure(format!("matrix build failed: {e:?}")))
    }
}

/// Factorized sparse LU, reusable for several right-hand sides.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    dim: usize,
}

impl SparseLu {
    pub fn factorize(mat: &TripletMatrix) -> Result<Self> {
        let csc = mat.to_csc()?;
        let symbolic = SymbolicLu::try_new(csc.symbolic())
            .map_err(|e| SimError::SolverFailure(format!("symbolic LU failed: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic, csc.as_ref())
            .map_err(|e| SimError::SolverFailure(format!("numeric LU failed: {e:?}")))?;
        Ok(Self { lu, dim: mat.dim })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim {
            return Err(SimError::InvalidArgument(format!(
                "rhs length {} does not match system dimension {}",
                rhs.len(),
                self.dim
            )));
        }
        let mut b = faer::Mat::from_fn(self.dim, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(b.as_mut());
        let x: Vec<f64> = (0..self.dim).map(|i| b[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::SolverFailure(
                "non-finite solution (singular or badly scaled matrix)".into(),
            ));
        }
        Ok(x)
    }
}

/// One-shot factorize-and-solve.
pub fn solve_sparse(mat: &TripletMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    SparseLu::factorize(mat)?.solve(rhs)
}

/// Dense Gaussian elimination with partial pivoting. Test-oracle quality,
/// used for small independent checks only.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if aug[r][col].abs() > aug[piv][col].abs() {
                piv = r;
            }
        }
        if aug[piv][col].abs() < 1e-300 {
            return Err(SimError::SolverFailure(format!(
                "dense solve: zero pivot at column {col}"
            )));
        }
        aug.swap(col, piv);
        for r in col + 1..n {
            let f = aug[r][col] / aug[col][col];
            if f != 0.0 {
                for c in col..=n {
                    let upper = aug[col][c];
                    aug[r][c] -= f * upper;
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = aug[col][n];
        for c in col + 1..n {
            s -= aug[col][c] * x[c];
        }
        x[col] = s / aug[col][col];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut m = TripletMatrix::new(2);
        m.push(0, 0, 1.0);
        m.push(0, 0, 1.0);
        m.push(1, 1, 4.0);
        let x = solve_sparse(&m, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_saddle_system() {
        // [2 0 1; 0 3 1; 1 1 0] x = [4, 5, 3]
        let mut m = TripletMatrix::new(3);
        m.push(0, 0, 2.0);
        m.push(1, 1, 3.0);
        m.push(0, 2, 1.0);
        m.push(2, 0, 1.0);
        m.push(1, 2, 1.0);
        m.push(2, 1, 1.0);
        let x = solve_sparse(&m, &[4.0, 5.0, 3.0]).unwrap();
        let r = m.mul_vec(&x);
        for (ri, bi) in r.iter().zip([4.0, 5.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let mut m = TripletMatrix::new(5);
        let vals = [
            (0, 0, 4.0),
            (0, 1, -1.0),
            (1, 0, -1.0),
            (1, 1, 4.0),
            (2, 2, 1.5),
            (3, 3, 2.0),
            (3, 4, 0.5),
            (4, 3, -0.5),
            (4, 4, 1.0),
            (0, 4, 0.25),
            (4, 0, 0.25),
        ];
        for (r, c, v) in vals {
            m.push(r, c, v);
        }
        let b = [1.0, -2.0, 3.0, 0.5, 1.5];
        let xs = solve_sparse(&m, &b).unwrap();
        let xd = solve_dense(&m.to_dense(), &b).unwrap();
        for (a, c) in xs.iter().zip(&xd) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = TripletMatrix::new(2);
        m.push(0, 0, 1.0);
        m.push(0, 1, 1.0);
        m.push(1, 0, 1.0);
        m.push(1, 1, 1.0);
        assert!(solve_sparse(&m, &[1.0, 1.0]).is_err());
    }
}
