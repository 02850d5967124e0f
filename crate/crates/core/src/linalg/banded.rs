use nalgebra::DVector;

use crate::error::{PathError, Result};
use crate::Scalar;

/// Sparse symmetric matrix stored by rows of its lower envelope (profile).
///
/// Row `i` keeps columns `first[i]..=i`. Fill-in of a Cholesky factor stays
/// inside the envelope, so the factor reuses the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBandedMatrix<T: Scalar> {
    first: Vec<usize>,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> SparseBandedMatrix<T> {
    /// Assembles from `(row, col, value)` triplets; entries above the diagonal
    /// are mirrored into the lower triangle and duplicates are summed.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, T)]) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j, _) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            first[r] = first[r].min(c);
        }
        let mut rows: Vec<Vec<T>> = (0..n).map(|i| vec![T::zero(); i - first[i] + 1]).collect();
        for &(i, j, v) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            rows[r][c - first[r]] += v;
        }
        Self { first, rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            T::zero()
        } else {
            self.rows[r][c - self.first[r]]
        }
    }

    /// Half-bandwidth: largest `i − j` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.first.iter().enumerate().map(|(i, &f)| i - f).max().unwrap_or(0)
    }

    /// Nonzero entries of the full symmetric matrix.
    pub fn nnz(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != T::zero())
                    .map(|(k, _)| if self.first[i] + k == i { 1 } else { 2 })
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let f = self.first[i];
            for (k, &v) in self.rows[i].iter().enumerate() {
                let j = f + k;
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// Envelope Cholesky `A = L Lᵗ`.
    pub fn cholesky(&self) -> Result<BandedCholesky<T>> {
        let n = self.dim();
        let mut l: Vec<Vec<T>> = self.rows.clone();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut acc = l[i][j - fi];
                for k in start..j {
                    acc -= l[i][k - fi] * l[j][k - fj];
                }
                if j == i {
                    if acc <= T::zero() {
                        return Err(PathError::InvalidProblem(format!(
                            "banded matrix not positive definite at row {i}"
                        )));
                    }
                    l[i][i - fi] = acc.sqrt();
                } else {
                    l[i][j - fi] = acc / l[j][j - fj];
                }
            }
        }
        Ok(BandedCholesky {
            first: self.first.clone(),
            rows: l,
        })
    }
}

/// Lower triangular envelope factor produced by [`SparseBandedMatrix::cholesky`].
#[derive(Debug, Clone)]
pub struct BandedCholesky<T: Scalar> {
    first: Vec<usize>,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> BandedCholesky<T> {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().flatten().filter(|v| **v != T::zero()).count()
    }

    /// Zeroes off-diagonal entries with `|l_ij| < tol · l_ii`.
    pub fn truncate(&mut self, tol: T) {
        for (i, row) in self.rows.iter_mut().enumerate() {
            let diag = row[i - self.first[i]];
            let last = row.len() - 1;
            for v in row.iter_mut().take(last) {
                if v.abs() < tol * diag {
                    *v = T::zero();
                }
            }
        }
    }

    /// Solves `L Lᵗ x = b`.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length");
        let mut y = b.clone();
        for i in 0..n {
            let f = self.first[i];
            let row = &self.rows[i];
            let mut acc = y[i];
            for (k, &v) in row[..row.len() - 1].iter().enumerate() {
                acc -= v * y[f + k];
            }
            y[i] = acc / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let f = self.first[i];
            let row = &self.rows[i];
            y[i] /= row[row.len() - 1];
            let yi = y[i];
            for (k, &v) in row[..row.len() - 1].iter().enumerate() {
                y[f + k] -= v * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn tridiagonal(n: usize) -> SparseBandedMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
            }
        }
        SparseBandedMatrix::from_triplets(n, &t)
    }

    #[test]
    fn counts_and_bandwidth() {
        let a = tridiagonal(5);
        assert_eq!(a.nnz(), 13);
        assert_eq!(a.bandwidth(), 1);
        assert_eq!(a.get(0, 1), -1.0);
    }

    #[test]
    fn cholesky_solve_matches_dense() {
        let a = tridiagonal(6);
        let dense = DMatrix::from_fn(6, 6, |i, j| a.get(i, j));
        let b = DVector::from_fn(6, |i, _| (i as f64).sin());
        let x = a.cholesky().unwrap().solve(&b);
        let xd = dense.lu().solve(&b).unwrap();
        assert!((x - xd).amax() < 1e-13);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = SparseBandedMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(a.cholesky().is_err());
    }
}
