use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::Scalar;

/// Cholesky factor `L Lᵗ = A_SS` of a principal submatrix whose index set
/// grows and shrinks one index at a time.
#[derive(Debug, Clone)]
pub struct GrowingCholesky<T: Scalar> {
    idx: Vec<usize>,
    l: DMatrix<T>,
    rel_tol: T,
}

impl<T: Scalar> GrowingCholesky<T> {
    pub fn new(rel_tol: T) -> Self {
        Self {
            idx: Vec::new(),
            l: DMatrix::zeros(0, 0),
            rel_tol,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Appends index `j`; `cross[k]` is `A[idx[k], j]` and `diag` is `A[j, j]`.
    pub fn push(&mut self, j: usize, cross: &DVector<T>, diag: T) -> Result<()> {
        let k = self.idx.len();
        let row = self.forward(cross);
        let d2 = diag - row.norm_squared();
        if !(d2 > self.rel_tol * diag.abs().max(T::machine_eps())) {
            return Err(PathError::SingularReducedHessian);
        }
        let mut l = DMatrix::zeros(k + 1, k + 1);
        l.view_mut((0, 0), (k, k)).copy_from(&self.l);
        for c in 0..k {
            l[(k, c)] = row[c];
        }
        l[(k, k)] = d2.sqrt();
        self.l = l;
        self.idx.push(j);
        Ok(())
    }

    /// Drops index `j` and re-triangularizes with Givens rotations.
    pub fn remove(&mut self, j: usize) {
        let Some(pos) = self.idx.iter().position(|&i| i == j) else {
            return;
        };
        let k = self.idx.len();
        let mut m = self.l.clone().remove_row(pos);
        for c in pos..k - 1 {
            let a = m[(c, c)];
            let b = m[(c, c + 1)];
            let r = a.hypot(b);
            if r == T::zero() {
                continue;
            }
            let (cs, sn) = (a / r, b / r);
            for row in c..k - 1 {
                let x = m[(row, c)];
                let y = m[(row, c + 1)];
                m[(row, c)] = cs * x + sn * y;
                m[(row, c + 1)] = -sn * x + cs * y;
            }
        }
        self.l = m.remove_column(k - 1);
        for c in 0..k - 1 {
            if self.l[(c, c)] < T::zero() {
                for row in c..k - 1 {
                    self.l[(row, c)] = -self.l[(row, c)];
                }
            }
        }
        self.idx.remove(pos);
    }

    fn forward(&self, b: &DVector<T>) -> DVector<T> {
        let k = self.idx.len();
        let mut y = b.clone();
        for i in 0..k {
            let mut s = y[i];
            for c in 0..i {
                s -= self.l[(i, c)] * y[c];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `A_SS z = b` with `b` ordered like [`Self::indices`].
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let k = self.idx.len();
        let mut z = self.forward(b);
        for i in (0..k).rev() {
            let mut s = z[i];
            for r in i + 1..k {
                s -= self.l[(r, i)] * z[r];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }
}
