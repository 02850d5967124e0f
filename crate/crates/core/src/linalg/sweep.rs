use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::Scalar;

/// Sweep-operator tableau over a symmetric matrix.
///
/// Sweeping index `k` replaces `a_kk` by `−1/a_kk`, scales row and column `k`
/// by `1/a_kk` and subtracts `a_ik a_kj / a_kk` elsewhere. After sweeping an
/// index set `S`, the `S × S` block holds `−(A_SS)⁻¹`. Unsweeping inverts the
/// operation, so active sets can grow and shrink without refactoring.
#[derive(Debug, Clone)]
pub struct SweepTableau<T: Scalar> {
    a: DMatrix<T>,
    swept: Vec<bool>,
    pivot_tol: T,
}

impl<T: Scalar> SweepTableau<T> {
    pub fn new(a: DMatrix<T>, pivot_tol: T) -> Self {
        let n = a.nrows();
        Self {
            a,
            swept: vec![false; n],
            pivot_tol,
        }
    }

    pub fn is_swept(&self, k: usize) -> bool {
        self.swept[k]
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.a
    }

    fn apply(&mut self, k: usize, inverse: bool) -> Result<()> {
        let d = self.a[(k, k)];
        if d.abs() <= self.pivot_tol {
            return Err(PathError::SingularKkt);
        }
        let n = self.a.nrows();
        let sign = if inverse { -T::one() } else { T::one() };
        for i in 0..n {
            if i == k {
                continue;
            }
            let aik = self.a[(i, k)];
            if aik == T::zero() {
                continue;
            }
            for j in 0..n {
                if j == k {
                    continue;
                }
                let akj = self.a[(k, j)];
                self.a[(i, j)] -= aik * akj / d;
            }
        }
        for i in 0..n {
            if i != k {
                self.a[(i, k)] = sign * self.a[(i, k)] / d;
                self.a[(k, i)] = sign * self.a[(k, i)] / d;
            }
        }
        self.a[(k, k)] = -T::one() / d;
        Ok(())
    }

    pub fn sweep(&mut self, k: usize) -> Result<()> {
        if self.swept[k] {
            return Err(PathError::Contract(format!("index {k} already swept")));
        }
        self.apply(k, false)?;
        self.swept[k] = true;
        Ok(())
    }

    pub fn unsweep(&mut self, k: usize) -> Result<()> {
        if !self.swept[k] {
            return Err(PathError::Contract(format!("index {k} not swept")));
        }
        self.apply(k, true)?;
        self.swept[k] = false;
        Ok(())
    }

    /// `−(A_SS)⁻¹ v` for the currently swept set `S` (listed in `idx`).
    pub fn neg_inverse_times(&self, idx: &[usize], v: &DVector<T>) -> DVector<T> {
        DVector::from_fn(idx.len(), |r, _| {
            idx.iter()
                .enumerate()
                .fold(T::zero(), |acc, (c, &j)| acc + self.a[(idx[r], j)] * v[c])
        })
    }
}
