//! Dense and banded linear algebra used by the path machinery.
//!
//! Storage and the textbook factorizations (Cholesky, LU, SVD, symmetric eigen)
//! come from `nalgebra`. The pieces specific to path following live here:
//! a Bunch–Kaufman symmetric indefinite factorization for bordered systems,
//! orthonormal null-space bases with Givens updating, the sweep operator, and
//! an envelope Cholesky for the banded normal matrix of the denoising model.

mod banded;
mod cholupdate;
mod ldlt;
mod nullspace;
mod sweep;

pub use banded::{BandedCholesky, SparseBandedMatrix};
pub use cholupdate::GrowingCholesky;
pub use ldlt::SymmetricIndefinite;
pub use nullspace::NullBasis;
pub use sweep::SweepTableau;

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::Scalar;

pub fn inf_norm<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub fn mat_inf_norm<T: Scalar>(a: &DMatrix<T>) -> T {
    a.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

pub fn check_len<T>(context: &'static str, v: &DVector<T>, expected: usize) -> Result<()>
where
    T: Scalar,
{
    if v.len() != expected {
        return Err(PathError::DimensionMismatch {
            context,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

/// Stacks row vectors into a `rows × n` matrix.
pub fn stack_rows<T: Scalar>(rows: &[DVector<T>], n: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

/// Singular values of `a`, largest first.
pub fn singular_values<T: Scalar>(a: &DMatrix<T>) -> Vec<T> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<T> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Full-row-rank test: smallest singular value above `rel_tol` times the largest.
pub fn has_full_row_rank<T: Scalar>(a: &DMatrix<T>, rel_tol: T) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    if a.nrows() > a.ncols() {
        return false;
    }
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) => hi > T::zero() && lo > rel_tol * hi && s.len() == a.nrows(),
        _ => false,
    }
}

/// Symmetric positive definite solve via Cholesky; `None` when the factorization fails.
pub fn spd_solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Symmetric part `(A + Aᵗ)/2`.
pub fn symmetrize<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}
