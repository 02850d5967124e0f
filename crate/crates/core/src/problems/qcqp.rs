use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::model::{relative_eigen_floor, ConvexProgram, Quadratic};
use crate::Scalar;

/// `½ xᵗPx + bᵗx + c ≤ 0` with `P` positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint<T: Scalar> {
    pub p: DMatrix<T>,
    pub b: DVector<T>,
    pub c: T,
}

/// Minimize `½ xᵗP₀x + b₀ᵗx + c₀` over an intersection of ellipsoids and
/// affine subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProgram<T: Scalar> {
    pub p0: DMatrix<T>,
    pub b0: DVector<T>,
    pub c0: T,
    /// `aᵗx = d`.
    pub equalities: Vec<(DVector<T>, T)>,
    pub inequalities: Vec<QuadraticConstraint<T>>,
}

impl<T: Scalar> QcqpProgram<T> {
    pub fn dim(&self) -> usize {
        self.b0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let sym_tol = |m: &DMatrix<T>| T::lit(1e-12) * (T::one() + m.amax());
        if self.p0.shape() != (n, n) || (&self.p0 - self.p0.transpose()).amax() > sym_tol(&self.p0) {
            return Err(PathError::InvalidProblem("P0 must be a symmetric n x n matrix".into()));
        }
        if self.p0.clone().cholesky().is_none() {
            return Err(PathError::InvalidProblem("P0 is not positive definite".into()));
        }
        for (i, (a, _)) in self.equalities.iter().enumerate() {
            if a.len() != n {
                return Err(PathError::InvalidProblem(format!("equality {} has wrong length", i + 1)));
            }
        }
        for (j, q) in self.inequalities.iter().enumerate() {
            let bad_shape = q.p.shape() != (n, n) || q.b.len() != n;
            if bad_shape || (&q.p - q.p.transpose()).amax() > sym_tol(&q.p) {
                return Err(PathError::InvalidProblem(format!(
                    "inequality {} needs a symmetric n x n P and length-n b",
                    j + 1
                )));
            }
            if relative_eigen_floor(&q.p) < -T::lit(1e-8) {
                return Err(PathError::InvalidProblem(format!(
                    "inequality {} matrix is not positive semidefinite",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    /// The two-dimensional instance with three unit disks.
    pub fn toy() -> Self {
        let p = DMatrix::from_diagonal_element(2, 2, T::lit(2.0));
        let disk = |b0: f64, b1: f64| QuadraticConstraint {
            p: p.clone(),
            b: DVector::from_row_slice(&[T::lit(b0), T::lit(b1)]),
            c: T::lit(-0.75),
        };
        Self {
            p0: DMatrix::from_row_slice(2, 2, &[T::one(), -T::one(), -T::one(), T::lit(2.0)]),
            b0: DVector::from_row_slice(&[T::lit(0.5), T::lit(-2.0)]),
            c0: T::zero(),
            equalities: Vec::new(),
            inequalities: vec![disk(-1.0, 0.0), disk(1.0, 0.0), disk(0.0, -1.0)],
        }
    }
}

/// Lowers to a [`ConvexProgram`] starting at `−P₀⁻¹b₀`.
pub fn qcqp_lower<T: Scalar>(q: &QcqpProgram<T>) -> Result<ConvexProgram<T>> {
    q.validate()?;
    let n = q.dim();
    let start = q
        .p0
        .clone()
        .cholesky()
        .map(|c| -c.solve(&q.b0))
        .ok_or_else(|| PathError::InvalidProblem("P0 is not positive definite".into()))?;
    let f = Quadratic::new(q.p0.clone(), q.b0.clone(), q.c0);
    let mut prog = ConvexProgram::new(n, Arc::new(f)).with_start(start);
    for (a, d) in &q.equalities {
        prog = prog.with_equality(a.clone(), *d);
    }
    for (j, h) in q.inequalities.iter().enumerate() {
        prog = prog.with_inequality(
            format!("q{}", j + 1),
            Arc::new(Quadratic::new(h.p.clone(), h.b.clone(), h.c)),
        );
    }
    Ok(prog)
}
