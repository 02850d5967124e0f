use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::model::{Affine, ConvexProgram, Quadratic, SmoothFn};
use crate::Scalar;

/// A closed convex set written as `h(x) ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet<T: Scalar> {
    /// `‖x − center‖ ≤ radius`, as `½‖x − c‖² − ½r² ≤ 0`.
    Ball { center: DVector<T>, radius: T },
    /// `aᵗx ≤ b`.
    HalfSpace { a: DVector<T>, b: T },
}

impl<T: Scalar> ConvexSet<T> {
    pub fn unit_ball(n: usize) -> Self {
        ConvexSet::Ball {
            center: DVector::zeros(n),
            radius: T::one(),
        }
    }

    pub fn constraint(&self) -> Arc<dyn SmoothFn<T>> {
        match self {
            ConvexSet::Ball { center, radius } => {
                let n = center.len();
                let c = center.norm_squared() * T::lit(0.5) - *radius * *radius * T::lit(0.5);
                Arc::new(Quadratic::new(DMatrix::identity(n, n), -center, c))
            }
            ConvexSet::HalfSpace { a, b } => Arc::new(Affine { w: a.clone(), e: *b }),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            ConvexSet::Ball { center, radius } => {
                let d = x - center;
                let r = d.norm();
                if r <= *radius {
                    x.clone()
                } else {
                    center + d * (*radius / r)
                }
            }
            ConvexSet::HalfSpace { a, b } => {
                let excess = a.dot(x) - *b;
                if excess <= T::zero() {
                    x.clone()
                } else {
                    x - a * (excess / a.norm_squared())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConvexSet::Ball { .. } => "ball",
            ConvexSet::HalfSpace { .. } => "halfspace",
        }
    }
}

/// Projection of `b` onto the intersection of `sets`: minimize `½‖x − b‖²`.
pub fn projection_problem<T: Scalar>(b: &DVector<T>, sets: &[ConvexSet<T>]) -> ConvexProgram<T> {
    let n = b.len();
    let f = Quadratic::new(DMatrix::identity(n, n), -b, b.norm_squared() * T::lit(0.5));
    let mut prog = ConvexProgram::new(n, Arc::new(f)).with_start(b.clone());
    for (j, s) in sets.iter().enumerate() {
        prog = prog.with_inequality(format!("{}{}", s.name(), j + 1), s.constraint());
    }
    prog
}

/// Nonnegative least squares `min ½‖x − Vw‖²` subject to `w ≥ 0`, as a QP
/// with constraints `−w_k ≤ 0`. The start `(VᵗV)⁻¹Vᵗx` comes from one QR
/// decomposition of `V`.
pub fn nnls_problem<T: Scalar>(v: &DMatrix<T>, x: &DVector<T>) -> Result<ConvexProgram<T>> {
    let (m, r) = v.shape();
    if x.len() != m {
        return Err(PathError::DimensionMismatch {
            context: "nnls target",
            expected: m,
            found: x.len(),
        });
    }
    if r == 0 || m < r {
        return Err(PathError::InvalidProblem(format!(
            "design with shape {m}x{r} cannot have full column rank"
        )));
    }
    let qr = v.clone().qr();
    let rmat = qr.r();
    let scale = rmat.diagonal().iter().fold(T::zero(), |s, d| s.max(d.abs()));
    if rmat.diagonal().iter().any(|d| d.abs() <= T::lit(1e-10) * scale) {
        return Err(PathError::InvalidProblem("design is column rank deficient".into()));
    }
    let qtx = qr.q().transpose() * x;
    let w0 = rmat
        .solve_upper_triangular(&qtx)
        .ok_or_else(|| PathError::InvalidProblem("design is column rank deficient".into()))?;
    let a = v.transpose() * v;
    let b = -(v.transpose() * x);
    let f = Quadratic::new(a, b, x.norm_squared() * T::lit(0.5));
    let mut prog = ConvexProgram::new(r, Arc::new(f)).with_start(w0);
    for k in 0..r {
        let mut w = DVector::zeros(r);
        w[k] = -T::one();
        prog = prog.with_inequality(format!("w{}>=0", k + 1), Arc::new(Affine { w, e: T::zero() }));
    }
    Ok(prog)
}
