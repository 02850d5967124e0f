//! Convex programs described through value / gradient / Hessian oracles.
//!
//! A [`ConvexProgram`] minimizes a smooth convex `f` subject to affine
//! equalities `g_i(x) = a_iᵗx − d_i = 0` and smooth convex inequalities
//! `h_j(x) ≤ 0`. Oracles are pure functions of `x`: the path engine evaluates
//! them at integrator-chosen points in no particular order.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::linalg::{check_len, inf_norm, symmetrize};
use crate::Scalar;

/// A twice differentiable function `ℝⁿ → ℝ`.
pub trait SmoothFn<T: Scalar>: Send + Sync {
    fn value(&self, x: &DVector<T>) -> T;
    fn gradient(&self, x: &DVector<T>) -> DVector<T>;
    fn hessian(&self, x: &DVector<T>) -> DMatrix<T>;
    /// True when the Hessian does not depend on `x`.
    fn constant_hessian(&self) -> bool {
        false
    }
    /// Reports points where the derivatives above are not valid.
    fn validate(&self, _x: &DVector<T>) -> Result<()> {
        Ok(())
    }
}

/// `½ xᵗ A x + bᵗ x + c`.
#[derive(Debug, Clone)]
pub struct Quadratic<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub c: T,
}

impl<T: Scalar> Quadratic<T> {
    pub fn new(a: DMatrix<T>, b: DVector<T>, c: T) -> Self {
        Self { a: symmetrize(&a), b, c }
    }
}

impl<T: Scalar> SmoothFn<T> for Quadratic<T> {
    fn value(&self, x: &DVector<T>) -> T {
        (&self.a * x).dot(x) * T::lit(0.5) + self.b.dot(x) + self.c
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b
    }
    fn hessian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }
    fn constant_hessian(&self) -> bool {
        true
    }
}

/// `wᵗ x − e`, an affine inequality written as a smooth function.
#[derive(Debug, Clone)]
pub struct Affine<T: Scalar> {
    pub w: DVector<T>,
    pub e: T,
}

impl<T: Scalar> SmoothFn<T> for Affine<T> {
    fn value(&self, x: &DVector<T>) -> T {
        self.w.dot(x) - self.e
    }
    fn gradient(&self, _x: &DVector<T>) -> DVector<T> {
        self.w.clone()
    }
    fn hessian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.w.len(), self.w.len())
    }
    fn constant_hessian(&self) -> bool {
        true
    }
}

/// Affine equality `aᵗ x − d = 0`.
#[derive(Debug, Clone)]
pub struct AffineEquality<T: Scalar> {
    pub a: DVector<T>,
    pub d: T,
}

impl<T: Scalar> AffineEquality<T> {
    pub fn value(&self, x: &DVector<T>) -> T {
        self.a.dot(x) - self.d
    }
}

/// A ρ-dependent term `weight(ρ) · q(x)` added to the surrogate only, used to
/// restore strict convexity and coercivity (the SDP route adds `ε(ρ)/2 ‖X‖²_F`).
#[derive(Clone)]
pub struct Amendment<T: Scalar> {
    pub weight: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub weight_derivative: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub term: Arc<dyn SmoothFn<T>>,
}

impl<T: Scalar> fmt::Debug for Amendment<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Amendment").finish_non_exhaustive()
    }
}

/// A named inequality oracle `h_j(x) ≤ 0`.
#[derive(Clone)]
pub struct Inequality<T: Scalar> {
    pub name: String,
    pub func: Arc<dyn SmoothFn<T>>,
}

impl<T: Scalar> fmt::Debug for Inequality<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Inequality").field("name", &self.name).finish()
    }
}

#[derive(Clone)]
pub struct ConvexProgram<T: Scalar> {
    dim: usize,
    objective: Arc<dyn SmoothFn<T>>,
    amendment: Option<Amendment<T>>,
    equalities: Vec<AffineEquality<T>>,
    inequalities: Vec<Inequality<T>>,
    pub objective_strictly_convex: bool,
    pub objective_coercive: bool,
    start: Option<DVector<T>>,
}

impl<T: Scalar> fmt::Debug for ConvexProgram<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexProgram")
            .field("dim", &self.dim)
            .field("equalities", &self.equalities.len())
            .field("inequalities", &self.inequalities.len())
            .field("objective_strictly_convex", &self.objective_strictly_convex)
            .field("objective_coercive", &self.objective_coercive)
            .finish()
    }
}

/// Objective and constraint values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T: Scalar> {
    pub f: T,
    pub g: DVector<T>,
    pub h: DVector<T>,
}

impl<T: Scalar> ConvexProgram<T> {
    pub fn new(dim: usize, objective: Arc<dyn SmoothFn<T>>) -> Self {
        Self {
            dim,
            objective,
            amendment: None,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            objective_strictly_convex: true,
            objective_coercive: true,
            start: None,
        }
    }

    pub fn with_equality(mut self, a: DVector<T>, d: T) -> Self {
        assert_eq!(a.len(), self.dim, "equality row length");
        self.equalities.push(AffineEquality { a, d });
        self
    }

    pub fn with_inequality(mut self, name: impl Into<String>, func: Arc<dyn SmoothFn<T>>) -> Self {
        self.inequalities.push(Inequality {
            name: name.into(),
            func,
        });
        self
    }

    pub fn with_amendment(mut self, amendment: Amendment<T>) -> Self {
        self.amendment = Some(amendment);
        self
    }

    pub fn with_flags(mut self, strictly_convex: bool, coercive: bool) -> Self {
        self.objective_strictly_convex = strictly_convex;
        self.objective_coercive = coercive;
        self
    }

    /// Supplies a closed-form unconstrained minimizer of the surrogate at ρ = 0.
    pub fn with_start(mut self, x0: DVector<T>) -> Self {
        assert_eq!(x0.len(), self.dim, "start length");
        self.start = Some(x0);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    pub fn objective(&self) -> &Arc<dyn SmoothFn<T>> {
        &self.objective
    }

    pub fn amendment(&self) -> Option<&Amendment<T>> {
        self.amendment.as_ref()
    }

    pub fn equalities(&self) -> &[AffineEquality<T>] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[Inequality<T>] {
        &self.inequalities
    }

    pub fn start(&self) -> Option<&DVector<T>> {
        self.start.as_ref()
    }

    /// True when the objective and every inequality have constant Hessians
    /// (quadratic objective, affine constraints).
    pub fn is_qp(&self) -> bool {
        self.amendment.is_none()
            && self.objective.constant_hessian()
            && self.inequalities.iter().all(|h| {
                h.func.constant_hessian() && {
                    let z = DVector::zeros(self.dim);
                    h.func.hessian(&z).iter().all(|v| *v == T::zero())
                }
            })
    }

    fn finite(name: &str, v: T) -> Result<T> {
        if v.is_finite_value() {
            Ok(v)
        } else {
            Err(PathError::Domain {
                function: name.to_string(),
            })
        }
    }

    /// Objective and all constraint values at `x`.
    pub fn evaluate(&self, x: &DVector<T>) -> Result<Evaluation<T>> {
        check_len("evaluate", x, self.dim)?;
        let f = Self::finite("f", self.objective.value(x))?;
        let g = self
            .equalities
            .iter()
            .enumerate()
            .map(|(i, e)| Self::finite(&format!("g{}", i + 1), e.value(x)))
            .collect::<Result<Vec<_>>>()?;
        let h = self
            .inequalities
            .iter()
            .map(|h| Self::finite(&h.name, h.func.value(x)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluation {
            f,
            g: DVector::from_vec(g),
            h: DVector::from_vec(h),
        })
    }

    /// Runs every oracle's own validity check at `x`.
    pub fn validate_at(&self, x: &DVector<T>) -> Result<()> {
        self.objective.validate(x)?;
        for h in &self.inequalities {
            h.func.validate(x)?;
        }
        Ok(())
    }

    /// Objective plus any ρ-dependent amendment.
    pub fn surrogate_objective(&self, x: &DVector<T>, rho: T) -> T {
        let base = self.objective.value(x);
        match &self.amendment {
            Some(a) => base + (a.weight)(rho) * a.term.value(x),
            None => base,
        }
    }

    pub fn surrogate_gradient(&self, x: &DVector<T>, rho: T) -> DVector<T> {
        let mut g = self.objective.gradient(x);
        if let Some(a) = &self.amendment {
            g += a.term.gradient(x) * (a.weight)(rho);
        }
        g
    }

    pub fn surrogate_hessian(&self, x: &DVector<T>, rho: T) -> DMatrix<T> {
        let mut h = self.objective.hessian(x);
        if let Some(a) = &self.amendment {
            h += a.term.hessian(x) * (a.weight)(rho);
        }
        h
    }

    /// `∂/∂ρ ∇f(x, ρ)`; zero without an amendment.
    pub fn gradient_rho_derivative(&self, x: &DVector<T>, rho: T) -> DVector<T> {
        match &self.amendment {
            Some(a) => a.term.gradient(x) * (a.weight_derivative)(rho),
            None => DVector::zeros(self.dim),
        }
    }

    /// Compares analytic derivatives with central differences.
    pub fn check_derivatives(&self, x: &DVector<T>, step: Option<T>) -> DerivativeReport {
        let h = step.unwrap_or_else(|| T::lit(1e-6) * (T::one() + inf_norm(x)));
        let mut entries = vec![finite_difference_errors("f", self.objective.as_ref(), x, h)];
        for ineq in &self.inequalities {
            entries.push(finite_difference_errors(&ineq.name, ineq.func.as_ref(), x, h));
        }
        DerivativeReport { entries }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeError {
    pub function: String,
    pub gradient: f64,
    pub hessian: f64,
}

/// Per-function relative errors of analytic derivatives against central
/// differences, scaled by `max(1, ‖analytic‖∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub entries: Vec<DerivativeError>,
}

impl DerivativeReport {
    pub fn max_gradient_error(&self) -> f64 {
        self.entries.iter().map(|e| e.gradient).fold(0.0, f64::max)
    }
    pub fn max_hessian_error(&self) -> f64 {
        self.entries.iter().map(|e| e.hessian).fold(0.0, f64::max)
    }
}

pub fn finite_difference_errors<T: Scalar>(
    name: &str,
    f: &dyn SmoothFn<T>,
    x: &DVector<T>,
    step: T,
) -> DerivativeError {
    let n = x.len();
    let g = f.gradient(x);
    let hess = f.hessian(x);
    let two = T::lit(2.0);
    let mut fd_g = DVector::zeros(n);
    let mut fd_h = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        fd_g[k] = (f.value(&xp) - f.value(&xm)) / (two * step);
        let col = (f.gradient(&xp) - f.gradient(&xm)) / (two * step);
        fd_h.set_column(k, &col);
    }
    let rel = |err: T, scale: T| (err / scale.max(T::one())).to_f64_lossy();
    DerivativeError {
        function: name.to_string(),
        gradient: rel(inf_norm(&(&g - &fd_g)), inf_norm(&g)),
        hessian: rel(
            (&hess - &fd_h).amax(),
            hess.amax(),
        ),
    }
}

/// Smallest eigenvalue of the symmetric part of `h` relative to its max-norm;
/// nonnegative (up to round-off) for a positive semidefinite Hessian.
pub fn relative_eigen_floor<T: Scalar>(h: &DMatrix<T>) -> T {
    let scale = h.amax();
    if scale == T::zero() {
        return T::zero();
    }
    let eig = symmetrize(h).symmetric_eigenvalues();
    eig.iter().fold(T::max_value().unwrap_or(scale), |m, v| m.min(*v)) / scale
}
