use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::linalg::has_full_row_rank;
use crate::model::{ConvexProgram, SmoothFn};
use crate::oracle::nnls_reference;
use crate::Scalar;

/// `c · Π x_i^{α_i}` with `c > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial<T: Scalar> {
    pub coefficient: T,
    pub exponents: DVector<T>,
}

/// Positive combination of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct Posynomial<T: Scalar> {
    pub terms: Vec<Monomial<T>>,
}

impl<T: Scalar> Posynomial<T> {
    pub fn new(terms: &[(f64, &[f64])]) -> Self {
        Self {
            terms: terms
                .iter()
                .map(|(c, a)| Monomial {
                    coefficient: T::lit(*c),
                    exponents: DVector::from_iterator(a.len(), a.iter().map(|v| T::lit(*v))),
                })
                .collect(),
        }
    }

    /// Value at positive `x`.
    pub fn eval(&self, x: &DVector<T>) -> T {
        self.terms.iter().fold(T::zero(), |s, m| {
            s + m.coefficient * m.exponents.iter().zip(x.iter()).fold(T::one(), |p, (a, xi)| p * xi.powf(*a))
        })
    }

    fn validate(&self, n: usize, what: &str) -> Result<()> {
        if self.terms.is_empty() {
            return Err(PathError::InvalidProblem(format!("{what} has no terms")));
        }
        for m in &self.terms {
            if !(m.coefficient > T::zero()) || m.exponents.len() != n {
                return Err(PathError::InvalidProblem(format!(
                    "{what} needs positive coefficients and length-{n} exponent vectors"
                )));
            }
        }
        Ok(())
    }
}

/// Minimize a posynomial subject to posynomial constraints `h_j(x) ≤ 1` and
/// monomial equalities `g_i(x) = 1`, over `x > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosynomialProgram<T: Scalar> {
    pub dim: usize,
    pub objective: Posynomial<T>,
    pub constraints: Vec<Posynomial<T>>,
    pub equalities: Vec<Monomial<T>>,
}

impl<T: Scalar> PosynomialProgram<T> {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate(self.dim, "objective")?;
        for (j, h) in self.constraints.iter().enumerate() {
            h.validate(self.dim, &format!("constraint {}", j + 1))?;
        }
        for (i, g) in self.equalities.iter().enumerate() {
            Posynomial {
                terms: vec![g.clone()],
            }
            .validate(self.dim, &format!("equality {}", i + 1))?;
        }
        Ok(())
    }

    /// `x₁⁻³ + 3x₁⁻¹x₂⁻² + x₁x₂` subject to `x₁^{1/2}/6 + 2x₂/3 ≤ 1`.
    pub fn toy() -> Self {
        Self {
            dim: 2,
            objective: Posynomial::new(&[(1.0, &[-3.0, 0.0]), (3.0, &[-1.0, -2.0]), (1.0, &[1.0, 1.0])]),
            constraints: vec![Posynomial::new(&[(1.0 / 6.0, &[0.5, 0.0]), (2.0 / 3.0, &[0.0, 1.0])])],
            equalities: Vec::new(),
        }
    }
}

/// `ln Σ c_k e^{α_kᵗy}`, evaluated with the largest exponent shifted out.
#[derive(Debug, Clone)]
pub struct LogPosynomial<T: Scalar> {
    log_c: Vec<T>,
    alpha: Vec<DVector<T>>,
}

impl<T: Scalar> LogPosynomial<T> {
    pub fn new(p: &Posynomial<T>) -> Self {
        Self {
            log_c: p.terms.iter().map(|m| m.coefficient.ln()).collect(),
            alpha: p.terms.iter().map(|m| m.exponents.clone()).collect(),
        }
    }

    /// Log of the sum and the normalized term weights.
    fn weights(&self, y: &DVector<T>) -> (T, Vec<T>) {
        let e: Vec<T> = self
            .log_c
            .iter()
            .zip(&self.alpha)
            .map(|(lc, a)| *lc + a.dot(y))
            .collect();
        let top = e.iter().copied().fold(T::min_value().unwrap_or(-T::max_value().unwrap()), T::max);
        let w: Vec<T> = e.iter().map(|v| (*v - top).exp()).collect();
        let s = w.iter().fold(T::zero(), |a, b| a + *b);
        (top + s.ln(), w.into_iter().map(|v| v / s).collect())
    }
}

impl<T: Scalar> SmoothFn<T> for LogPosynomial<T> {
    fn value(&self, y: &DVector<T>) -> T {
        self.weights(y).0
    }
    fn gradient(&self, y: &DVector<T>) -> DVector<T> {
        let (_, w) = self.weights(y);
        let mut g = DVector::zeros(y.len());
        for (wk, a) in w.iter().zip(&self.alpha) {
            g.axpy(*wk, a, T::one());
        }
        g
    }
    fn hessian(&self, y: &DVector<T>) -> DMatrix<T> {
        let (_, w) = self.weights(y);
        let n = y.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for (wk, a) in w.iter().zip(&self.alpha) {
            g.axpy(*wk, a, T::one());
            h.ger(*wk, a, a, T::one());
        }
        h.ger(-T::one(), &g, &g, T::one());
        h
    }
}

/// Strict convexity and coercivity of the objective in `y = ln x`:
/// the exponents must span `ℝⁿ`, and the origin must be interior to their
/// convex hull (equivalently, the polar cone is `{0}`).
pub fn gp_wellposed<T: Scalar>(p: &PosynomialProgram<T>) -> (bool, bool) {
    let n = p.dim;
    let k = p.objective.terms.len();
    let a = DMatrix::from_fn(n, k, |i, j| p.objective.terms[j].exponents[i]);
    let spans = has_full_row_rank(&a, T::lit(1e-10));
    if !spans {
        return (false, false);
    }
    // 0 is interior iff some μ > 0 has Aμ = 0; with μ = 1 + ν, ν ≥ 0,
    // this is a nonnegative least-squares problem with zero optimum.
    let target = -(&a * DVector::from_element(k, T::one()));
    let rep = nnls_reference(&a, &target);
    let resid = (&a * &rep.solution - &target).amax();
    let coercive = resid <= T::lit(1e-9) * (T::one() + target.amax() + a.amax());
    (spans, coercive)
}

/// Lowers to a program over `y = ln x`: `ln f(y)` subject to `ln h_j(y) ≤ 0`
/// and the affine `α_iᵗy + ln c_i = 0`.
pub fn gp_lower<T: Scalar>(p: &PosynomialProgram<T>) -> Result<ConvexProgram<T>> {
    p.validate()?;
    let (strict, coercive) = gp_wellposed(p);
    let mut prog = ConvexProgram::new(p.dim, Arc::new(LogPosynomial::new(&p.objective)))
        .with_flags(strict, coercive);
    for m in &p.equalities {
        prog = prog.with_equality(m.exponents.clone(), -m.coefficient.ln());
    }
    for (j, h) in p.constraints.iter().enumerate() {
        prog = prog.with_inequality(format!("posy{}", j + 1), Arc::new(LogPosynomial::new(h)));
    }
    Ok(prog)
}

/// `x = e^y`.
pub fn gp_to_x<T: Scalar>(y: &DVector<T>) -> DVector<T> {
    y.map(|v| v.exp())
}

/// Path direction in `x` from the direction in `y`: `dx_i = x_i dy_i`.
pub fn gp_x_direction<T: Scalar>(y: &DVector<T>, dy: &DVector<T>) -> DVector<T> {
    gp_to_x(y).component_mul(dy)
}
