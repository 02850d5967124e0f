use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::model::{Amendment, ConvexProgram, Quadratic, SmoothFn};
use crate::Scalar;

/// Side of a symmetric matrix whose lower triangle has `m` entries.
fn side_of(m: usize) -> usize {
    let mut n = 0;
    while n * (n + 1) / 2 < m {
        n += 1;
    }
    n
}

/// Lower-triangle coordinates `(i, j)`, `i ≥ j`, in column-major order.
fn coordinates(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|j| (j..n).map(move |i| (i, j))).collect()
}

/// `v(X)`: the lower triangle of `X` stacked column by column.
pub fn half_vectorize<T: Scalar>(x: &DMatrix<T>) -> DVector<T> {
    let c = coordinates(x.nrows());
    DVector::from_iterator(c.len(), c.iter().map(|&(i, j)| x[(i, j)]))
}

/// The symmetric matrix with lower triangle `v` (the duplication map).
pub fn duplicate<T: Scalar>(v: &DVector<T>) -> DMatrix<T> {
    let n = side_of(v.len());
    let mut x = DMatrix::zeros(n, n);
    for (k, (i, j)) in coordinates(n).into_iter().enumerate() {
        x[(i, j)] = v[k];
        x[(j, i)] = v[k];
    }
    x
}

/// `Dᵗ vec(A)`: the linear form `x ↦ tr(A X)` in lower-triangle coordinates.
fn trace_form<T: Scalar>(a: &DMatrix<T>) -> DVector<T> {
    let c = coordinates(a.nrows());
    DVector::from_iterator(
        c.len(),
        c.iter()
            .map(|&(i, j)| if i == j { a[(i, i)] } else { a[(i, j)] + a[(j, i)] }),
    )
}

/// Minimize `tr(CX)` subject to `tr(A_i X) = b_i` and `X ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProgram<T: Scalar> {
    pub c: DMatrix<T>,
    pub constraints: Vec<(DMatrix<T>, T)>,
    /// Rate `c` in the amendment weight `ε(ρ) = e^{−cρ}`.
    pub decay: T,
}

impl<T: Scalar> SdpProgram<T> {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let symmetric = |m: &DMatrix<T>| m.shape() == (n, n) && (m - m.transpose()).amax() <= T::lit(1e-12) * (T::one() + m.amax());
        if !symmetric(&self.c) {
            return Err(PathError::InvalidProblem("C must be a symmetric square matrix".into()));
        }
        for (i, (a, _)) in self.constraints.iter().enumerate() {
            if !symmetric(a) {
                return Err(PathError::InvalidProblem(format!("A{} must be symmetric n x n", i + 1)));
            }
        }
        if !(self.decay > T::zero()) {
            return Err(PathError::InvalidProblem("decay rate must be positive".into()));
        }
        Ok(())
    }

    /// `C = [[0, ½], [½, 0]]` with `X₁₁ = 1` and `X₂₂ = 2`.
    pub fn toy() -> Self {
        let h = T::lit(0.5);
        let e = |i: usize| {
            let mut m = DMatrix::zeros(2, 2);
            m[(i, i)] = T::one();
            m
        };
        Self {
            c: DMatrix::from_row_slice(2, 2, &[T::zero(), h, h, T::zero()]),
            constraints: vec![(e(0), T::one()), (e(1), T::lit(2.0))],
            decay: T::one(),
        }
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInfo<T: Scalar> {
    pub eigenvalues: DVector<T>,
    /// Orthonormal eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<T>,
    /// `Σ_{i>1} (ν_i − ν₁)⁻¹ u_i u_iᵗ`, the pseudo-inverse of `X − ν₁I`.
    pub resolvent: DMatrix<T>,
}

impl<T: Scalar> SpectralInfo<T> {
    pub fn new(x: &DMatrix<T>) -> Result<Self> {
        let n = x.nrows();
        let eig = x.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (c, &k) in order.iter().enumerate() {
            eigenvectors.set_column(c, &eig.eigenvectors.column(k));
        }
        if n > 1 {
            let gap = eigenvalues[1] - eigenvalues[0];
            if gap <= T::lit(1e-8) * x.norm().max(T::machine_eps()) {
                let gap = gap.to_f64_lossy();
                log::warn!("minimum eigenvalue is not simple (gap {gap:e})");
                return Err(PathError::Multiplicity { gap });
            }
        }
        let mut resolvent = DMatrix::zeros(n, n);
        for i in 1..n {
            let u = eigenvectors.column(i);
            resolvent.ger(T::one() / (eigenvalues[i] - eigenvalues[0]), &u, &u, T::one());
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            resolvent,
        })
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn min_eigenvector(&self) -> DVector<T> {
        self.eigenvectors.column(0).into_owned()
    }
}

/// Spectral data at `X = duplicate(x)` plus the gradient and Hessian of
/// `−ν₁` in lower-triangle coordinates.
pub fn sdp_eig<T: Scalar>(x: &DVector<T>) -> Result<(SpectralInfo<T>, DVector<T>, DMatrix<T>)> {
    let xm = duplicate(x);
    let info = SpectralInfo::new(&xm)?;
    let u = info.min_eigenvector();
    let coords = coordinates(xm.nrows());
    let m = coords.len();
    let grad = DVector::from_iterator(
        m,
        coords
            .iter()
            .map(|&(i, j)| if i == j { -u[i] * u[i] } else { -T::lit(2.0) * u[i] * u[j] }),
    );
    // column k is (∂X/∂x_k) u
    let mut w = DMatrix::zeros(xm.nrows(), m);
    for (k, &(i, j)) in coords.iter().enumerate() {
        w[(i, k)] += u[j];
        if i != j {
            w[(j, k)] += u[i];
        }
    }
    let hess = w.transpose() * &info.resolvent * &w * T::lit(2.0);
    Ok((info, grad, hess))
}

/// The constraint `−ν₁(X) ≤ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinEigenvalue;

impl<T: Scalar> SmoothFn<T> for MinEigenvalue {
    fn value(&self, x: &DVector<T>) -> T {
        let xm = duplicate(x);
        let eig = xm.symmetric_eigenvalues();
        -eig.iter().copied().fold(T::max_value().unwrap(), T::min)
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        match sdp_eig(x) {
            Ok((_, g, _)) => g,
            Err(_) => DVector::from_element(x.len(), T::lit(f64::NAN)),
        }
    }
    fn hessian(&self, x: &DVector<T>) -> DMatrix<T> {
        match sdp_eig(x) {
            Ok((_, _, h)) => h,
            Err(_) => DMatrix::from_element(x.len(), x.len(), T::lit(f64::NAN)),
        }
    }
    fn validate(&self, x: &DVector<T>) -> Result<()> {
        SpectralInfo::new(&duplicate(x)).map(|_| ())
    }
}

/// Program over `x = v(X)` with the amended objective
/// `tr(CX) + ε(ρ)/2 ‖X‖²_F`, `ε(ρ) = e^{−cρ}`, starting at `X(0) = −C`.
pub fn sdp_surrogate<T: Scalar>(s: &SdpProgram<T>) -> Result<ConvexProgram<T>> {
    s.validate()?;
    let q = trace_form(&s.c);
    let m = q.len();
    let f = Quadratic::new(DMatrix::zeros(m, m), q, T::zero());
    // ½‖X‖²_F = ½ xᵗ DᵗD x with DᵗD diagonal (1 on the diagonal, 2 off it)
    let dtd = DVector::from_iterator(
        m,
        coordinates(s.dim()).into_iter().map(|(i, j)| if i == j { T::one() } else { T::lit(2.0) }),
    );
    let c = s.decay;
    let amendment = Amendment {
        weight: Arc::new(move |rho: T| (-c * rho).exp()),
        weight_derivative: Arc::new(move |rho: T| -c * (-c * rho).exp()),
        term: Arc::new(Quadratic::new(DMatrix::from_diagonal(&dtd), DVector::zeros(m), T::zero())),
    };
    let mut prog = ConvexProgram::new(m, Arc::new(f))
        .with_flags(false, false)
        .with_amendment(amendment)
        .with_start(-half_vectorize(&s.c));
    for (a, b) in &s.constraints {
        prog = prog.with_equality(trace_form(a), *b);
    }
    Ok(prog.with_inequality("psd", Arc::new(MinEigenvalue)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{initialize, run, EngineConfig};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn duplication_round_trip() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let h = half_vectorize(&x);
        assert_eq!(h, v(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(duplicate(&h), x);
        let a = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.5, -1.0, 2.0, 0.0, 0.5, 0.0, 3.0]);
        assert!((trace_form(&a).dot(&h) - (&a * &x).trace()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_gradient() {
        let (info, g, _) = sdp_eig(&v(&[1.0, 0.0, 2.0])).unwrap();
        assert_eq!(info.min_eigenvalue(), 1.0);
        assert!((g - v(&[-1.0, 0.0, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn off_diagonal_derivative_by_hand() {
        let (info, g, _) = sdp_eig(&v(&[0.0, 1.0, 0.0])).unwrap();
        assert!((info.min_eigenvalue() + 1.0).abs() < 1e-15);
        // ∂ν₁/∂x₂₁ = 2u₁u₂ = −1, so the gradient of −ν₁ is +1 there
        assert!((g[1] - 1.0).abs() < 1e-14);
        assert!((&info.resolvent * info.min_eigenvector()).amax() < 1e-15);
    }

    #[test]
    fn repeated_eigenvalue_is_reported() {
        assert!(matches!(sdp_eig(&v(&[1.0, 0.0, 1.0])), Err(PathError::Multiplicity { .. })));
    }

    #[test]
    fn derivatives_are_invariant_to_eigenvector_sign() {
        let x = v(&[2.0, 0.3, -0.1, 1.0, 0.4, 3.0]);
        let (info, g, h) = sdp_eig(&x).unwrap();
        let u = -info.min_eigenvector();
        let coords = coordinates(3);
        for (k, &(i, j)) in coords.iter().enumerate() {
            let expect = if i == j { -u[i] * u[i] } else { -2.0 * u[i] * u[j] };
            assert!((g[k] - expect).abs() < 1e-15);
        }
        assert!(h.clone().symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn toy_starts_at_minus_c() {
        let s = SdpProgram::<f64>::toy();
        let prog = sdp_surrogate(&s).unwrap();
        let p = initialize(&prog).unwrap();
        assert_eq!(duplicate(&p.x), -&s.c);
    }

    #[test]
    fn toy_path_ends_at_known_solution() {
        let prog = sdp_surrogate(&SdpProgram::<f64>::toy()).unwrap();
        let trace = run(&prog, &EngineConfig::default()).unwrap();
        let x = duplicate(&trace.final_point().x);
        let r2 = 2f64.sqrt();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -r2, -r2, 2.0]);
        assert!((x - expect).amax() < 1e-3, "{:?}", trace.termination.kind);
    }
}
