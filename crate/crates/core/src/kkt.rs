//! Linear algebra of the path derivative.
//!
//! On a segment with fixed set configuration, the stationarity and
//! active-constraint equations `k(x, λ, ω, ρ) = 0` define `(x, λ, ω)` as a
//! function of `ρ`, with
//!
//! ```text
//! [ H_pen  U_Zᵗ ] [ dx/dρ ]     [ u_Z̄ + ∂ρ∇f ]
//! [ U_Z    0    ] [ dμ/dρ ] = − [ 0          ]
//! ```
//!
//! Two routes solve it: the range-space route factors the bordered matrix,
//! the null-space route eliminates the active rows through an orthonormal
//! basis `Y` of `null(U_Z)` and needs only `Yᵗ H_pen Y` to be nonsingular.

use nalgebra::{DMatrix, DVector};

use crate::error::{ConstraintRef, PathError, Result};
use crate::linalg::{has_full_row_rank, NullBasis, SymmetricIndefinite};
use crate::model::ConvexProgram;
use crate::penalty::{active_jacobian, inactive_gradient_sum, PathPoint, RANK_TOL};
use crate::Scalar;

/// Everything the derivative solve needs at one path point.
#[derive(Debug, Clone)]
pub struct ActiveSystem<T: Scalar> {
    /// `U_Z`, rows `Z_E` ascending then `Z_I` ascending.
    pub u_z: DMatrix<T>,
    pub u_zbar: DVector<T>,
    /// `∂ρ ∇f`, nonzero only for amended (ρ-dependent) objectives.
    pub drift: DVector<T>,
    /// `d²f + ρ Σ_{P_I} d²h_j + Σ_{Z_I} ω_j d²h_j`.
    pub h_pen: DMatrix<T>,
    pub active: Vec<ConstraintRef>,
    pub num_active_eq: usize,
}

impl<T: Scalar> ActiveSystem<T> {
    pub fn dim(&self) -> usize {
        self.h_pen.nrows()
    }

    pub fn num_active(&self) -> usize {
        self.u_z.nrows()
    }

    /// Right-hand side forcing `u_Z̄ + ∂ρ∇f`.
    pub fn forcing(&self) -> DVector<T> {
        &self.u_zbar + &self.drift
    }

    /// `[[H_pen, U_Zᵗ], [U_Z, 0]]`.
    pub fn bordered_matrix(&self) -> DMatrix<T> {
        let n = self.dim();
        let k = self.num_active();
        let mut m = DMatrix::zeros(n + k, n + k);
        m.view_mut((0, 0), (n, n)).copy_from(&self.h_pen);
        m.view_mut((n, 0), (k, n)).copy_from(&self.u_z);
        m.view_mut((0, n), (n, k)).copy_from(&self.u_z.transpose());
        m
    }
}

/// Which solve produced a derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    RangeSpace,
    NullSpace,
}

/// `d(x, λ, ω)/dρ` on the current segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDerivative<T: Scalar> {
    pub dx: DVector<T>,
    pub dlambda: DVector<T>,
    pub domega: DVector<T>,
    /// Orders of the linear systems factored to produce this derivative.
    pub factored: Vec<usize>,
}

impl<T: Scalar> PathDerivative<T> {
    pub fn stacked_multipliers(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.dlambda.len() + self.domega.len());
        v.rows_mut(0, self.dlambda.len()).copy_from(&self.dlambda);
        v.rows_mut(self.dlambda.len(), self.domega.len()).copy_from(&self.domega);
        v
    }

    fn split(dx: DVector<T>, dmu: &DVector<T>, ne: usize, factored: Vec<usize>) -> Self {
        Self {
            dx,
            dlambda: dmu.rows(0, ne).into_owned(),
            domega: dmu.rows(ne, dmu.len() - ne).into_owned(),
            factored,
        }
    }
}

/// Builds `U_Z`, `u_Z̄` and `H_pen` at `point`.
pub fn assemble<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> ActiveSystem<T> {
    let x = &point.x;
    let config = &point.config;
    let mut h_pen = program.surrogate_hessian(x, point.rho);
    for j in config.pos_in() {
        h_pen += program.inequalities()[j].func.hessian(x) * point.rho;
    }
    for (k, j) in config.zero_in().into_iter().enumerate() {
        h_pen += program.inequalities()[j].func.hessian(x) * point.omega[k];
    }
    ActiveSystem {
        u_z: active_jacobian(program, x, config),
        u_zbar: inactive_gradient_sum(program, x, config),
        drift: program.gradient_rho_derivative(x, point.rho),
        h_pen,
        active: config.active(),
        num_active_eq: config.zero_eq().len(),
    }
}

/// Solves the bordered system with a symmetric indefinite factorization.
pub fn range_space_derivative<T: Scalar>(sys: &ActiveSystem<T>) -> Result<PathDerivative<T>> {
    let n = sys.dim();
    let k = sys.num_active();
    let m = sys.bordered_matrix();
    let fact = SymmetricIndefinite::new(&m)?;
    // nonsingular with H_pen PD on null(U_Z) ⇔ inertia (n, k)
    if fact.inertia() != (n, k) {
        return Err(PathError::SingularKkt);
    }
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-sys.forcing()));
    let sol = fact.solve(&rhs);
    let dx = sol.rows(0, n).into_owned();
    let dmu = sol.rows(n, k).into_owned();
    Ok(PathDerivative::split(dx, &dmu, sys.num_active_eq, vec![n + k]))
}

/// `(U Uᵗ)⁻¹ U v` through a QR factorization of `Uᵗ`.
fn row_space_coefficients<T: Scalar>(u: &DMatrix<T>, v: &DVector<T>) -> Result<DVector<T>> {
    if u.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let qr = u.transpose().qr();
    qr.r()
        .solve_upper_triangular(&qr.q().tr_mul(v))
        .ok_or(PathError::RankDeficient { rows: Vec::new() })
}

/// Null-space route: `dx = −Y (Yᵗ H Y)⁻¹ Yᵗ u`, `dμ = −(U Uᵗ)⁻¹ U (H dx + u)`.
pub fn null_space_derivative<T: Scalar>(
    sys: &ActiveSystem<T>,
    basis: &NullBasis<T>,
) -> Result<PathDerivative<T>> {
    let y = basis.basis();
    let forcing = sys.forcing();
    let reduced = y.tr_mul(&sys.h_pen) * &y;
    let dx = if y.ncols() == 0 {
        DVector::zeros(sys.dim())
    } else {
        let rhs = y.tr_mul(&forcing);
        let dy = reduced
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| reduced.clone().lu().solve(&rhs))
            .ok_or(PathError::SingularReducedHessian)?;
        // LU of a singular matrix may still "succeed" with huge entries
        if !dy.iter().all(|v| v.is_finite_value()) {
            return Err(PathError::SingularReducedHessian);
        }
        -(&y * dy)
    };
    let dmu = -row_space_coefficients(&sys.u_z, &(&sys.h_pen * &dx + &forcing))?;
    Ok(PathDerivative::split(
        dx,
        &dmu,
        sys.num_active_eq,
        vec![y.ncols(), sys.num_active()],
    ))
}

/// Orthonormal null-space basis of `U_Z`, rejecting rank-deficient rows.
pub fn null_basis<T: Scalar>(u_z: &DMatrix<T>) -> Result<NullBasis<T>> {
    if !has_full_row_rank(u_z, T::lit(RANK_TOL)) {
        return Err(PathError::RankDeficient { rows: Vec::new() });
    }
    NullBasis::new(u_z, T::lit(RANK_TOL))
}

/// Range-space solve with a null-space fallback when the bordered matrix is singular.
pub fn path_derivative<T: Scalar>(sys: &ActiveSystem<T>) -> Result<(PathDerivative<T>, Route)> {
    match range_space_derivative(sys) {
        Ok(d) => Ok((d, Route::RangeSpace)),
        Err(PathError::SingularKkt) => {
            log::debug!("bordered KKT matrix singular; trying null-space route");
            let basis = null_basis(&sys.u_z).map_err(|e| match e {
                PathError::RankDeficient { .. } => PathError::RankDeficient {
                    rows: sys.active.clone(),
                },
                other => other,
            })?;
            null_space_derivative(sys, &basis)
                .map(|d| (d, Route::NullSpace))
                .map_err(|_| PathError::SingularKkt)
        }
        Err(e) => Err(e),
    }
}
