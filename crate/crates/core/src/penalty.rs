//! The exact-penalty surrogate `E_ρ(x) = f(x) + ρ Σ|g_i(x)| + ρ Σ max{0, h_j(x)}`,
//! the six-way constraint classification, and multiplier recovery.

use nalgebra::{DMatrix, DVector};

use crate::error::{ConstraintRef, PathError, Result};
use crate::linalg::{check_len, has_full_row_rank, inf_norm};
use crate::model::ConvexProgram;
use crate::Scalar;

/// Relative rank threshold shared by every full-row-rank test.
pub const RANK_TOL: f64 = 1e-10;
/// Relative activity tolerance used to seed the initial configuration.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Sign class of a constraint value: `N`, `Z` or `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Neg,
    Zero,
    Pos,
}

/// Assignment of every constraint to one of `N_E, Z_E, P_E` (equalities) or
/// `N_I, Z_I, P_I` (inequalities). Storing one side per constraint makes the
/// partition property hold by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetConfiguration {
    pub eq: Vec<Side>,
    pub ineq: Vec<Side>,
}

fn indices(sides: &[Side], want: Side) -> Vec<usize> {
    sides
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == want)
        .map(|(i, _)| i)
        .collect()
}

impl SetConfiguration {
    pub fn all(eq: Side, r: usize, ineq: Side, s: usize) -> Self {
        Self {
            eq: vec![eq; r],
            ineq: vec![ineq; s],
        }
    }

    pub fn neg_eq(&self) -> Vec<usize> {
        indices(&self.eq, Side::Neg)
    }
    pub fn zero_eq(&self) -> Vec<usize> {
        indices(&self.eq, Side::Zero)
    }
    pub fn pos_eq(&self) -> Vec<usize> {
        indices(&self.eq, Side::Pos)
    }
    pub fn neg_in(&self) -> Vec<usize> {
        indices(&self.ineq, Side::Neg)
    }
    pub fn zero_in(&self) -> Vec<usize> {
        indices(&self.ineq, Side::Zero)
    }
    pub fn pos_in(&self) -> Vec<usize> {
        indices(&self.ineq, Side::Pos)
    }

    /// Active constraints in the row order of `U_Z`: `Z_E` ascending, then `Z_I`.
    pub fn active(&self) -> Vec<ConstraintRef> {
        self.zero_eq()
            .into_iter()
            .map(ConstraintRef::Equality)
            .chain(self.zero_in().into_iter().map(ConstraintRef::Inequality))
            .collect()
    }

    pub fn num_active(&self) -> usize {
        self.eq.iter().chain(&self.ineq).filter(|s| **s == Side::Zero).count()
    }

    /// `N_E`, `P_E` and `P_I` all empty.
    pub fn violations_exhausted(&self) -> bool {
        self.eq.iter().all(|s| *s == Side::Zero) && self.ineq.iter().all(|s| *s != Side::Pos)
    }

    pub fn side(&self, c: ConstraintRef) -> Side {
        match c {
            ConstraintRef::Equality(i) => self.eq[i],
            ConstraintRef::Inequality(j) => self.ineq[j],
        }
    }

    pub fn set_side(&mut self, c: ConstraintRef, side: Side) {
        match c {
            ConstraintRef::Equality(i) => self.eq[i] = side,
            ConstraintRef::Inequality(j) => self.ineq[j] = side,
        }
    }
}

/// One point `(ρ, x, λ, ω)` of the solution path.
///
/// `lambda` is indexed by `Z_E` ascending and `omega` by `Z_I` ascending. The
/// implied subgradient coefficients are `s_i = λ_i/ρ`, `t_j = ω_j/ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint<T: Scalar> {
    pub rho: T,
    pub x: DVector<T>,
    pub lambda: DVector<T>,
    pub omega: DVector<T>,
    pub config: SetConfiguration,
}

impl<T: Scalar> PathPoint<T> {
    /// Active multipliers stacked as `(λ, ω)` in `U_Z` row order.
    pub fn stacked_multipliers(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.lambda.len() + self.omega.len());
        v.rows_mut(0, self.lambda.len()).copy_from(&self.lambda);
        v.rows_mut(self.lambda.len(), self.omega.len()).copy_from(&self.omega);
        v
    }

    pub fn set_stacked_multipliers(&mut self, mu: &DVector<T>) {
        let ne = self.config.zero_eq().len();
        self.lambda = mu.rows(0, ne).into_owned();
        self.omega = mu.rows(ne, mu.len() - ne).into_owned();
    }

    /// Multiplier of an active constraint.
    pub fn multiplier(&self, c: ConstraintRef) -> Option<T> {
        match c {
            ConstraintRef::Equality(i) => {
                let pos = self.config.zero_eq().iter().position(|&k| k == i)?;
                Some(self.lambda[pos])
            }
            ConstraintRef::Inequality(j) => {
                let pos = self.config.zero_in().iter().position(|&k| k == j)?;
                Some(self.omega[pos])
            }
        }
    }

    /// Effective multiplier `ρ·s_i` / `ρ·t_j` of every constraint, active or not.
    pub fn full_multipliers(&self) -> (DVector<T>, DVector<T>) {
        let rho = self.rho;
        let mut lam = DVector::from_iterator(
            self.config.eq.len(),
            self.config.eq.iter().map(|s| match s {
                Side::Neg => -rho,
                Side::Pos => rho,
                Side::Zero => T::zero(),
            }),
        );
        let mut om = DVector::from_iterator(
            self.config.ineq.len(),
            self.config.ineq.iter().map(|s| match s {
                Side::Pos => rho,
                _ => T::zero(),
            }),
        );
        for (k, i) in self.config.zero_eq().into_iter().enumerate() {
            lam[i] = self.lambda[k];
        }
        for (k, j) in self.config.zero_in().into_iter().enumerate() {
            om[j] = self.omega[k];
        }
        (lam, om)
    }

    /// Largest amount by which an active multiplier leaves its box
    /// `−ρ ≤ λ ≤ ρ`, `0 ≤ ω ≤ ρ`; zero when all boxes hold.
    pub fn box_violation(&self) -> T {
        let rho = self.rho;
        let lam = self
            .lambda
            .iter()
            .fold(T::zero(), |m, l| m.max(l.abs() - rho.abs()));
        let om = self
            .omega
            .iter()
            .fold(T::zero(), |m, w| m.max(-*w).max(*w - rho.abs()));
        lam.max(om)
    }
}

/// `E_ρ(x)`; includes the program's amendment term when it has one.
pub fn surrogate_value<T: Scalar>(program: &ConvexProgram<T>, x: &DVector<T>, rho: T) -> Result<T> {
    if rho < T::zero() {
        return Err(PathError::Contract("penalty constant must be nonnegative".into()));
    }
    let e = program.evaluate(x)?;
    let extra = program.surrogate_objective(x, rho) - program.objective().value(x);
    let pen_eq = e.g.iter().fold(T::zero(), |acc, v| acc + v.abs());
    let pen_in = e.h.iter().fold(T::zero(), |acc, v| acc + v.max(T::zero()));
    Ok(e.f + extra + rho * (pen_eq + pen_in))
}

fn side_of<T: Scalar>(v: T, tol: T) -> Side {
    if v.abs() <= tol {
        Side::Zero
    } else if v < T::zero() {
        Side::Neg
    } else {
        Side::Pos
    }
}

/// Assigns each constraint by sign, with `|value| ≤ tol_act` meaning active.
pub fn classify<T: Scalar>(program: &ConvexProgram<T>, x: &DVector<T>, tol_act: T) -> Result<SetConfiguration> {
    let e = program.evaluate(x)?;
    Ok(SetConfiguration {
        eq: e.g.iter().map(|v| side_of(*v, tol_act)).collect(),
        ineq: e.h.iter().map(|v| side_of(*v, tol_act)).collect(),
    })
}

/// `u_Z̄(x) = −Σ_{N_E} ∇g_i + Σ_{P_E} ∇g_i + Σ_{P_I} ∇h_j`.
pub fn inactive_gradient_sum<T: Scalar>(
    program: &ConvexProgram<T>,
    x: &DVector<T>,
    config: &SetConfiguration,
) -> DVector<T> {
    let mut u = DVector::zeros(program.dim());
    for (eq, side) in program.equalities().iter().zip(&config.eq) {
        match side {
            Side::Neg => u -= &eq.a,
            Side::Pos => u += &eq.a,
            Side::Zero => {}
        }
    }
    for (h, side) in program.inequalities().iter().zip(&config.ineq) {
        if *side == Side::Pos {
            u += h.func.gradient(x);
        }
    }
    u
}

/// `U_Z(x)`: rows `dg_i` for `i ∈ Z_E` then `dh_j` for `j ∈ Z_I`.
pub fn active_jacobian<T: Scalar>(
    program: &ConvexProgram<T>,
    x: &DVector<T>,
    config: &SetConfiguration,
) -> DMatrix<T> {
    let active = config.active();
    let mut u = DMatrix::zeros(active.len(), program.dim());
    for (row, c) in active.iter().enumerate() {
        let grad = match *c {
            ConstraintRef::Equality(i) => program.equalities()[i].a.clone(),
            ConstraintRef::Inequality(j) => program.inequalities()[j].func.gradient(x),
        };
        u.row_mut(row).copy_from(&grad.transpose());
    }
    u
}

/// Residual vector `∇f + ρ u_Z̄ + U_Zᵗ (λ, ω)` at `point`, without box checks.
pub fn stationarity_vector<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> DVector<T> {
    let grad = program.surrogate_gradient(&point.x, point.rho);
    let u = inactive_gradient_sum(program, &point.x, &point.config);
    let uz = active_jacobian(program, &point.x, &point.config);
    grad + u * point.rho + uz.tr_mul(&point.stacked_multipliers())
}

/// `‖∇f + ρ u_Z̄ + U_Zᵗ (λ, ω)‖∞`.
///
/// Fails with a contract violation when an active multiplier lies outside its
/// box by more than `10⁻⁸·max(1, ρ)`.
pub fn stationarity_residual<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> Result<T> {
    check_len("stationarity point", &point.x, program.dim())?;
    let slack = T::lit(1e-8) * T::one().max(point.rho.abs());
    let viol = point.box_violation();
    if viol > slack {
        return Err(PathError::Contract(format!(
            "active multiplier outside its subdifferential box by {viol:e}"
        )));
    }
    Ok(inf_norm(&stationarity_vector(program, point)))
}

/// Solves the stationarity condition for the active multipliers,
/// `(λ, ω) = −[U_Z U_Zᵗ]⁻¹ U_Z (∇f + ρ u_Z̄)`.
pub fn multiplier_recovery<T: Scalar>(
    program: &ConvexProgram<T>,
    x: &DVector<T>,
    rho: T,
    config: &SetConfiguration,
) -> Result<(DVector<T>, DVector<T>)> {
    let ne = config.zero_eq().len();
    let active = config.active();
    if active.is_empty() {
        return Ok((DVector::zeros(0), DVector::zeros(0)));
    }
    let uz = active_jacobian(program, x, config);
    if !has_full_row_rank(&uz, T::lit(RANK_TOL)) {
        return Err(PathError::RankDeficient { rows: active });
    }
    let v = program.surrogate_gradient(x, rho) + inactive_gradient_sum(program, x, config) * rho;
    let qr = uz.transpose().qr();
    let rhs = -qr.q().tr_mul(&v);
    let mu = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or(PathError::RankDeficient { rows: active })?;
    Ok((mu.rows(0, ne).into_owned(), mu.rows(ne, mu.len() - ne).into_owned()))
}
