//! Reference solvers used to check the path engine.
//!
//! None of these touch the engine's KKT machinery: they work from the problem
//! data with their own iterations and plain dense factorizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::model::ConvexProgram;
use crate::penalty::surrogate_value;
use crate::problems::ConvexSet;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport<T: Scalar> {
    pub solver: &'static str,
    pub solution: DVector<T>,
    pub objective: T,
    pub iterations: usize,
    /// Set only when the solver's own stopping test passed.
    pub converged: bool,
}

/// Cyclic Dykstra projection of `b` onto the intersection of `sets`.
pub fn dykstra_project<T: Scalar>(b: &DVector<T>, sets: &[ConvexSet<T>]) -> OracleReport<T> {
    let tol = T::lit(1e-10);
    let mut x = b.clone();
    let mut incr = vec![DVector::zeros(b.len()); sets.len()];
    let mut converged = sets.is_empty();
    let mut iterations = 0;
    while !converged && iterations < 10_000 {
        iterations += 1;
        let before = x.clone();
        let mut moved = T::zero();
        for (s, p) in sets.iter().zip(incr.iter_mut()) {
            let y = &x + &*p;
            let next = s.project(&y);
            let np = &y - &next;
            moved = moved.max((&np - &*p).amax());
            *p = np;
            x = next;
        }
        converged = (&x - &before).amax() <= tol && moved <= tol;
    }
    let objective = (&x - b).norm_squared() * T::lit(0.5);
    OracleReport {
        solver: "dykstra",
        solution: x,
        objective,
        iterations,
        converged,
    }
}

/// Least squares on the columns in `cols`, via SVD.
fn subset_lstsq<T: Scalar>(v: &DMatrix<T>, x: &DVector<T>, cols: &[usize]) -> DVector<T> {
    let sub = v.select_columns(cols.iter());
    let svd = sub.svd(true, true);
    let eps = T::lit(1e-13) * svd.singular_values.max();
    svd.solve(x, eps).unwrap_or_else(|_| DVector::zeros(cols.len()))
}

/// Lawson–Hanson active-set solution of `min ‖x − Vw‖` subject to `w ≥ 0`.
pub fn nnls_reference<T: Scalar>(v: &DMatrix<T>, x: &DVector<T>) -> OracleReport<T> {
    let n = v.ncols();
    let mut w: DVector<T> = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = T::one() + v.amax() * (x.amax() + T::one());
    let tol = T::lit(1e-12) * scale * T::from_usize_lossy(n.max(1));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 30 * n + 10 {
        iterations += 1;
        let grad = v.transpose() * (x - v * &w);
        let pick = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap_or(std::cmp::Ordering::Equal));
        match pick {
            Some(j) if grad[j] > tol => passive[j] = true,
            _ => {
                converged = true;
                break;
            }
        }
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z = subset_lstsq(v, x, &cols);
            if z.iter().all(|zi| *zi > T::zero()) {
                for (k, &j) in cols.iter().enumerate() {
                    w[j] = z[k];
                }
                break;
            }
            let mut alpha = T::one();
            for (k, &j) in cols.iter().enumerate() {
                if z[k] <= T::zero() {
                    let d = w[j] - z[k];
                    if d > T::zero() {
                        alpha = alpha.min(w[j] / d);
                    }
                }
            }
            for (k, &j) in cols.iter().enumerate() {
                let wj = w[j];
                w[j] = wj + alpha * (z[k] - wj);
                if w[j] <= tol * T::lit(1e-3) {
                    w[j] = T::zero();
                    passive[j] = false;
                }
            }
            if cols.iter().all(|&j| passive[j]) {
                // every coordinate kept its sign only up to round-off
                for &j in &cols {
                    w[j] = w[j].max(T::zero());
                }
                break;
            }
        }
    }
    let objective = (x - v * &w).norm_squared() * T::lit(0.5);
    OracleReport {
        solver: "lawson-hanson",
        solution: w,
        objective,
        iterations,
        converged,
    }
}

/// Smoothed surrogate `f + ρΣ√(g²+μ²) + ρΣ½(h+√(h²+μ²))` with derivatives.
fn smoothed<T: Scalar>(
    program: &ConvexProgram<T>,
    x: &DVector<T>,
    rho: T,
    mu: T,
) -> (T, DVector<T>, DMatrix<T>) {
    let half = T::lit(0.5);
    let mut val = program.surrogate_objective(x, rho);
    let mut g = program.surrogate_gradient(x, rho);
    let mut h = program.surrogate_hessian(x, rho);
    let mu2 = mu * mu;
    for eq in program.equalities() {
        let v = eq.value(x);
        let s = (v * v + mu2).sqrt();
        val += rho * s;
        g.axpy(rho * v / s, &eq.a, T::one());
        h.ger(rho * mu2 / (s * s * s), &eq.a, &eq.a, T::one());
    }
    for ineq in program.inequalities() {
        let v = ineq.func.value(x);
        let s = (v * v + mu2).sqrt();
        let d1 = half * (T::one() + v / s);
        let d2 = half * mu2 / (s * s * s);
        let grad = ineq.func.gradient(x);
        val += rho * half * (v + s);
        g.axpy(rho * d1, &grad, T::one());
        h.ger(rho * d2, &grad, &grad, T::one());
        h += ineq.func.hessian(x) * (rho * d1);
    }
    (val, g, h)
}

/// Minimizes `E_ρ` at a single `ρ` by Newton's method on a smoothed surrogate,
/// driving the smoothing width from 1 down to 10⁻¹².
pub fn fixed_rho_minimize<T: Scalar>(program: &ConvexProgram<T>, rho: T, x0: Option<&DVector<T>>) -> OracleReport<T> {
    let n = program.dim();
    let mut x = x0
        .or(program.start())
        .cloned()
        .unwrap_or_else(|| DVector::zeros(n));
    let mut iterations = 0;
    let mut mu = T::one();
    let mut converged = false;
    while mu >= T::lit(1e-12) {
        converged = false;
        for _ in 0..200 {
            iterations += 1;
            let (f0, g, h) = smoothed(program, &x, rho, mu);
            if !f0.is_finite_value() {
                break;
            }
            let gn = g.amax();
            if gn <= T::lit(1e-11) * (T::one() + x.amax()) {
                converged = true;
                break;
            }
            let mut shift = T::zero();
            let d = loop {
                let mut hs = h.clone();
                for i in 0..n {
                    hs[(i, i)] += shift;
                }
                if let Some(c) = hs.cholesky() {
                    break -c.solve(&g);
                }
                shift = if shift == T::zero() { T::lit(1e-10) * (T::one() + h.amax()) } else { shift * T::lit(10.0) };
            };
            let slope = g.dot(&d);
            let mut t = T::one();
            let mut accepted = false;
            let mut stalled = false;
            for _ in 0..60 {
                let trial = &x + &d * t;
                let (ft, _, _) = smoothed(program, &trial, rho, mu);
                if ft.is_finite_value() && ft <= f0 + T::lit(1e-4) * t * slope {
                    stalled = (&trial - &x).amax() <= T::lit(1e-15) * (T::one() + x.amax());
                    x = trial;
                    accepted = true;
                    break;
                }
                t *= T::lit(0.5);
            }
            if !accepted || stalled {
                // no further decrease is representable at this width
                converged = true;
                break;
            }
        }
        mu *= T::lit(0.1);
    }
    let objective = surrogate_value(program, &x, rho).unwrap_or(T::lit(f64::NAN));
    OracleReport {
        solver: "smoothed-newton",
        solution: x,
        objective,
        iterations,
        converged,
    }
}

/// Cyclic proximal coordinate descent for `½xᵗHx + gᵗx + ρ Σ_{penalized}|x_j|`.
pub fn lasso_reference<T: Scalar>(
    h: &DMatrix<T>,
    g: &DVector<T>,
    penalized: &[bool],
    rho: T,
) -> OracleReport<T> {
    let n = g.len();
    let mut x: DVector<T> = DVector::zeros(n);
    let mut grad = g.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 50_000 {
        iterations += 1;
        let mut change = T::zero();
        for j in 0..n {
            let hjj = h[(j, j)];
            if hjj <= T::zero() {
                continue;
            }
            let r = grad[j] - hjj * x[j];
            let t = if penalized[j] { rho } else { T::zero() };
            let shrunk = (r.abs() - t).max(T::zero());
            let new = -r.signum() * shrunk / hjj;
            let delta = new - x[j];
            if delta != T::zero() {
                grad.axpy(delta, &h.column(j), T::one());
                x[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change <= T::lit(1e-14) * (T::one() + x.amax()) {
            converged = true;
            break;
        }
    }
    let pen = (0..n).filter(|&j| penalized[j]).fold(T::zero(), |s, j| s + x[j].abs());
    let objective = (h * &x).dot(&x) * T::lit(0.5) + g.dot(&x) + rho * pen;
    OracleReport {
        solver: "coordinate-descent",
        solution: x,
        objective,
        iterations,
        converged,
    }
}

/// Exhaustive minimizer of `E_ρ` for a QP at each `ρ` in `grid`.
///
/// Every sign pattern of the constraints fixes a smooth quadratic with some
/// constraints held at zero; its stationary point is one candidate and the
/// candidate with the smallest exact `E_ρ` wins.
pub fn brute_force_qp<T: Scalar>(program: &ConvexProgram<T>, grid: &[T]) -> Result<Vec<DVector<T>>> {
    if !program.is_qp() {
        return Err(PathError::InvalidProblem("brute force needs a QP".into()));
    }
    let n = program.dim();
    let r = program.num_equalities();
    let s = program.num_inequalities();
    let m = r + s;
    if m > 10 || n > 12 {
        return Err(PathError::InvalidProblem(format!(
            "brute force capped at 10 constraints and 12 variables, got {m} and {n}"
        )));
    }
    let z = DVector::zeros(n);
    let a = program.objective().hessian(&z);
    let b = program.objective().gradient(&z);
    let rows: Vec<(DVector<T>, T)> = program
        .equalities()
        .iter()
        .map(|e| (e.a.clone(), e.d))
        .chain(program.inequalities().iter().map(|h| {
            let w = h.func.gradient(&z);
            (w, -h.func.value(&z))
        }))
        .collect();
    let patterns = 3usize.pow(m as u32);
    let mut out = Vec::with_capacity(grid.len());
    for &rho in grid {
        let mut best: Option<(T, DVector<T>)> = None;
        for code in 0..patterns {
            // digit 0: held at zero, 1: positive side, 2: negative side
            let mut c = code;
            let mut lin = b.clone();
            let mut zero = Vec::new();
            for (k, (w, _)) in rows.iter().enumerate() {
                let digit = c % 3;
                c /= 3;
                match digit {
                    0 => zero.push(k),
                    1 => lin.axpy(rho, w, T::one()),
                    _ if k < r => lin.axpy(-rho, w, T::one()),
                    _ => {}
                }
            }
            let k = zero.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&a);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&lin));
            for (q, &idx) in zero.iter().enumerate() {
                let (w, d) = &rows[idx];
                for i in 0..n {
                    kkt[(n + q, i)] = w[i];
                    kkt[(i, n + q)] = w[i];
                }
                rhs[n + q] = *d;
            }
            let svd = kkt.svd(true, true);
            let eps = T::lit(1e-12) * svd.singular_values.max();
            let Ok(sol) = svd.solve(&rhs, eps) else {
                continue;
            };
            let x = sol.rows(0, n).into_owned();
            let Ok(val) = surrogate_value(program, &x, rho) else {
                continue;
            };
            if best.as_ref().is_none_or(|(bv, _)| val < *bv) {
                best = Some((val, x));
            }
        }
        out.push(best.map(|b| b.1).unwrap_or_else(|| DVector::zeros(n)));
    }
    Ok(out)
}
