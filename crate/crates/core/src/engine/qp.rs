//! Closed-form path for quadratic objectives with affine constraints.
//!
//! With `d²f = A` constant and every constraint affine, the path derivative is
//! constant on each segment, so the path is piecewise linear and every event
//! time is the smallest positive root of a linear function. The bordered
//! solves go through a sweep tableau over `[[A, Rᵗ], [R, 0]]` (with `R` holding
//! every constraint row): sweeping the `A` block once and then sweeping or
//! unsweeping one constraint row per event keeps `−M_SS⁻¹` current without
//! refactoring.

use nalgebra::{DMatrix, DVector};

use super::path::{apply_event, initialize, polish, stack, watches, zero_tol, Watch};
use super::{Counters, EngineConfig, EventKind, EventRecord, Mode, PathTrace, Segment};
use crate::error::{ConstraintRef, PathError, Result};
use crate::kkt::{assemble, path_derivative};
use crate::linalg::{inf_norm, SweepTableau};
use crate::model::ConvexProgram;
use crate::penalty::{inactive_gradient_sum, PathPoint, SetConfiguration};
use crate::Scalar;

struct QpSolver<T: Scalar> {
    n: usize,
    num_eq: usize,
    /// `A` followed by every constraint gradient.
    bordered: DMatrix<T>,
    tableau: Option<SweepTableau<T>>,
}

impl<T: Scalar> QpSolver<T> {
    fn new(program: &ConvexProgram<T>, x: &DVector<T>) -> Self {
        let n = program.dim();
        let r = program.num_equalities();
        let s = program.num_inequalities();
        let mut m = DMatrix::zeros(n + r + s, n + r + s);
        m.view_mut((0, 0), (n, n))
            .copy_from(&program.surrogate_hessian(x, T::zero()));
        for (i, eq) in program.equalities().iter().enumerate() {
            for k in 0..n {
                m[(n + i, k)] = eq.a[k];
                m[(k, n + i)] = eq.a[k];
            }
        }
        for (j, ineq) in program.inequalities().iter().enumerate() {
            let g = ineq.func.gradient(x);
            for k in 0..n {
                m[(n + r + j, k)] = g[k];
                m[(k, n + r + j)] = g[k];
            }
        }
        let mut solver = Self {
            n,
            num_eq: r,
            bordered: m,
            tableau: None,
        };
        solver.rebuild(&[]);
        solver
    }

    fn index(&self, c: ConstraintRef) -> usize {
        match c {
            ConstraintRef::Equality(i) => self.n + i,
            ConstraintRef::Inequality(j) => self.n + self.num_eq + j,
        }
    }

    fn pivot_tol(&self) -> T {
        T::lit(1e-12) * (T::one() + crate::linalg::mat_inf_norm(&self.bordered))
    }

    fn rebuild(&mut self, active: &[ConstraintRef]) {
        let mut t = SweepTableau::new(self.bordered.clone(), self.pivot_tol());
        let ok = (0..self.n).all(|k| t.sweep(k).is_ok())
            && active.iter().all(|c| t.sweep(self.index(*c)).is_ok());
        self.tableau = if ok { Some(t) } else { None };
        if !ok {
            log::debug!("sweep tableau unavailable; using direct bordered solves");
        }
    }

    /// Keeps the swept set equal to `A` plus the active rows of `config`.
    fn sync(&mut self, config: &SetConfiguration) {
        let Some(t) = self.tableau.as_mut() else {
            return;
        };
        let active = config.active();
        let mut ok = true;
        let total = self.bordered.nrows();
        for idx in self.n..total {
            let want = active.iter().any(|c| match *c {
                ConstraintRef::Equality(i) => self.n + i == idx,
                ConstraintRef::Inequality(j) => self.n + self.num_eq + j == idx,
            });
            if want != t.is_swept(idx) {
                let res = if want { t.sweep(idx) } else { t.unsweep(idx) };
                ok &= res.is_ok();
            }
        }
        if !ok {
            self.rebuild(&active);
        }
    }

    fn solve_with_tableau(&self, config: &SetConfiguration, u: &DVector<T>) -> Option<DVector<T>> {
        let t = self.tableau.as_ref()?;
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.extend(config.active().into_iter().map(|c| self.index(c)));
        let mut rhs = DVector::zeros(idx.len());
        rhs.rows_mut(0, self.n).copy_from(u);
        let z = t.neg_inverse_times(&idx, &rhs);
        // residual of M_SS z = −(u, 0)
        let mut res = -rhs.clone();
        for (a, &ia) in idx.iter().enumerate() {
            let mut acc = T::zero();
            for (b, &ib) in idx.iter().enumerate() {
                acc += self.bordered[(ia, ib)] * z[b];
            }
            res[a] -= acc;
        }
        let scale = T::one() + inf_norm(u) + inf_norm(&z);
        if inf_norm(&res) <= T::lit(1e-9) * scale {
            Some(z)
        } else {
            None
        }
    }

    /// Constant `(dx, dμ)` on the segment starting at `point`.
    fn derivative(&mut self, program: &ConvexProgram<T>, point: &PathPoint<T>) -> Result<DVector<T>> {
        let u = inactive_gradient_sum(program, &point.x, &point.config);
        self.sync(&point.config);
        if let Some(z) = self.solve_with_tableau(&point.config, &u) {
            return Ok(z);
        }
        if self.tableau.is_some() {
            self.rebuild(&point.config.active());
            if let Some(z) = self.solve_with_tableau(&point.config, &u) {
                return Ok(z);
            }
        }
        let (d, _) = path_derivative(&assemble(program, point))?;
        Ok(stack(&d.dx, &d.stacked_multipliers()))
    }
}

/// Path of a quadratic program with affine constraints, computed segment by
/// segment in closed form.
pub fn run_qp<T: Scalar>(program: &ConvexProgram<T>, config: &EngineConfig) -> Result<PathTrace<T>> {
    if !program.is_qp() {
        return Err(PathError::InvalidProblem(
            "closed-form path needs a quadratic objective and affine constraints".into(),
        ));
    }
    if config.mode != Mode::Constrained {
        return Err(PathError::Contract("run_qp follows increasing rho only".into()));
    }
    let n = program.dim();
    let start = initialize(program)?;
    let mut solver = QpSolver::new(program, &start.x);
    let mut counters = Counters::default();
    let cap = T::lit(config.rho_cap);
    let stat_tol = T::lit(config.stationary_tol);
    let window = T::lit(1e-12);
    let settle_limit = 2 * (program.num_equalities() + program.num_inequalities()) + 4;

    let mut initial_events: Vec<EventRecord<T>> = Vec::new();
    let mut segments: Vec<Segment<T>> = Vec::new();
    let mut point = start.clone();
    let mut stuck = 0usize;

    let termination = loop {
        counters.record(point.rho);
        let dy = solver.derivative(program, &point)?;
        let dx = dy.rows(0, n).into_owned();
        let mut terminal = None;
        if point.config.violations_exhausted() && inf_norm(&dx) <= stat_tol {
            terminal = Some(EventKind::Stationary);
        } else if point.rho >= cap {
            terminal = Some(EventKind::RhoCapReached);
        } else if segments.len() >= config.segment_cap {
            terminal = Some(EventKind::SegmentCapReached);
        }
        if let Some(kind) = terminal {
            break EventRecord {
                rho: point.rho,
                kind,
                point,
            };
        }

        let y = stack(&point.x, &point.stacked_multipliers());
        let ws: Vec<Watch> = watches(&point.config);
        let tol0 = zero_tol(point.rho, &point.x);
        let dtol = T::lit(1e-9) * (T::one() + inf_norm(&dy));
        let mut immediate = Vec::new();
        let mut candidates: Vec<(T, EventKind, T, T)> = Vec::new();
        for w in &ws {
            let phi = w.phi(program, point.rho, &y);
            let slope = w.slope(program, &point.x, &dy);
            if phi < -tol0 || (phi <= tol0 && slope < -dtol) {
                immediate.push(w.kind());
            } else if phi > tol0 && slope < T::zero() {
                candidates.push((phi / -slope, w.kind(), phi, slope));
            }
        }

        if !immediate.is_empty() {
            stuck += 1;
            if stuck > settle_limit {
                return Err(PathError::Stall {
                    rho: point.rho.to_f64_lossy(),
                });
            }
            let records = match segments.last_mut() {
                Some(seg) => &mut seg.events,
                None => &mut initial_events,
            };
            point = apply_batch(program, point, immediate, records)?;
            continue;
        }
        stuck = 0;

        let delta_star = candidates
            .iter()
            .map(|c| c.0)
            .fold(cap - point.rho, |m, d| m.min(d));
        let rho_end = point.rho + delta_star;
        let end = PathPoint {
            rho: rho_end,
            x: &point.x + &dx * delta_star,
            ..point.clone()
        };
        let mut end = end;
        end.set_stacked_multipliers(&(point.stacked_multipliers() + dy.rows(n, dy.len() - n) * delta_star));

        let tol_end = zero_tol(rho_end, &end.x);
        let kinds: Vec<EventKind> = candidates
            .iter()
            .filter(|(d, _, phi, slope)| *d <= delta_star + window || *phi + delta_star * *slope <= tol_end)
            .map(|c| c.1)
            .collect();

        let mut seg = Segment {
            rho_start: point.rho,
            rho_end,
            start: point.clone(),
            end: end.clone(),
            steps: Vec::new(),
            events: Vec::new(),
        };
        if kinds.is_empty() {
            segments.push(seg);
            break EventRecord {
                rho: rho_end,
                kind: EventKind::RhoCapReached,
                point: end,
            };
        }
        point = apply_batch(program, end, kinds, &mut seg.events)?;
        segments.push(seg);
    };

    Ok(PathTrace {
        mode: Mode::Constrained,
        start,
        initial_events,
        segments,
        termination,
        derivative_evaluations: counters.evaluations,
        time_points: counters.time_points(),
        rho_max: None,
    })
}

fn apply_batch<T: Scalar>(
    program: &ConvexProgram<T>,
    point: PathPoint<T>,
    mut kinds: Vec<EventKind>,
    records: &mut Vec<EventRecord<T>>,
) -> Result<PathPoint<T>> {
    kinds.sort_by_key(|k| k.batch_key());
    kinds.dedup();
    let mut p = point;
    for k in &kinds {
        p = apply_event(&p, *k)?;
    }
    let p = polish(program, p);
    records.extend(kinds.iter().map(|k| EventRecord {
        rho: p.rho,
        kind: *k,
        point: p.clone(),
    }));
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::model::{Affine, Quadratic};
    use crate::penalty::stationarity_residual;
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn one_dim() -> ConvexProgram<f64> {
        let f = Quadratic::new(DMatrix::identity(1, 1), v(&[-2.0]), 2.0);
        ConvexProgram::new(1, Arc::new(f)).with_inequality("x<=0", Arc::new(Affine { w: v(&[1.0]), e: 0.0 }))
    }

    #[test]
    fn one_dim_single_linear_segment() {
        let trace = run_qp(&one_dim(), &EngineConfig::default()).unwrap();
        assert_eq!(trace.num_segments(), 1);
        let seg = &trace.segments[0];
        assert_eq!(seg.rho_start, 0.0);
        assert!((seg.rho_end - 2.0).abs() < 1e-14);
        assert!(seg.end.x[0].abs() < 1e-14);
        assert!(trace.is_stationary());
        let mid = trace.point_at(1.0);
        assert!((mid.x[0] - 1.0).abs() < 1e-14);
        assert!((trace.point_at(5.0).x[0]).abs() < 1e-14);
    }

    #[test]
    fn feasible_qp_has_empty_path() {
        let f = Quadratic::new(DMatrix::identity(2, 2), v(&[1.0, 1.0]), 0.0);
        let prog = ConvexProgram::new(2, Arc::new(f))
            .with_inequality("x1<=0", Arc::new(Affine { w: v(&[1.0, 0.0]), e: 0.0 }));
        let trace = run_qp(&prog, &EngineConfig::default()).unwrap();
        assert_eq!(trace.num_segments(), 0);
        assert!(trace.is_stationary());
    }

    fn box_qp() -> ConvexProgram<f64> {
        // ½‖x − (3, −2, 0.5)‖²_A over x ≤ 1, x₂ ≥ −1, x₁ + x₂ + x₃ = 1
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
        let c = v(&[3.0, -2.0, 0.5]);
        let b = -(&a * &c);
        let f = Quadratic::new(a, b, 0.0);
        let mut p = ConvexProgram::new(3, Arc::new(f)).with_equality(v(&[1.0, 1.0, 1.0]), 1.0);
        for k in 0..3 {
            let mut w = v(&[0.0, 0.0, 0.0]);
            w[k] = 1.0;
            p = p.with_inequality(format!("x{}<=1", k + 1), Arc::new(Affine { w, e: 1.0 }));
        }
        p.with_inequality("x2>=-1", Arc::new(Affine { w: v(&[0.0, -1.0, 0.0]), e: 1.0 }))
    }

    #[test]
    fn closed_form_matches_integrated_path() {
        let prog = box_qp();
        let cfg = EngineConfig::default();
        let exact = run_qp(&prog, &cfg).unwrap();
        let ode = run(&prog, &cfg).unwrap();
        assert!(exact.is_stationary() && ode.is_stationary());
        let ev_a: Vec<_> = exact.transitions().map(|e| (e.kind, e.rho)).collect();
        let ev_b: Vec<_> = ode.transitions().map(|e| (e.kind, e.rho)).collect();
        assert_eq!(ev_a.len(), ev_b.len(), "{ev_a:?} vs {ev_b:?}");
        for (a, b) in ev_a.iter().zip(ev_b.iter()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-8, "{a:?} vs {b:?}");
        }
        assert!((&exact.final_point().x - &ode.final_point().x).amax() < 1e-8);
        let x = &exact.final_point().x;
        assert!((x - v(&[1.0, -11.0 / 14.0, 11.0 / 14.0])).amax() < 1e-12, "{x}");
        for seg in &exact.segments {
            let mid = exact.point_at(0.5 * (seg.rho_start + seg.rho_end));
            assert!(stationarity_residual(&prog, &mid).unwrap() < 1e-10);
        }
    }

    #[test]
    fn sweep_route_matches_direct_solve() {
        let prog = box_qp();
        let start = initialize(&prog).unwrap();
        let mut solver = QpSolver::new(&prog, &start.x);
        let mut p = start.clone();
        p.rho = 0.7;
        for side in [crate::penalty::Side::Zero, crate::penalty::Side::Pos] {
            p.config.ineq[0] = side;
            p.config.eq[0] = crate::penalty::Side::Zero;
            let k = p.config.num_active();
            p.set_stacked_multipliers(&DVector::from_element(k, 0.1));
            let z = solver.derivative(&prog, &p).unwrap();
            let (d, _) = path_derivative(&assemble(&prog, &p)).unwrap();
            let direct = stack(&d.dx, &d.stacked_multipliers());
            assert!((z - direct).amax() < 1e-10);
        }
        assert!(solver.tableau.is_some());
    }
}
