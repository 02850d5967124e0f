use nalgebra::{DMatrix, DVector};

use super::{Counters, EngineConfig, EventKind, EventRecord, Mode, PathTrace, Segment};
use crate::error::{ConstraintRef, PathError, Result};
use crate::kkt::{assemble, path_derivative, PathDerivative};
use crate::linalg::{check_len, inf_norm, SymmetricIndefinite};
use crate::model::ConvexProgram;
use crate::ode::{dopri_step, illinois_root, initial_step, step_factor, DenseStep};
use crate::penalty::{classify, stationarity_vector, PathPoint, SetConfiguration, Side, ACTIVE_TOL};
use crate::Scalar;

const INIT_MAX_ITER: usize = 200;
const INIT_GRAD_TOL: f64 = 1e-10;
/// Events whose localized roots lie this close in `ρ` are applied together.
const BATCH_WINDOW: f64 = 1e-12;

/// Unconstrained minimum of the surrogate at `ρ = 0` by damped Newton.
///
/// A start supplied by the program is used as the initial iterate. Programs
/// whose objective is not flagged strictly convex and coercive are refused
/// unless they carry an amendment or a start.
pub fn initialize<T: Scalar>(program: &ConvexProgram<T>) -> Result<PathPoint<T>> {
    let n = program.dim();
    let well_posed = program.objective_strictly_convex && program.objective_coercive;
    if !well_posed && program.amendment().is_none() && program.start().is_none() {
        return Err(PathError::NotCoercive);
    }
    let mut x = program.start().cloned().unwrap_or_else(|| DVector::zeros(n));
    check_len("start point", &x, n)?;
    let rho = T::zero();
    let tol = T::lit(INIT_GRAD_TOL);
    let mut gnorm = T::zero();
    let mut converged = false;
    for _ in 0..INIT_MAX_ITER {
        let g = program.surrogate_gradient(&x, rho);
        gnorm = inf_norm(&g);
        if !gnorm.is_finite_value() {
            return Err(PathError::Domain {
                function: "f".into(),
            });
        }
        if gnorm <= tol {
            converged = true;
            break;
        }
        let d = newton_direction(&program.surrogate_hessian(&x, rho), &g);
        let f0 = program.surrogate_objective(&x, rho);
        let slope = g.dot(&d);
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..60 {
            let trial = &x + &d * t;
            let ft = program.surrogate_objective(&trial, rho);
            if ft.is_finite_value() && ft <= f0 + T::lit(1e-4) * t * slope {
                x = trial;
                moved = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if !moved {
            // f is flat to round-off here; take the full step if it shrinks ∇f
            let trial = &x + &d;
            let gt = inf_norm(&program.surrogate_gradient(&trial, rho));
            if gt.is_finite_value() && gt < gnorm {
                x = trial;
            } else {
                break;
            }
        }
    }
    if !converged {
        return Err(PathError::InitFailure(format!(
            "Newton iteration stopped with gradient norm {:e}",
            gnorm.to_f64_lossy()
        )));
    }
    let tol_act = T::lit(ACTIVE_TOL) * (T::one() + inf_norm(&x));
    let config = classify(program, &x, tol_act)?;
    Ok(PathPoint {
        rho,
        lambda: DVector::zeros(config.zero_eq().len()),
        omega: DVector::zeros(config.zero_in().len()),
        x,
        config,
    })
}

fn newton_direction<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>) -> DVector<T> {
    if let Some(c) = h.clone().cholesky() {
        return -c.solve(g);
    }
    if let Ok(f) = SymmetricIndefinite::new(h) {
        let d = -f.solve(g);
        if d.dot(g) < T::zero() {
            return d;
        }
    }
    -g.clone()
}

/// Moves the constraint named by `kind` to its new set and re-seeds the
/// multipliers: a constraint entering `Z` starts on the boundary it arrived
/// from (`λ = ±ρ`, `ω ∈ {0, ρ}`); every other multiplier is carried over.
pub fn apply_event<T: Scalar>(point: &PathPoint<T>, kind: EventKind) -> Result<PathPoint<T>> {
    let (c, target) = match (kind.constraint(), kind.target_side()) {
        (Some(c), Some(t)) => (c, t),
        _ => {
            return Err(PathError::Contract(format!(
                "event {kind} does not move a constraint"
            )))
        }
    };
    let current = point.config.side(c);
    let consistent = if kind.is_hit() {
        current != Side::Zero
    } else {
        current == Side::Zero
    };
    if !consistent {
        return Err(PathError::Contract(format!(
            "event {kind} inconsistent with {c} in set {current:?}"
        )));
    }
    let (lam, om) = point.full_multipliers();
    let mut config = point.config.clone();
    config.set_side(c, target);
    let lambda = DVector::from_iterator(
        config.zero_eq().len(),
        config.zero_eq().into_iter().map(|i| lam[i]),
    );
    let omega = DVector::from_iterator(
        config.zero_in().len(),
        config.zero_in().into_iter().map(|j| om[j]),
    );
    Ok(PathPoint {
        rho: point.rho,
        x: point.x.clone(),
        lambda,
        omega,
        config,
    })
}

fn constraint_value<T: Scalar>(program: &ConvexProgram<T>, c: ConstraintRef, x: &DVector<T>) -> T {
    match c {
        ConstraintRef::Equality(i) => program.equalities()[i].value(x),
        ConstraintRef::Inequality(j) => program.inequalities()[j].func.value(x),
    }
}

/// `k(x, λ, ω, ρ)`: stationarity stacked over the active constraint values.
pub fn kkt_residual<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> Result<DVector<T>> {
    let stat = stationarity_vector(program, point);
    let active = point.config.active();
    let n = stat.len();
    let mut r = DVector::zeros(n + active.len());
    r.rows_mut(0, n).copy_from(&stat);
    for (k, c) in active.into_iter().enumerate() {
        r[n + k] = constraint_value(program, c, &point.x);
    }
    if r.iter().all(|v| v.is_finite_value()) {
        Ok(r)
    } else {
        Err(PathError::Domain {
            function: "path residual".into(),
        })
    }
}

/// One Newton step on `k(x, λ, ω, ρ) = 0` at fixed `ρ`. The step is kept only
/// if it does not increase `‖k‖∞`; a singular Jacobian leaves the point as is.
pub fn newton_correct<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> PathPoint<T> {
    let r0 = match kkt_residual(program, point) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("Newton correction skipped: {e}");
            return point.clone();
        }
    };
    let jac = assemble(program, point).bordered_matrix();
    let fact = match SymmetricIndefinite::new(&jac) {
        Ok(f) => f,
        Err(e) => {
            log::debug!("Newton correction skipped at rho = {}: {e}", point.rho);
            return point.clone();
        }
    };
    let delta = fact.solve(&(-&r0));
    let n = point.x.len();
    let mut candidate = point.clone();
    candidate.x += delta.rows(0, n);
    let mu = point.stacked_multipliers() + delta.rows(n, delta.len() - n);
    candidate.set_stacked_multipliers(&mu);
    match kkt_residual(program, &candidate) {
        Ok(r1) if inf_norm(&r1) <= inf_norm(&r0) => candidate,
        _ => point.clone(),
    }
}

pub(super) fn polish<T: Scalar>(program: &ConvexProgram<T>, point: PathPoint<T>) -> PathPoint<T> {
    let mut p = point;
    for _ in 0..4 {
        let next = newton_correct(program, &p);
        let moved = (&next.x - &p.x).amax();
        p = next;
        if moved <= T::lit(1e-14) * (T::one() + p.x.amax()) {
            break;
        }
    }
    p
}

/// A quantity that must stay positive along the current segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum Watch {
    /// Sign-adjusted value of an inactive constraint.
    Value { c: ConstraintRef, positive: bool },
    /// `ρ − λ` and `λ + ρ` for the equality in multiplier slot `slot`.
    LamUpper { slot: usize, i: usize },
    LamLower { slot: usize, i: usize },
    /// `ω` and `ρ − ω`.
    OmZero { slot: usize, j: usize },
    OmUpper { slot: usize, j: usize },
}

impl Watch {
    pub(super) fn kind(&self) -> EventKind {
        match *self {
            Watch::Value {
                c: ConstraintRef::Equality(i),
                ..
            } => EventKind::HitEquality(i),
            Watch::Value {
                c: ConstraintRef::Inequality(j),
                ..
            } => EventKind::HitInequality(j),
            Watch::LamUpper { i, .. } => EventKind::EscapeEqToPos(i),
            Watch::LamLower { i, .. } => EventKind::EscapeEqToNeg(i),
            Watch::OmZero { j, .. } => EventKind::EscapeInToInactive(j),
            Watch::OmUpper { j, .. } => EventKind::EscapeInToViolated(j),
        }
    }

    pub(super) fn phi<T: Scalar>(&self, program: &ConvexProgram<T>, rho: T, y: &DVector<T>) -> T {
        let n = program.dim();
        match *self {
            Watch::Value { c, positive } => {
                let v = constraint_value(program, c, &y.rows(0, n).into_owned());
                if positive {
                    v
                } else {
                    -v
                }
            }
            Watch::LamUpper { slot, .. } => rho - y[n + slot],
            Watch::LamLower { slot, .. } => y[n + slot] + rho,
            Watch::OmZero { slot, .. } => y[n + slot],
            Watch::OmUpper { slot, .. } => rho - y[n + slot],
        }
    }

    /// `dφ/dρ` given the stacked path derivative `dy`.
    pub(super) fn slope<T: Scalar>(&self, program: &ConvexProgram<T>, x: &DVector<T>, dy: &DVector<T>) -> T {
        let n = program.dim();
        match *self {
            Watch::Value { c, positive } => {
                let grad = match c {
                    ConstraintRef::Equality(i) => program.equalities()[i].a.clone(),
                    ConstraintRef::Inequality(j) => program.inequalities()[j].func.gradient(x),
                };
                let s = grad.dot(&dy.rows(0, n));
                if positive {
                    s
                } else {
                    -s
                }
            }
            Watch::LamUpper { slot, .. } => T::one() - dy[n + slot],
            Watch::LamLower { slot, .. } => dy[n + slot] + T::one(),
            Watch::OmZero { slot, .. } => dy[n + slot],
            Watch::OmUpper { slot, .. } => T::one() - dy[n + slot],
        }
    }
}

pub(super) fn watches(config: &SetConfiguration) -> Vec<Watch> {
    let mut out = Vec::new();
    let ne = config.zero_eq().len();
    let mut slot_e = 0;
    for (i, s) in config.eq.iter().enumerate() {
        match s {
            Side::Zero => {
                out.push(Watch::LamUpper { slot: slot_e, i });
                out.push(Watch::LamLower { slot: slot_e, i });
                slot_e += 1;
            }
            side => out.push(Watch::Value {
                c: ConstraintRef::Equality(i),
                positive: *side == Side::Pos,
            }),
        }
    }
    let mut slot_i = ne;
    for (j, s) in config.ineq.iter().enumerate() {
        match s {
            Side::Zero => {
                out.push(Watch::OmZero { slot: slot_i, j });
                out.push(Watch::OmUpper { slot: slot_i, j });
                slot_i += 1;
            }
            side => out.push(Watch::Value {
                c: ConstraintRef::Inequality(j),
                positive: *side == Side::Pos,
            }),
        }
    }
    out
}

pub(super) fn zero_tol<T: Scalar>(rho: T, x: &DVector<T>) -> T {
    T::lit(1e-9) * (T::one() + rho.abs() + inf_norm(x))
}

pub(super) fn stack<T: Scalar>(x: &DVector<T>, mu: &DVector<T>) -> DVector<T> {
    let n = x.len();
    let mut y = DVector::zeros(n + mu.len());
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, mu.len()).copy_from(mu);
    y
}

fn retryable(e: &PathError) -> bool {
    !matches!(
        e,
        PathError::Contract(_) | PathError::DimensionMismatch { .. } | PathError::InvalidProblem(_)
    )
}

/// A segment start with everything the integrator needs.
struct Prepared<T: Scalar> {
    point: PathPoint<T>,
    deriv: PathDerivative<T>,
    dy: DVector<T>,
    watches: Vec<Watch>,
    phi: Vec<T>,
    /// Unarmed watches sit on their boundary; they fire only below `−shift`
    /// until they have moved clear of it.
    shift: Vec<T>,
    /// Transitions that must happen before any integration.
    due: Vec<EventKind>,
}

enum SegmentEnd {
    Events(Vec<EventKind>),
    Terminal(EventKind),
}

struct Tracker<'a, T: Scalar> {
    program: &'a ConvexProgram<T>,
    cfg: &'a EngineConfig,
    counters: Counters,
}

impl<'a, T: Scalar> Tracker<'a, T> {
    fn new(program: &'a ConvexProgram<T>, cfg: &'a EngineConfig) -> Self {
        Self {
            program,
            cfg,
            counters: Counters::default(),
        }
    }

    fn split(&self, rho: T, y: &DVector<T>, config: &SetConfiguration) -> PathPoint<T> {
        let n = self.program.dim();
        let mut p = PathPoint {
            rho,
            x: y.rows(0, n).into_owned(),
            lambda: DVector::zeros(0),
            omega: DVector::zeros(0),
            config: config.clone(),
        };
        p.set_stacked_multipliers(&y.rows(n, y.len() - n).into_owned());
        p
    }

    fn derivative(&mut self, point: &PathPoint<T>) -> Result<PathDerivative<T>> {
        self.counters.record(point.rho);
        self.program.validate_at(&point.x)?;
        let sys = assemble(self.program, point);
        let (d, _) = path_derivative(&sys)?;
        if !d.dx.iter().chain(d.dlambda.iter()).chain(d.domega.iter()).all(|v| v.is_finite_value()) {
            return Err(PathError::SingularKkt);
        }
        Ok(d)
    }

    fn rhs(&mut self, rho: T, y: &DVector<T>, config: &SetConfiguration) -> Result<DVector<T>> {
        let p = self.split(rho, y, config);
        let d = self.derivative(&p)?;
        Ok(stack(&d.dx, &d.stacked_multipliers()))
    }

    fn prepare(&mut self, point: PathPoint<T>) -> Result<Prepared<T>> {
        let deriv = self.derivative(&point)?;
        let dy = stack(&deriv.dx, &deriv.stacked_multipliers());
        let y = stack(&point.x, &point.stacked_multipliers());
        let ws = watches(&point.config);
        let tol0 = zero_tol(point.rho, &point.x);
        let dtol = T::lit(1e-9) * (T::one() + inf_norm(&dy));
        let mut phi = Vec::with_capacity(ws.len());
        let mut shift = Vec::with_capacity(ws.len());
        let mut due = Vec::new();
        for w in &ws {
            let v = w.phi(self.program, point.rho, &y);
            let s = w.slope(self.program, &point.x, &dy);
            if v < -tol0 || (v <= tol0 && s < -dtol) {
                due.push(w.kind());
            }
            phi.push(v);
            shift.push(if v > tol0 { T::zero() } else { tol0 + tol0 });
        }
        Ok(Prepared {
            point,
            deriv,
            dy,
            watches: ws,
            phi,
            shift,
            due,
        })
    }

    fn apply_batch(
        &mut self,
        point: PathPoint<T>,
        mut kinds: Vec<EventKind>,
        records: &mut Vec<EventRecord<T>>,
    ) -> Result<PathPoint<T>> {
        kinds.sort_by_key(|k| k.batch_key());
        kinds.dedup();
        let mut p = point;
        for k in &kinds {
            log::debug!("rho = {}: {k}", p.rho);
            p = apply_event(&p, *k)?;
        }
        let p = polish(self.program, p);
        records.extend(kinds.iter().map(|k| EventRecord {
            rho: p.rho,
            kind: *k,
            point: p.clone(),
        }));
        Ok(p)
    }

    /// Applies transitions due at the point until none remain.
    fn settle(&mut self, point: PathPoint<T>, records: &mut Vec<EventRecord<T>>) -> Result<Prepared<T>> {
        let limit = 2 * (self.program.num_equalities() + self.program.num_inequalities()) + 4;
        let mut prepared = self.prepare(point)?;
        for _ in 0..limit {
            if prepared.due.is_empty() {
                return Ok(prepared);
            }
            let due = std::mem::take(&mut prepared.due);
            let p = self.apply_batch(prepared.point, due, records)?;
            prepared = self.prepare(p)?;
        }
        if prepared.due.is_empty() {
            Ok(prepared)
        } else {
            Err(PathError::Stall {
                rho: prepared.point.rho.to_f64_lossy(),
            })
        }
    }

    fn is_stationary(&self, config: &SetConfiguration, dx: &DVector<T>) -> bool {
        config.violations_exhausted() && inf_norm(dx) <= T::lit(self.cfg.stationary_tol)
    }

    /// Integrates from a prepared start until the first event or a terminal
    /// condition.
    fn advance(&mut self, start: Prepared<T>) -> Result<(Segment<T>, PathPoint<T>, SegmentEnd)> {
        let program = self.program;
        let n = program.dim();
        let config = start.point.config.clone();
        let tol = self.cfg.tolerances;
        let cap = T::lit(self.cfg.rho_cap);
        let ev_tol = T::lit(self.cfg.event_tol);
        let Prepared {
            point: start_point,
            dy,
            watches: ws,
            phi: mut phi_a,
            mut shift,
            ..
        } = start;

        let mut rho = start_point.rho;
        let mut y = stack(&start_point.x, &start_point.stacked_multipliers());
        let mut k1 = dy;
        let mut steps: Vec<PathPoint<T>> = Vec::new();
        let segment = |steps: Vec<PathPoint<T>>, end: &PathPoint<T>| Segment {
            rho_start: start_point.rho,
            rho_end: end.rho,
            start: start_point.clone(),
            end: end.clone(),
            steps,
            events: Vec::new(),
        };

        let mut h = {
            let cfg = &config;
            let mut f = |t: T, v: &DVector<T>| self.rhs(t, v, cfg);
            initial_step(&mut f, rho, &y, &k1, T::one(), (cap - rho).max(T::zero()), &tol)
        };
        let mut rejected = false;
        let mut accepted = 0usize;
        for _ in 0..self.cfg.max_steps {
            let remaining = cap - rho;
            if remaining <= T::zero() {
                let end = self.split(rho, &y, &config);
                return Ok((segment(steps, &end), end, SegmentEnd::Terminal(EventKind::RhoCapReached)));
            }
            let last_step = h >= remaining;
            if last_step {
                h = remaining;
            }
            let h_min = T::lit(64.0) * T::machine_eps() * T::one().max(rho.abs());
            if h < h_min {
                return Err(PathError::Stall {
                    rho: rho.to_f64_lossy(),
                });
            }
            let attempt = {
                let cfg = &config;
                let mut f = |t: T, v: &DVector<T>| self.rhs(t, v, cfg);
                dopri_step(&mut f, rho, &y, &k1, h, &tol)
            };
            let out = match attempt {
                Ok(o) => o,
                Err(e) if retryable(&e) => {
                    h *= T::lit(0.25);
                    rejected = true;
                    if h < h_min {
                        return Err(e);
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !(out.err <= T::one()) {
                h *= step_factor(if out.err.is_finite_value() { out.err } else { T::lit(1e10) }, true);
                rejected = true;
                continue;
            }
            let rho_b = if last_step { cap } else { rho + h };

            let phi_b: Vec<T> = ws.iter().map(|w| w.phi(program, rho_b, &out.y)).collect();
            let fired: Vec<usize> = (0..ws.len())
                .filter(|&k| phi_a[k] + shift[k] > T::zero() && !(phi_b[k] + shift[k] > T::zero()))
                .collect();
            if !fired.is_empty() {
                let (end, kinds) =
                    self.localize(&out.dense, &ws, &fired, &phi_a, &phi_b, &shift, rho, rho_b, ev_tol, &config);
                let _ = n;
                return Ok((segment(steps, &end), end, SegmentEnd::Events(kinds)));
            }

            rho = rho_b;
            y = out.y;
            k1 = out.dy;
            phi_a = phi_b;
            let dx = k1.rows(0, n).into_owned();
            if self.is_stationary(&config, &dx) {
                let end = self.split(rho, &y, &config);
                return Ok((segment(steps, &end), end, SegmentEnd::Terminal(EventKind::Stationary)));
            }
            if rho >= cap {
                let end = self.split(rho, &y, &config);
                return Ok((segment(steps, &end), end, SegmentEnd::Terminal(EventKind::RhoCapReached)));
            }
            let x = y.rows(0, n).into_owned();
            let tol0 = zero_tol(rho, &x);
            for k in 0..ws.len() {
                if shift[k] > T::zero() && phi_a[k] > tol0 {
                    shift[k] = T::zero();
                }
            }
            let mut p = self.split(rho, &y, &config);
            accepted += 1;
            if self.cfg.newton_every > 0 && accepted.is_multiple_of(self.cfg.newton_every) {
                let corrected = newton_correct(program, &p);
                if corrected != p {
                    p = corrected;
                    y = stack(&p.x, &p.stacked_multipliers());
                    k1 = self.rhs(rho, &y, &config)?;
                    phi_a = ws.iter().map(|w| w.phi(program, rho, &y)).collect();
                }
            }
            steps.push(p);
            h *= step_factor(out.err, rejected);
            rejected = false;
        }
        Err(PathError::Stall {
            rho: rho.to_f64_lossy(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn localize(
        &mut self,
        dense: &DenseStep<T>,
        ws: &[Watch],
        fired: &[usize],
        phi_a: &[T],
        phi_b: &[T],
        shift: &[T],
        rho_a: T,
        rho_b: T,
        ev_tol: T,
        config: &SetConfiguration,
    ) -> (PathPoint<T>, Vec<EventKind>) {
        let program = self.program;
        let width = ev_tol.max(T::lit(4.0) * T::machine_eps() * rho_b.abs());
        let roots: Vec<T> = fired
            .iter()
            .map(|&k| {
                let w = ws[k];
                let s = shift[k];
                let f = |r: T| {
                    let v = w.phi(program, r, &dense.eval(r)) + s;
                    if v.is_finite_value() {
                        v
                    } else {
                        T::zero()
                    }
                };
                illinois_root(f, rho_a, phi_a[k] + s, rho_b, phi_b[k] + s, width)
            })
            .collect();
        let (first, rho_star) = roots
            .iter()
            .enumerate()
            .fold((0, rho_b), |(i, m), (k, r)| if *r < m { (k, *r) } else { (i, m) });
        let mut end = self.split(rho_star, &dense.eval(rho_star), config);
        if shift[fired[first]] == T::zero() {
            end = self.refine_root(ws[fired[first]], end, rho_a, rho_b);
        }
        let y_star = stack(&end.x, &end.stacked_multipliers());
        let tol0 = zero_tol(end.rho, &end.x);
        let window = T::lit(BATCH_WINDOW);
        let mut kinds: Vec<EventKind> = fired
            .iter()
            .zip(roots.iter())
            .filter(|(&k, r)| {
                k == fired[first] || **r <= rho_star + window || ws[k].phi(program, end.rho, &y_star) <= tol0
            })
            .map(|(&k, _)| ws[k].kind())
            .collect();
        for (k, w) in ws.iter().enumerate() {
            if fired.contains(&k) || shift[k] > T::zero() {
                continue;
            }
            if w.phi(program, end.rho, &y_star) <= tol0 {
                kinds.push(w.kind());
            }
        }
        (end, kinds)
    }

    /// Newton iteration in `ρ` on the watch value along the corrected path.
    /// The interpolant locates a root only to the integration tolerance; this
    /// pins it to round-off.
    fn refine_root(&mut self, w: Watch, start: PathPoint<T>, rho_a: T, rho_b: T) -> PathPoint<T> {
        let program = self.program;
        let mut p = polish(program, start.clone());
        for _ in 0..6 {
            let y = stack(&p.x, &p.stacked_multipliers());
            let phi = w.phi(program, p.rho, &y);
            let Ok(d) = self.derivative(&p) else {
                break;
            };
            let dy = stack(&d.dx, &d.stacked_multipliers());
            let slope = w.slope(program, &p.x, &dy);
            if !(slope < T::zero()) || !phi.is_finite_value() {
                break;
            }
            let delta = -phi / slope;
            let rho = p.rho + delta;
            if rho < rho_a || rho > rho_b {
                break;
            }
            if delta.abs() <= T::lit(8.0) * T::machine_eps() * (T::one() + p.rho.abs()) {
                break;
            }
            let mut next = p.clone();
            next.rho = rho;
            next.x += &d.dx * delta;
            next.set_stacked_multipliers(&(p.stacked_multipliers() + d.stacked_multipliers() * delta));
            p = polish(program, next);
        }
        if program.validate_at(&p.x).is_err() || !p.x.iter().all(|v| v.is_finite_value()) {
            return start;
        }
        p
    }

    fn finish(
        self,
        start: PathPoint<T>,
        initial_events: Vec<EventRecord<T>>,
        segments: Vec<Segment<T>>,
        termination: EventRecord<T>,
    ) -> PathTrace<T> {
        PathTrace {
            mode: Mode::Constrained,
            start,
            initial_events,
            segments,
            termination,
            derivative_evaluations: self.counters.evaluations,
            time_points: self.counters.time_points(),
            rho_max: None,
        }
    }
}

/// Integrates one segment from `point` (assumed strictly interior for its
/// configuration) and returns it with the first event that ends it. The
/// event's point is the segment end, before any set change.
pub fn advance_segment<T: Scalar>(
    program: &ConvexProgram<T>,
    point: &PathPoint<T>,
    config: &EngineConfig,
) -> Result<(Segment<T>, EventRecord<T>)> {
    let mut tracker = Tracker::new(program, config);
    let prepared = tracker.prepare(point.clone())?;
    if let Some(kind) = prepared.due.iter().min_by_key(|k| k.batch_key()) {
        let seg = Segment {
            rho_start: point.rho,
            rho_end: point.rho,
            start: point.clone(),
            end: point.clone(),
            steps: Vec::new(),
            events: Vec::new(),
        };
        let rec = EventRecord {
            rho: point.rho,
            kind: *kind,
            point: point.clone(),
        };
        return Ok((seg, rec));
    }
    let (seg, end, outcome) = tracker.advance(prepared)?;
    let kind = match outcome {
        SegmentEnd::Terminal(k) => k,
        SegmentEnd::Events(kinds) => kinds
            .into_iter()
            .min_by_key(|k| k.batch_key())
            .expect("event batch is nonempty"),
    };
    Ok((
        seg,
        EventRecord {
            rho: end.rho,
            kind,
            point: end,
        },
    ))
}

/// Follows the path from the unconstrained minimum to stabilization or a cap.
pub fn run<T: Scalar>(program: &ConvexProgram<T>, config: &EngineConfig) -> Result<PathTrace<T>> {
    if config.mode != Mode::Constrained {
        return Err(PathError::Contract(
            "regularization mode needs a lasso-form problem; use run_regularization".into(),
        ));
    }
    if !(config.rho_cap > 0.0) || config.segment_cap == 0 {
        return Err(PathError::Contract("caps must be positive".into()));
    }
    let start = initialize(program)?;
    let mut tracker = Tracker::new(program, config);
    let mut initial_events = Vec::new();
    let mut prepared = tracker.settle(start.clone(), &mut initial_events)?;
    let mut segments: Vec<Segment<T>> = Vec::new();
    let cap = T::lit(config.rho_cap);
    let termination = loop {
        let terminal = if tracker.is_stationary(&prepared.point.config, &prepared.deriv.dx) {
            Some(EventKind::Stationary)
        } else if prepared.point.rho >= cap {
            Some(EventKind::RhoCapReached)
        } else if segments.len() >= config.segment_cap {
            Some(EventKind::SegmentCapReached)
        } else {
            None
        };
        if let Some(kind) = terminal {
            break EventRecord {
                rho: prepared.point.rho,
                kind,
                point: prepared.point,
            };
        }
        let (mut seg, end, outcome) = tracker.advance(prepared)?;
        match outcome {
            SegmentEnd::Terminal(kind) => {
                segments.push(seg);
                break EventRecord {
                    rho: end.rho,
                    kind,
                    point: end,
                };
            }
            SegmentEnd::Events(kinds) => {
                let mut records = Vec::new();
                let p = tracker.apply_batch(end, kinds, &mut records)?;
                prepared = tracker.settle(p, &mut records)?;
                seg.events = records;
                segments.push(seg);
            }
        }
    };
    Ok(tracker.finish(start, initial_events, segments, termination))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Affine, Quadratic};
    use crate::penalty::stationarity_residual;
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    /// f = ½(x−2)², h(x) = x ≤ 0
    fn one_dim() -> ConvexProgram<f64> {
        let f = Quadratic::new(DMatrix::identity(1, 1), v(&[-2.0]), 2.0);
        ConvexProgram::new(1, Arc::new(f)).with_inequality("x<=0", Arc::new(Affine { w: v(&[1.0]), e: 0.0 }))
    }

    fn half_disk(b: [f64; 2]) -> ConvexProgram<f64> {
        let b = DVector::from_row_slice(&b);
        let f = Quadratic::new(DMatrix::identity(2, 2), -&b, 0.5 * b.norm_squared());
        let h1 = Quadratic::new(DMatrix::identity(2, 2), DVector::zeros(2), -0.5);
        let h2 = Affine {
            w: v(&[-1.0, 0.0]),
            e: 0.0,
        };
        ConvexProgram::new(2, Arc::new(f))
            .with_inequality("ball", Arc::new(h1))
            .with_inequality("halfspace", Arc::new(h2))
    }

    #[test]
    fn initialize_finds_unconstrained_minimum() {
        let p = initialize(&half_disk([-1.0, 2.0])).unwrap();
        assert!((p.x - v(&[-1.0, 2.0])).amax() < 1e-12);
        assert_eq!(p.config.ineq, vec![Side::Pos, Side::Pos]);
    }

    #[test]
    fn non_coercive_objective_is_refused() {
        let f = Affine { w: v(&[1.0]), e: 0.0 };
        let p = ConvexProgram::new(1, Arc::new(f)).with_flags(false, false);
        assert_eq!(initialize(&p).unwrap_err(), PathError::NotCoercive);
    }

    #[test]
    fn one_dim_hits_at_rho_two() {
        let prog = one_dim();
        let start = initialize(&prog).unwrap();
        let (seg, ev) = advance_segment(&prog, &start, &EngineConfig::default()).unwrap();
        assert_eq!(ev.kind, EventKind::HitInequality(0));
        assert!((ev.rho - 2.0).abs() < 1e-9);
        assert!(ev.point.x[0].abs() < 1e-9);
        assert!((seg.rho_end - 2.0).abs() < 1e-9);

        let trace = run(&prog, &EngineConfig::default()).unwrap();
        assert!(trace.is_stationary());
        assert_eq!(trace.num_segments(), 1);
        let kinds: Vec<_> = trace.transitions().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::HitInequality(0)]);
        let last = trace.final_point();
        assert!(last.x[0].abs() < 1e-12);
        assert!((last.omega[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn hit_from_violated_side_seeds_omega_at_rho() {
        let prog = one_dim();
        let mut p = initialize(&prog).unwrap();
        p.rho = 2.0;
        p.x = v(&[0.0]);
        let q = apply_event(&p, EventKind::HitInequality(0)).unwrap();
        assert_eq!(q.config.ineq, vec![Side::Zero]);
        assert_eq!(q.omega, v(&[2.0]));
        let r = apply_event(&q, EventKind::EscapeInToInactive(0)).unwrap();
        assert_eq!(r.config.ineq, vec![Side::Neg]);
        assert_eq!(r.omega.len(), 0);
        assert!(apply_event(&r, EventKind::EscapeInToViolated(0)).is_err());
        assert!(apply_event(&r, EventKind::Stationary).is_err());
    }

    #[test]
    fn hit_from_satisfied_side_seeds_zero() {
        let prog = one_dim();
        let p = PathPoint {
            rho: 1.5,
            x: v(&[0.0]),
            lambda: v(&[]),
            omega: v(&[]),
            config: SetConfiguration {
                eq: vec![],
                ineq: vec![Side::Neg],
            },
        };
        let q = apply_event(&p, EventKind::HitInequality(0)).unwrap();
        assert_eq!(q.omega, v(&[0.0]));
        let _ = prog;
    }

    #[test]
    fn newton_fixes_point_already_on_path() {
        let prog = one_dim();
        let p = PathPoint {
            rho: 3.0,
            x: v(&[0.0]),
            lambda: v(&[]),
            omega: v(&[2.0]),
            config: SetConfiguration {
                eq: vec![],
                ineq: vec![Side::Zero],
            },
        };
        let q = newton_correct(&prog, &p);
        assert!((&q.x - &p.x).amax() <= 1e-10);
        assert!((&q.omega - &p.omega).amax() <= 1e-10);
    }

    #[test]
    fn newton_reduces_perturbed_residual_quadratically() {
        // exterior half-disk point at ρ = 0.5 is x = (b + ρ e₁)/(1 + ρ)
        let prog = half_disk([-1.0, 2.0]);
        let rho = 0.5;
        let exact = v(&[(-1.0 + rho) / (1.0 + rho), 2.0 / (1.0 + rho)]);
        let p = PathPoint {
            rho,
            x: &exact + v(&[1e-4, -1e-4]),
            lambda: v(&[]),
            omega: v(&[]),
            config: SetConfiguration {
                eq: vec![],
                ineq: vec![Side::Pos, Side::Pos],
            },
        };
        let r0 = stationarity_residual(&prog, &p).unwrap();
        let q = newton_correct(&prog, &p);
        let r1 = stationarity_residual(&prog, &q).unwrap();
        assert!(r1 <= 1e-2 * r0);
        assert!((q.x - exact).amax() < 1e-12);
    }

    #[test]
    fn feasible_minimum_gives_empty_path() {
        let prog = half_disk([0.3, 0.4]);
        let trace = run(&prog, &EngineConfig::default()).unwrap();
        assert!(trace.is_stationary());
        assert_eq!(trace.num_segments(), 0);
        assert_eq!(trace.final_point().rho, 0.0);
    }

    #[test]
    fn half_disk_from_exterior_reaches_corner() {
        let prog = half_disk([-1.0, 2.0]);
        let trace = run(&prog, &EngineConfig::default()).unwrap();
        assert!(trace.is_stationary());
        let x = &trace.final_point().x;
        assert!((x - v(&[0.0, 1.0])).amax() < 1e-9, "{x}");
        // both constraints enter together at ρ = 1 with ω = (1, 1)
        let hits: Vec<_> = trace.transitions().collect();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|e| (e.rho - 1.0).abs() < 1e-7));
        assert!((&trace.final_point().omega - v(&[1.0, 1.0])).amax() < 1e-8);
    }

    #[test]
    fn rho_cap_is_reported() {
        let prog = one_dim();
        let cfg = EngineConfig {
            rho_cap: 1.0,
            ..EngineConfig::default()
        };
        let trace = run(&prog, &cfg).unwrap();
        assert_eq!(trace.termination.kind, EventKind::RhoCapReached);
        assert!((trace.final_point().x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn regularization_mode_is_rejected_by_run() {
        let cfg = EngineConfig::regularization();
        assert!(matches!(run(&one_dim(), &cfg), Err(PathError::Contract(_))));
    }
}
