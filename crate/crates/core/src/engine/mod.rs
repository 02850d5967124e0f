//! Path following: initialization, segment integration, event handling and
//! termination, plus closed-form variants for quadratic programs and
//! lasso-type regularization paths.

mod path;
mod qp;
mod regularization;

use std::collections::HashSet;
use std::fmt;

use nalgebra::DVector;

use crate::error::{ConstraintRef, Result};
use crate::linalg::inf_norm;
use crate::model::ConvexProgram;
use crate::ode::Tolerances;
use crate::penalty::{stationarity_vector, PathPoint, Side};
use crate::Scalar;

pub use path::{advance_segment, apply_event, initialize, kkt_residual, newton_correct, run};
pub use qp::run_qp;
pub use regularization::{run_regularization, DenseLasso, LassoForm};

/// Direction of travel in `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// `ρ` increases from 0 until the constrained optimum is reached.
    Constrained,
    /// `ρ` decreases from `ρ_max` along a penalized-estimation path.
    Regularization,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Constrained => "constrained",
            Mode::Regularization => "regularization",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: Mode,
    pub rho_cap: f64,
    pub segment_cap: usize,
    /// Lower end of a regularization path.
    pub rho_min: f64,
    pub tolerances: Tolerances,
    /// Width in `ρ` to which event roots are localized.
    pub event_tol: f64,
    /// Newton re-connection every this many accepted steps (0 disables);
    /// corrections after events are always applied.
    pub newton_every: usize,
    /// `‖dx/dρ‖∞` below which an exhausted configuration counts as stabilized.
    pub stationary_tol: f64,
    /// Stationarity residual accepted on reported points.
    pub tol_stat: f64,
    /// Accepted plus rejected steps allowed in one segment.
    pub max_steps: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Constrained,
            rho_cap: 1e6,
            segment_cap: 10_000,
            rho_min: 0.0,
            tolerances: Tolerances::default(),
            event_tol: 1e-10,
            newton_every: 10,
            stationary_tol: 1e-10,
            tol_stat: 1e-6,
            max_steps: 100_000,
        }
    }
}

impl EngineConfig {
    pub fn regularization() -> Self {
        Self {
            mode: Mode::Regularization,
            segment_cap: 2_500,
            ..Self::default()
        }
    }
}

/// What happened at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    HitEquality(usize),
    HitInequality(usize),
    EscapeEqToNeg(usize),
    EscapeEqToPos(usize),
    EscapeInToInactive(usize),
    EscapeInToViolated(usize),
    Stationary,
    RhoCapReached,
    SegmentCapReached,
}

impl EventKind {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            EventKind::Stationary | EventKind::RhoCapReached | EventKind::SegmentCapReached
        )
    }

    pub fn is_hit(&self) -> bool {
        matches!(self, EventKind::HitEquality(_) | EventKind::HitInequality(_))
    }

    /// Constraint moved by a transition event.
    pub fn constraint(&self) -> Option<ConstraintRef> {
        match *self {
            EventKind::HitEquality(i) | EventKind::EscapeEqToNeg(i) | EventKind::EscapeEqToPos(i) => {
                Some(ConstraintRef::Equality(i))
            }
            EventKind::HitInequality(j)
            | EventKind::EscapeInToInactive(j)
            | EventKind::EscapeInToViolated(j) => Some(ConstraintRef::Inequality(j)),
            _ => None,
        }
    }

    /// Side a transition moves its constraint to.
    pub fn target_side(&self) -> Option<Side> {
        match self {
            EventKind::HitEquality(_) | EventKind::HitInequality(_) => Some(Side::Zero),
            EventKind::EscapeEqToNeg(_) | EventKind::EscapeInToInactive(_) => Some(Side::Neg),
            EventKind::EscapeEqToPos(_) | EventKind::EscapeInToViolated(_) => Some(Side::Pos),
            _ => None,
        }
    }

    /// Batch order: hits before escapes, lower constraint indices first.
    fn batch_key(&self) -> (u8, u8, usize) {
        let (class, idx) = match self.constraint() {
            Some(ConstraintRef::Equality(i)) => (0, i),
            Some(ConstraintRef::Inequality(j)) => (1, j),
            None => (2, 0),
        };
        (u8::from(!self.is_hit()), class, idx)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::HitEquality(i) => write!(f, "hit-eq-{}", i + 1),
            EventKind::HitInequality(j) => write!(f, "hit-in-{}", j + 1),
            EventKind::EscapeEqToNeg(i) => write!(f, "escape-eq-neg-{}", i + 1),
            EventKind::EscapeEqToPos(i) => write!(f, "escape-eq-pos-{}", i + 1),
            EventKind::EscapeInToInactive(j) => write!(f, "escape-in-inactive-{}", j + 1),
            EventKind::EscapeInToViolated(j) => write!(f, "escape-in-violated-{}", j + 1),
            EventKind::Stationary => f.write_str("stationary"),
            EventKind::RhoCapReached => f.write_str("rho-cap"),
            EventKind::SegmentCapReached => f.write_str("segment-cap"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord<T: Scalar> {
    pub rho: T,
    pub kind: EventKind,
    /// Path point after the event (and its whole batch) was applied.
    pub point: PathPoint<T>,
}

/// One stretch of the path with a fixed set configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T: Scalar> {
    pub rho_start: T,
    pub rho_end: T,
    pub start: PathPoint<T>,
    /// Last point of the segment, still in the segment's configuration.
    pub end: PathPoint<T>,
    /// Accepted integrator points strictly between `start` and `end`.
    pub steps: Vec<PathPoint<T>>,
    /// Transitions applied at `rho_end`, in application order.
    pub events: Vec<EventRecord<T>>,
}

impl<T: Scalar> Segment<T> {
    /// `start`, the interior steps, and `end`.
    pub fn points(&self) -> impl Iterator<Item = &PathPoint<T>> {
        std::iter::once(&self.start)
            .chain(self.steps.iter())
            .chain(std::iter::once(&self.end))
    }
}

/// Full record of one path run.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace<T: Scalar> {
    pub mode: Mode,
    pub start: PathPoint<T>,
    /// Transitions applied at the starting point before the first segment.
    pub initial_events: Vec<EventRecord<T>>,
    pub segments: Vec<Segment<T>>,
    pub termination: EventRecord<T>,
    /// Right-hand-side evaluations of the path ODE.
    pub derivative_evaluations: usize,
    /// Distinct values of `ρ` at which the path derivative was evaluated.
    pub time_points: usize,
    /// Start of a regularization path.
    pub rho_max: Option<T>,
}

impl<T: Scalar> PathTrace<T> {
    /// Number of segments traversed.
    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn final_point(&self) -> &PathPoint<T> {
        &self.termination.point
    }

    pub fn is_stationary(&self) -> bool {
        self.termination.kind == EventKind::Stationary
    }

    /// Every event in path order, ending with the terminal one.
    pub fn events(&self) -> impl Iterator<Item = &EventRecord<T>> {
        self.initial_events
            .iter()
            .chain(self.segments.iter().flat_map(|s| s.events.iter()))
            .chain(std::iter::once(&self.termination))
    }

    /// Transition events only.
    pub fn transitions(&self) -> impl Iterator<Item = &EventRecord<T>> {
        self.events().filter(|e| !e.kind.is_terminal())
    }

    /// Every recorded point in path order.
    pub fn points(&self) -> Vec<&PathPoint<T>> {
        let mut out = vec![&self.start];
        for seg in &self.segments {
            out.extend(seg.points());
            out.extend(seg.events.iter().map(|e| &e.point));
        }
        out.push(self.final_point());
        out
    }

    /// Largest gap between the end of one segment and the start of the next,
    /// relative to `1 + ‖x‖`.
    pub fn max_join_gap(&self) -> T {
        let mut worst = T::zero();
        for w in self.segments.windows(2) {
            let a = &w[0].end.x;
            let b = &w[1].start.x;
            worst = worst.max((a - b).norm() / (T::one() + a.norm()));
        }
        worst
    }

    /// Path point at `rho`, interpolated linearly between recorded points of
    /// the containing segment (exact on piecewise-linear paths). Values of
    /// `rho` outside the traced range clamp to the ends.
    pub fn point_at(&self, rho: T) -> PathPoint<T> {
        let forward = self.mode == Mode::Constrained;
        let before = |a: T, b: T| if forward { a <= b } else { a >= b };
        if before(rho, self.start.rho) {
            return self.start.clone();
        }
        for seg in &self.segments {
            if before(rho, seg.rho_end) {
                let pts: Vec<&PathPoint<T>> = seg.points().collect();
                for w in pts.windows(2) {
                    if before(rho, w[1].rho) {
                        return lerp(w[0], w[1], rho);
                    }
                }
                return seg.end.clone();
            }
        }
        let mut p = self.final_point().clone();
        if self.is_stationary() {
            p.rho = rho;
        }
        p
    }
}

fn lerp<T: Scalar>(a: &PathPoint<T>, b: &PathPoint<T>, rho: T) -> PathPoint<T> {
    let span = b.rho - a.rho;
    let t = if span == T::zero() {
        T::zero()
    } else {
        (rho - a.rho) / span
    };
    let mix = |u: &DVector<T>, v: &DVector<T>| u * (T::one() - t) + v * t;
    PathPoint {
        rho,
        x: mix(&a.x, &b.x),
        lambda: mix(&a.lambda, &b.lambda),
        omega: mix(&a.omega, &b.omega),
        config: a.config.clone(),
    }
}

/// KKT measures of the original program at a point with full multipliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport<T: Scalar> {
    /// `‖∇f + Σ λ_i ∇g_i + Σ ω_j ∇h_j‖∞`.
    pub stationarity: T,
    /// `max(|g_i|, h_j⁺)`.
    pub infeasibility: T,
    /// Largest negative inequality multiplier.
    pub dual_infeasibility: T,
    /// `max |ω_j h_j|`.
    pub complementarity: T,
}

impl<T: Scalar> KktReport<T> {
    pub fn max(&self) -> T {
        self.stationarity
            .max(self.infeasibility)
            .max(self.dual_infeasibility)
            .max(self.complementarity)
    }
}

/// Standard KKT check of the original program at `point`, using `ρ·s_i`,
/// `ρ·t_j` as multipliers for every constraint.
pub fn kkt_report<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> Result<KktReport<T>> {
    let e = program.evaluate(&point.x)?;
    let (lam, om) = point.full_multipliers();
    let mut grad = program.surrogate_gradient(&point.x, point.rho);
    for (i, eq) in program.equalities().iter().enumerate() {
        grad.axpy(lam[i], &eq.a, T::one());
    }
    for (j, ineq) in program.inequalities().iter().enumerate() {
        if om[j] != T::zero() {
            grad.axpy(om[j], &ineq.func.gradient(&point.x), T::one());
        }
    }
    let infeas = e
        .g
        .iter()
        .map(|v| v.abs())
        .chain(e.h.iter().map(|v| v.max(T::zero())))
        .fold(T::zero(), |m, v| m.max(v));
    let dual = om.iter().fold(T::zero(), |m, w| m.max(-*w));
    let comp = om
        .iter()
        .zip(e.h.iter())
        .fold(T::zero(), |m, (w, h)| m.max((*w * *h).abs()));
    Ok(KktReport {
        stationarity: inf_norm(&grad),
        infeasibility: infeas,
        dual_infeasibility: dual,
        complementarity: comp,
    })
}

/// Stationarity residual of the surrogate at `point` without box checks.
pub fn surrogate_residual<T: Scalar>(program: &ConvexProgram<T>, point: &PathPoint<T>) -> T {
    inf_norm(&stationarity_vector(program, point))
}

/// Derivative-evaluation bookkeeping shared by the integrating drivers.
#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub evaluations: usize,
    seen: HashSet<u64>,
}

impl Counters {
    pub fn record<T: Scalar>(&mut self, rho: T) {
        self.evaluations += 1;
        self.seen.insert(rho.to_f64_lossy().to_bits());
    }

    pub fn time_points(&self) -> usize {
        self.seen.len()
    }
}
