//! Decreasing-ρ paths of lasso-type problems `min f(x) + ρ Σ_{j∈P} |x_j|` with
//! quadratic `f`.
//!
//! Each penalized coordinate is the affine "equality" `x_j = 0`: a zero
//! coordinate sits in `Z_E`, a positive one in `P_E`, a negative one in `N_E`.
//! The Hessian is constant, so on each segment the free coordinates move
//! linearly in `ρ` and every event time has a closed form. The free block of
//! the Hessian is kept as a Cholesky factor updated one coordinate at a time.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Counters, EngineConfig, EventKind, EventRecord, Mode, PathTrace, Segment};
use crate::error::{PathError, Result};
use crate::linalg::{inf_norm, GrowingCholesky};
use crate::model::{ConvexProgram, Quadratic};
use crate::penalty::{PathPoint, SetConfiguration, Side};
use crate::Scalar;

/// A quadratic loss over `x` with an ℓ₁ penalty on some coordinates.
///
/// Hessian columns are requested lazily, so large structured problems never
/// materialize the full matrix.
pub trait LassoForm<T: Scalar> {
    fn dim(&self) -> usize;
    fn is_penalized(&self, j: usize) -> bool;
    fn loss(&self, x: &DVector<T>) -> T;
    fn gradient(&self, x: &DVector<T>) -> DVector<T>;
    /// Column `j` of the (constant) Hessian.
    fn hessian_column(&self, j: usize) -> DVector<T>;

    fn penalized(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.is_penalized(j)).collect()
    }

    /// `f(x) + ρ Σ_{j∈P} |x_j|`.
    fn objective(&self, x: &DVector<T>, rho: T) -> T {
        let pen = self
            .penalized()
            .into_iter()
            .fold(T::zero(), |s, j| s + x[j].abs());
        self.loss(x) + rho * pen
    }
}

/// Dense `½ xᵗHx + gᵗx + c` with an explicit list of penalized coordinates.
#[derive(Debug, Clone)]
pub struct DenseLasso<T: Scalar> {
    pub h: DMatrix<T>,
    pub g: DVector<T>,
    pub c: T,
    pub penalized: Vec<bool>,
}

impl<T: Scalar> DenseLasso<T> {
    /// Least squares `½‖y − Xβ‖²`, penalizing every coordinate but those in `free`.
    pub fn least_squares(design: &DMatrix<T>, y: &DVector<T>, free: &[usize]) -> Self {
        let p = design.ncols();
        Self {
            h: design.transpose() * design,
            g: -(design.transpose() * y),
            c: y.norm_squared() * T::lit(0.5),
            penalized: (0..p).map(|j| !free.contains(&j)).collect(),
        }
    }

    /// The same problem as a program with equalities `x_j = 0`, one per
    /// penalized coordinate in ascending order.
    pub fn to_program(&self) -> ConvexProgram<T> {
        let n = self.g.len();
        let f = Quadratic::new(self.h.clone(), self.g.clone(), self.c);
        let mut prog = ConvexProgram::new(n, Arc::new(f));
        for j in self.penalized() {
            let mut a = DVector::zeros(n);
            a[j] = T::one();
            prog = prog.with_equality(a, T::zero());
        }
        prog
    }
}

impl<T: Scalar> LassoForm<T> for DenseLasso<T> {
    fn dim(&self) -> usize {
        self.g.len()
    }
    fn is_penalized(&self, j: usize) -> bool {
        self.penalized[j]
    }
    fn loss(&self, x: &DVector<T>) -> T {
        (&self.h * x).dot(x) * T::lit(0.5) + self.g.dot(x) + self.c
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        &self.h * x + &self.g
    }
    fn hessian_column(&self, j: usize) -> DVector<T> {
        self.h.column(j).into_owned()
    }
}

struct Lasso<'a, T: Scalar, L: LassoForm<T> + ?Sized> {
    problem: &'a L,
    n: usize,
    /// Penalized coordinates; position `k` is equality `k`.
    pen: Vec<usize>,
    slot: Vec<Option<usize>>,
    g0: DVector<T>,
    columns: HashMap<usize, DVector<T>>,
    chol: GrowingCholesky<T>,
}

impl<'a, T: Scalar, L: LassoForm<T> + ?Sized> Lasso<'a, T, L> {
    fn column(&mut self, j: usize) -> &DVector<T> {
        let problem = self.problem;
        self.columns
            .entry(j)
            .or_insert_with(|| problem.hessian_column(j))
    }

    fn free(&self, config: &SetConfiguration) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| match self.slot[j] {
                Some(k) => config.eq[k] != Side::Zero,
                None => true,
            })
            .collect()
    }

    fn sign(&self, config: &SetConfiguration, j: usize) -> T {
        match self.slot[j].map(|k| config.eq[k]) {
            Some(Side::Pos) => T::one(),
            Some(Side::Neg) => -T::one(),
            _ => T::zero(),
        }
    }

    /// Brings the factor's index set in line with the free set.
    fn refactor(&mut self, free: &[usize]) -> Result<()> {
        let stale: Vec<usize> = self
            .chol
            .indices()
            .iter()
            .copied()
            .filter(|j| !free.contains(j))
            .collect();
        for j in stale {
            self.chol.remove(j);
        }
        for &j in free {
            if self.chol.indices().contains(&j) {
                continue;
            }
            let col = self.column(j).clone();
            let cross = DVector::from_iterator(
                self.chol.len(),
                self.chol.indices().iter().map(|&i| col[i]),
            );
            self.chol.push(j, &cross, col[j])?;
        }
        Ok(())
    }

    /// `H_FF⁻¹ v_F` with `v` given in the order of `free`.
    fn solve_free(&self, free: &[usize], v: &DVector<T>) -> DVector<T> {
        let order = self.chol.indices();
        let pos: Vec<usize> = order
            .iter()
            .map(|j| free.iter().position(|f| f == j).unwrap())
            .collect();
        let b = DVector::from_iterator(order.len(), pos.iter().map(|&p| v[p]));
        let z = self.chol.solve(&b);
        let mut out = DVector::zeros(free.len());
        for (k, &p) in pos.iter().enumerate() {
            out[p] = z[k];
        }
        out
    }

    /// `H[:, F] v`.
    fn apply_free(&mut self, free: &[usize], v: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.n);
        for (k, &j) in free.iter().enumerate() {
            if v[k] != T::zero() {
                out.axpy(v[k], self.column(j), T::one());
            }
        }
        out
    }

    /// Exact solution at `rho` in `config`, with `λ_Z = −∇_Z f`, and the
    /// constant derivative of `(x, λ)` along the segment.
    fn solve(&mut self, rho: T, config: &SetConfiguration) -> Result<(PathPoint<T>, DVector<T>, DVector<T>)> {
        let free = self.free(config);
        self.refactor(&free)?;
        let s = DVector::from_iterator(free.len(), free.iter().map(|&j| self.sign(config, j)));
        let g0f = DVector::from_iterator(free.len(), free.iter().map(|&j| self.g0[j]));
        let xf = -self.solve_free(&free, &(g0f + &s * rho));
        let dxf = -self.solve_free(&free, &s);
        let grad = self.apply_free(&free, &xf) + &self.g0;
        let dgrad = self.apply_free(&free, &dxf);
        let mut x = DVector::zeros(self.n);
        let mut dx = DVector::zeros(self.n);
        for (k, &j) in free.iter().enumerate() {
            x[j] = xf[k];
            dx[j] = dxf[k];
        }
        let zero = config.zero_eq();
        let lambda = DVector::from_iterator(zero.len(), zero.iter().map(|&k| -grad[self.pen[k]]));
        let dlambda = DVector::from_iterator(zero.len(), zero.iter().map(|&k| -dgrad[self.pen[k]]));
        let point = PathPoint {
            rho,
            x,
            lambda,
            omega: DVector::zeros(0),
            config: config.clone(),
        };
        Ok((point, dx, dlambda))
    }
}

/// A linear watch `φ(Δ) = φ₀ + σΔ` in the distance `Δ = ρ_start − ρ`.
struct Watch<T> {
    kind: EventKind,
    phi: T,
    sigma: T,
}

fn watches<T: Scalar>(
    pen: &[usize],
    point: &PathPoint<T>,
    dx: &DVector<T>,
    dlambda: &DVector<T>,
) -> Vec<Watch<T>> {
    let rho = point.rho;
    let mut out = Vec::new();
    let mut z = 0;
    for (k, &j) in pen.iter().enumerate() {
        match point.config.eq[k] {
            Side::Zero => {
                let (l, c) = (point.lambda[z], dlambda[z]);
                z += 1;
                out.push(Watch {
                    kind: EventKind::EscapeEqToPos(k),
                    phi: rho - l,
                    sigma: c - T::one(),
                });
                out.push(Watch {
                    kind: EventKind::EscapeEqToNeg(k),
                    phi: rho + l,
                    sigma: -(c + T::one()),
                });
            }
            side => {
                let s = if side == Side::Pos { T::one() } else { -T::one() };
                out.push(Watch {
                    kind: EventKind::HitEquality(k),
                    phi: s * point.x[j],
                    sigma: -s * dx[j],
                });
            }
        }
    }
    out
}

/// Regularization path from `ρ_max` down to `config.rho_min`, or until
/// `config.segment_cap` segments have been traversed.
pub fn run_regularization<T, L>(problem: &L, config: &EngineConfig) -> Result<PathTrace<T>>
where
    T: Scalar,
    L: LassoForm<T> + ?Sized,
{
    if config.segment_cap == 0 || config.rho_min < 0.0 {
        return Err(PathError::Contract(
            "segment cap must be positive and rho_min nonnegative".into(),
        ));
    }
    let n = problem.dim();
    let pen = problem.penalized();
    let mut slot = vec![None; n];
    for (k, &j) in pen.iter().enumerate() {
        slot[j] = Some(k);
    }
    let mut lasso = Lasso {
        problem,
        n,
        pen: pen.clone(),
        slot,
        g0: problem.gradient(&DVector::zeros(n)),
        columns: HashMap::new(),
        chol: GrowingCholesky::new(T::lit(1e-12)),
    };
    let mut counters = Counters::default();

    let flat = SetConfiguration::all(Side::Zero, pen.len(), Side::Zero, 0);
    let (probe, _, _) = lasso.solve(T::zero(), &flat)?;
    let mut rho_max = inf_norm(&probe.lambda);
    if rho_max <= T::lit(1e-12) * (T::one() + inf_norm(&lasso.g0)) {
        // round-off above an exactly flat solution
        rho_max = T::zero();
    }
    let (start, _, _) = lasso.solve(rho_max, &flat)?;
    let window = T::lit(1e-12);
    // events closer to zero than round-off in ρ cannot be resolved
    let target = T::lit(config.rho_min).min(rho_max);
    // events closer to zero than round-off in ρ cannot be resolved; the last
    // configuration is carried over that final stretch
    let rho_min = target.max(window * rho_max);
    let limit = 2 * pen.len() + 4;

    let mut initial_events = Vec::new();
    let mut segments: Vec<Segment<T>> = Vec::new();
    let mut point = start.clone();
    let mut stuck = 0usize;

    let termination = loop {
        counters.record(point.rho);
        let (fresh, dx, dlambda) = lasso.solve(point.rho, &point.config)?;
        point = fresh;
        let tol0 = T::lit(1e-9) * (T::one() + point.rho.abs() + inf_norm(&point.x));
        let dtol = T::lit(1e-9) * (T::one() + inf_norm(&dx) + inf_norm(&dlambda));
        let mut immediate = Vec::new();
        let mut candidates = Vec::new();
        for w in watches(&pen, &point, &dx, &dlambda) {
            if w.phi < -tol0 || (w.phi <= tol0 && w.sigma < -dtol) {
                immediate.push(w.kind);
            } else if w.phi > tol0 && w.sigma < T::zero() {
                candidates.push((w.phi / -w.sigma, w.kind));
            }
        }
        if point.rho <= rho_min {
            if target < point.rho {
                point = lasso.solve(target, &point.config)?.0;
                counters.record(target);
            }
            let kind = if rho_max == T::zero() {
                EventKind::Stationary
            } else {
                EventKind::RhoCapReached
            };
            break EventRecord {
                rho: point.rho,
                kind,
                point,
            };
        }
        if !immediate.is_empty() {
            stuck += 1;
            if stuck > limit {
                return Err(PathError::Stall {
                    rho: point.rho.to_f64_lossy(),
                });
            }
            let records = match segments.last_mut() {
                Some(seg) => &mut seg.events,
                None => &mut initial_events,
            };
            point = apply_batch(&mut lasso, point, immediate, records)?;
            continue;
        }
        stuck = 0;

        let moving = inf_norm(&dx) > T::lit(config.stationary_tol);
        if candidates.is_empty() && !moving {
            break EventRecord {
                rho: point.rho,
                kind: EventKind::Stationary,
                point,
            };
        }
        if segments.len() >= config.segment_cap {
            break EventRecord {
                rho: point.rho,
                kind: EventKind::SegmentCapReached,
                point,
            };
        }

        let room = point.rho - rho_min;
        let first = candidates.iter().map(|c| c.0).fold(room, |m, d| m.min(d));
        let last_stretch = first >= room;
        if last_stretch {
            candidates.clear();
        }
        let delta = if last_stretch { point.rho - target } else { first };
        let rho_end = point.rho - delta;
        let mut end = point.clone();
        end.rho = rho_end;
        end.x = &point.x - &dx * delta;
        end.lambda = &point.lambda - &dlambda * delta;
        let tol = window * (T::one() + point.rho);
        let kinds: Vec<EventKind> = candidates
            .iter()
            .filter(|(d, _)| *d <= delta + tol)
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
            let (last, _, _) = lasso.solve(rho_end, &end.config)?;
            counters.record(rho_end);
            break EventRecord {
                rho: rho_end,
                kind: EventKind::RhoCapReached,
                point: last,
            };
        }
        point = apply_batch(&mut lasso, end, kinds, &mut seg.events)?;
        segments.push(seg);
    };

    Ok(PathTrace {
        mode: Mode::Regularization,
        start,
        initial_events,
        segments,
        termination,
        derivative_evaluations: counters.evaluations,
        time_points: counters.time_points(),
        rho_max: Some(rho_max),
    })
}

fn apply_batch<T: Scalar, L: LassoForm<T> + ?Sized>(
    lasso: &mut Lasso<'_, T, L>,
    point: PathPoint<T>,
    mut kinds: Vec<EventKind>,
    records: &mut Vec<EventRecord<T>>,
) -> Result<PathPoint<T>> {
    kinds.sort_by_key(|k| k.batch_key());
    let mut seen = Vec::new();
    kinds.retain(|k| {
        let c = k.constraint();
        let fresh = !seen.contains(&c);
        seen.push(c);
        fresh
    });
    let mut config = point.config.clone();
    let mut applied = Vec::with_capacity(kinds.len());
    for k in kinds {
        let c = k.constraint().zip(k.target_side());
        let Some((c, side)) = c else {
            return Err(PathError::Contract(format!("event {k} does not move a coordinate")));
        };
        let now = config.side(c);
        if k.is_hit() == (now == Side::Zero) {
            return Err(PathError::Contract(format!(
                "event {k} inconsistent with {c} in set {now:?}"
            )));
        }
        config.set_side(c, side);
        if !k.is_hit() {
            // A column dependent on the free ones has its multiplier pinned at
            // ±ρ; leaving it at zero is an equally valid solution.
            match lasso.refactor(&lasso.free(&config)) {
                Ok(()) => {}
                Err(PathError::SingularReducedHessian) => {
                    log::debug!("escape {k} skipped: column depends on the free set");
                    config.set_side(c, now);
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
        applied.push(k);
    }
    let kinds = applied;
    let (p, _, _) = lasso.solve(point.rho, &config)?;
    records.extend(kinds.iter().map(|k| EventRecord {
        rho: p.rho,
        kind: *k,
        point: p.clone(),
    }));
    Ok(p)
}
