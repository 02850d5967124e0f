//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use penalty_path::engine::{
    initialize, kkt_report, run, run_qp, run_regularization, surrogate_residual, LassoForm,
};
use penalty_path::kkt::{assemble, null_basis, null_space_derivative, range_space_derivative};
use penalty_path::oracle::{brute_force_qp, dykstra_project, lasso_reference, nnls_reference};
use penalty_path::penalty::surrogate_value;
use penalty_path::problems::{
    denoise_build, duplicate, gp_lower, gp_to_x, half_vectorize, nnls_problem, projection_problem,
    qcqp_lower, sdp_surrogate, ConvexSet, DenoiseProblem, PosynomialProgram, QcqpProgram,
    SdpProgram,
};
use penalty_path::{
    Affine, ConvexProgram, EngineConfig, EventKind, PathPoint, Program, Quadratic, SetConfiguration,
    Side, Trace,
};

const HALF_DISK_STARTS: [[f64; 2]; 7] = [
    [-2.0, 0.5],
    [-2.0, 1.5],
    [-1.0, 2.0],
    [2.0, 1.5],
    [2.0, 0.0],
    [1.0, 2.0],
    [-0.5, -2.0],
];

const BOX_TOL: f64 = 1e-8;
const JOIN_TOL: f64 = 1e-7;

/// Failure messages collected while a criterion runs.
#[derive(Default)]
struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn expect(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.failures.push(msg.into());
        }
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    fn within(&mut self, elapsed: Duration, limit: Duration, what: &str) {
        self.expect(elapsed < limit, format!("{what} took {elapsed:?} (limit {limit:?})"));
    }
}

/// Traces and programs gathered for the cross-cutting checks.
#[derive(Default)]
struct Shared {
    constrained: Vec<(String, Program, Trace)>,
    regularization: Vec<(String, Trace)>,
    time_points: Vec<(&'static str, usize, usize)>,
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn half_disk() -> Vec<ConvexSet<f64>> {
    vec![
        ConvexSet::unit_ball(2),
        ConvexSet::HalfSpace { a: v(&[-1.0, 0.0]), b: 0.0 },
    ]
}

fn criterion_1(c: &mut Check, shared: &mut Shared) {
    for b in HALF_DISK_STARTS {
        let b = v(&b);
        let prog = projection_problem(&b, &half_disk());
        let t = Instant::now();
        let trace = match run(&prog, &EngineConfig::default()) {
            Ok(tr) => tr,
            Err(e) => {
                c.expect(false, format!("b={b:?}: {e}"));
                continue;
            }
        };
        c.within(t.elapsed(), Duration::from_secs(1), &format!("b=({}, {})", b[0], b[1]));
        let end = trace.final_point();
        let kkt = kkt_report(&prog, end).map(|r| r.max()).unwrap_or(f64::INFINITY);
        c.expect(trace.is_stationary(), format!("b=({}, {}) ended with {:?}", b[0], b[1], trace.termination.kind));
        c.expect(kkt <= 1e-6, format!("b=({}, {}) KKT residual {kkt:e}", b[0], b[1]));
        let infeas = prog.evaluate(&end.x).map(|e| e.h.max()).unwrap_or(f64::INFINITY);
        c.expect(infeas <= 1e-6, format!("b=({}, {}) infeasible by {infeas:e}", b[0], b[1]));
        let dyk = dykstra_project(&b, &half_disk());
        c.expect(
            (&end.x - &dyk.solution).amax() <= 1e-6,
            format!("b=({}, {}) differs from Dykstra by {:e}", b[0], b[1], (&end.x - &dyk.solution).amax()),
        );
        if b == v(&[-1.0, 2.0]) {
            let err = (&end.x - v(&[0.0, 1.0])).amax();
            c.expect(err <= 1e-3, format!("endpoint {:?} off (0, 1) by {err:e}", end.x.as_slice()));
            c.note(format!("b=(-1,2) -> ({:.6}, {:.6})", end.x[0], end.x[1]));
            shared.time_points.push(("half-disk", trace.time_points, 19));
        }
        shared.constrained.push((format!("half-disk b=({}, {})", b[0], b[1]), prog, trace));
    }
}

fn criterion_2(c: &mut Check, shared: &mut Shared) {
    let prog = qcqp_lower(&QcqpProgram::<f64>::toy()).expect("toy QCQP lowers");
    let start = prog.start().cloned().unwrap_or_else(|| DVector::zeros(2));
    c.expect((&start - v(&[1.0, 1.5])).amax() < 1e-14, "start is not (1, 1.5)");
    let t = Instant::now();
    let trace = match run(&prog, &EngineConfig::default()) {
        Ok(tr) => tr,
        Err(e) => return c.expect(false, format!("run failed: {e}")),
    };
    c.within(t.elapsed(), Duration::from_secs(1), "QCQP toy");
    let end = &trace.final_point().x;
    let err = (end - v(&[0.059, 0.829])).amax();
    c.expect(trace.is_stationary(), format!("ended with {:?}", trace.termination.kind));
    c.expect(err <= 5e-3, format!("endpoint {:?} off (0.059, 0.829) by {err:e}", end.as_slice()));
    let mut hit: Vec<usize> = trace
        .transitions()
        .filter_map(|e| match e.kind {
            EventKind::HitInequality(j) => Some(j),
            _ => None,
        })
        .collect();
    hit.sort_unstable();
    hit.dedup();
    c.expect(hit.len() >= 2, format!("only circles {hit:?} became active"));
    c.note(format!("end ({:.4}, {:.4}), circles hit {:?}", end[0], end[1], hit));
    shared.time_points.push(("qcqp", trace.time_points, 72));
    shared.constrained.push(("qcqp toy".into(), prog, trace));
}

fn criterion_3(c: &mut Check, shared: &mut Shared) {
    let gp = PosynomialProgram::<f64>::toy();
    let prog = gp_lower(&gp).expect("toy GP lowers");
    let t = Instant::now();
    let start = initialize(&prog);
    let trace = run(&prog, &EngineConfig::default());
    c.within(t.elapsed(), Duration::from_secs(1), "GP toy");
    let (start, trace) = match (start, trace) {
        (Ok(s), Ok(tr)) => (s, tr),
        (Err(e), _) | (_, Err(e)) => return c.expect(false, format!("run failed: {e}")),
    };
    let root = 6f64.powf(0.2);
    let err0 = (gp_to_x(&start.x) - DVector::from_element(2, root)).amax();
    c.expect(err0 <= 1e-10, format!("start off 6^(1/5) by {err0:e}"));
    let end = trace.final_point();
    let h = gp.constraints[0].eval(&gp_to_x(&end.x)) - 1.0;
    c.expect(h.abs() <= 1e-6, format!("constraint value {h:e} at the end"));
    let kkt = kkt_report(&prog, end).map(|r| r.max()).unwrap_or(f64::INFINITY);
    c.expect(kkt <= 1e-6, format!("KKT residual {kkt:e}"));
    c.expect(trace.is_stationary(), format!("ended with {:?}", trace.termination.kind));
    let x = gp_to_x(&end.x);
    c.note(format!("end x = ({:.6}, {:.6})", x[0], x[1]));
    shared.time_points.push(("gp", trace.time_points, 7));
    shared.constrained.push(("gp toy".into(), prog, trace));
}

fn criterion_4(c: &mut Check, shared: &mut Shared) {
    let sdp = SdpProgram::<f64>::toy();
    let prog = sdp_surrogate(&sdp).expect("toy SDP lowers");
    let t = Instant::now();
    let trace = match run(&prog, &EngineConfig::default()) {
        Ok(tr) => tr,
        Err(e) => return c.expect(false, format!("run failed: {e}")),
    };
    c.within(t.elapsed(), Duration::from_secs(5), "SDP toy");
    c.expect(
        trace.start.x == half_vectorize(&(-&sdp.c)),
        format!("X(0) = {:?}, not -C", trace.start.x.as_slice()),
    );
    let s2 = 2f64.sqrt();
    let target = DMatrix::from_row_slice(2, 2, &[1.0, -s2, -s2, 2.0]);
    let x = duplicate(&trace.final_point().x);
    let err = (&x - &target).amax();
    c.expect(err <= 1e-3, format!("final X off by {err:e}"));
    c.note(format!(
        "final X = [[{:.6}, {:.6}], [{:.6}, {:.6}]], rho = {:.3}",
        x[(0, 0)],
        x[(0, 1)],
        x[(1, 0)],
        x[(1, 1)],
        trace.final_point().rho
    ));
    shared.constrained.push(("sdp toy".into(), prog, trace));
}

fn criterion_5(c: &mut Check, shared: &mut Shared) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_mid = 0.0f64;
    for inst in 0..50 {
        let design = DMatrix::from_fn(20, 10, |_, _| gaussian(&mut rng));
        let target = DVector::from_fn(20, |_, _| gaussian(&mut rng));
        let prog = match nnls_problem(&design, &target) {
            Ok(p) => p,
            Err(e) => {
                c.expect(false, format!("instance {inst}: {e}"));
                continue;
            }
        };
        let trace = match run_qp(&prog, &EngineConfig::default()) {
            Ok(tr) => tr,
            Err(e) => {
                c.expect(false, format!("instance {inst}: {e}"));
                continue;
            }
        };
        let oracle = nnls_reference(&design, &target);
        c.expect(oracle.converged, format!("instance {inst}: NNLS oracle did not converge"));
        let err = (&trace.final_point().x - &oracle.solution).amax();
        worst = worst.max(err);
        c.expect(err <= 1e-8, format!("instance {inst}: endpoint differs by {err:e}"));
        for seg in &trace.segments {
            let mid = trace.point_at((seg.rho_start + seg.rho_end) * 0.5);
            let r = surrogate_residual(&prog, &mid);
            worst_mid = worst_mid.max(r);
            c.expect(r <= 1e-8, format!("instance {inst}: midpoint residual {r:e}"));
        }
        shared.constrained.push((format!("nnls {inst}"), prog, trace));
    }
    c.within(t.elapsed(), Duration::from_secs(10), "50 NNLS paths");
    c.note(format!("max endpoint error {worst:.1e}, max midpoint residual {worst_mid:.1e}"));
}

/// Strictly convex QP with affine constraints that are feasible at a random point.
fn random_qp(rng: &mut ChaCha8Rng) -> Program {
    let n = rng.random_range(1..=4);
    let m = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let a = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let b = DVector::from_fn(n, |_, _| 2.0 * gaussian(rng));
    let mut prog = ConvexProgram::new(n, Arc::new(Quadratic::new(a, b, 0.0)));
    let feasible = DVector::from_fn(n, |_, _| gaussian(rng));
    let total = rng.random_range(1..=5);
    let num_eq = rng.random_range(0..=total.min(n - 1));
    for k in 0..total {
        let w = DVector::from_fn(n, |_, _| gaussian(rng));
        let at = w.dot(&feasible);
        if k < num_eq {
            prog = prog.with_equality(w, at);
        } else {
            let slack = rng.random_range(0.0..1.0);
            prog = prog.with_inequality(format!("a{k}"), Arc::new(Affine { w, e: at + slack }));
        }
    }
    prog
}

fn criterion_6(c: &mut Check, shared: &mut Shared) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = Instant::now();
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let prog = random_qp(&mut rng);
        let trace = match run_qp(&prog, &EngineConfig::default()) {
            Ok(tr) => tr,
            Err(e) => {
                c.expect(false, format!("instance {inst}: {e}"));
                continue;
            }
        };
        c.expect(trace.is_stationary(), format!("instance {inst}: ended with {:?}", trace.termination.kind));
        let top = 1.5 * trace.final_point().rho + 1.0;
        let grid: Vec<f64> = (0..20).map(|k| top * k as f64 / 19.0).collect();
        let oracle = match brute_force_qp(&prog, &grid) {
            Ok(o) => o,
            Err(e) => {
                c.expect(false, format!("instance {inst}: {e}"));
                continue;
            }
        };
        for (rho, x) in grid.iter().zip(&oracle) {
            let err = (&trace.point_at(*rho).x - x).amax() / (1.0 + x.amax());
            worst = worst.max(err);
            c.expect(err <= 1e-6, format!("instance {inst}: rho={rho:.4} differs by {err:e}"));
        }
        shared.constrained.push((format!("qp {inst}"), prog, trace));
    }
    c.within(t.elapsed(), Duration::from_secs(30), "100 QP comparisons");
    c.note(format!("max relative deviation {worst:.1e}"));
}

/// Three flat blocks on a 16 × 16 grid with Gaussian noise.
fn phantom() -> DVector<f64> {
    let (m, n) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    DVector::from_fn(m * n, |i, _| {
        let (r, col) = (i % m, i / m);
        let base = if (3..11).contains(&r) && (4..10).contains(&col) {
            0.8
        } else if (10..14).contains(&r) && (11..15).contains(&col) {
            0.5
        } else {
            0.2
        };
        base + 0.05 * gaussian(&mut rng)
    })
}

fn dense_lasso(p: &DenoiseProblem<f64>) -> (DMatrix<f64>, DVector<f64>, Vec<bool>) {
    let d = p.dim();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        h.set_column(j, &p.hessian_column(j));
    }
    let g = p.gradient(&DVector::zeros(d));
    let pen = (0..d).map(|j| p.is_penalized(j)).collect();
    (h, g, pen)
}

fn criterion_7(c: &mut Check, shared: &mut Shared) {
    let (m, n) = (16, 16);
    let t = Instant::now();
    let p = match denoise_build(m, n, &phantom(), None) {
        Ok(p) => p,
        Err(e) => return c.expect(false, format!("build failed: {e}")),
    };
    c.expect(p.num_differences() == 2 * m * n - m - n, format!("{} difference rows", p.num_differences()));
    c.expect(p.difference_nnz() == 2 * (2 * m * n - m - n), format!("{} nonzeros in D", p.difference_nnz()));
    let nnz = p.normal_matrix().nnz();
    c.expect(nnz <= 5 * m * n - 2 * m - 2 * n, format!("VᵗV has {nnz} nonzeros"));

    let trace = match run_regularization(&p, &EngineConfig::regularization()) {
        Ok(tr) => tr,
        Err(e) => return c.expect(false, format!("path failed: {e}")),
    };
    let rho_max = trace.rho_max.unwrap_or(0.0);
    let (h, g, pen) = dense_lasso(&p);

    // flat point: penalized coordinates zero, last coordinate at its minimizer
    let d = p.dim();
    let mut flat = DVector::zeros(d);
    flat[d - 1] = -g[d - 1] / h[(d - 1, d - 1)];
    let grad = &h * &flat + &g;
    let top = (0..d - 1).map(|j| grad[j].abs()).fold(0.0, f64::max);
    c.expect(
        (top - rho_max).abs() <= 1e-10 * rho_max,
        format!("rho_max {rho_max} but flat gradient bound {top}"),
    );
    let u0 = p.to_image(&trace.start.x);
    let mean = p.image.mean();
    c.expect(u0.iter().all(|x| (x - mean).abs() < 1e-10), "start is not the flat mean image");
    let above = lasso_reference(&h, &g, &pen, rho_max * (1.0 + 1e-6));
    let above_nz = (0..d - 1).filter(|&j| above.solution[j] != 0.0).count();
    c.expect(above_nz == 0, format!("{above_nz} differences nonzero just above rho_max"));
    c.expect(top <= rho_max * (1.0 + 1e-6), "flat point not optimal just above rho_max");
    c.expect(top > rho_max * (1.0 - 1e-6), "flat point still optimal just below rho_max");
    let below = trace.point_at(rho_max * (1.0 - 1e-6));
    let below_nz = (0..d - 1).filter(|&j| below.x[j] != 0.0).count();
    c.expect(below_nz > 0, "path is still flat just below rho_max");

    let mut worst = 0.0f64;
    for frac in [0.7, 0.4, 0.2, 0.1, 0.05] {
        let rho = rho_max * frac;
        let path = p.objective(&trace.point_at(rho).x, rho);
        let oracle = lasso_reference(&h, &g, &pen, rho);
        let reference = p.objective(&oracle.solution, rho);
        let rel = (path - reference).abs() / reference.abs();
        worst = worst.max(rel);
        c.expect(oracle.converged, format!("oracle did not converge at rho={rho:.4}"));
        c.expect(rel <= 1e-6, format!("rho={rho:.4}: objective {path} vs oracle {reference}"));
    }
    c.within(t.elapsed(), Duration::from_secs(30), "denoising");
    c.note(format!(
        "rho_max {rho_max:.6}, {} segments, max probe deviation {worst:.1e}",
        trace.num_segments()
    ));
    shared.regularization.push(("denoise".into(), trace));
}

fn monotonicity(c: &mut Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let programs: Vec<Program> = vec![
        projection_problem(&v(&[-1.0, 2.0]), &half_disk()),
        qcqp_lower(&QcqpProgram::toy()).expect("toy QCQP"),
        gp_lower(&PosynomialProgram::toy()).expect("toy GP"),
        random_qp(&mut rng),
    ];
    let mut strict_checked = 0;
    for k in 0..1000 {
        let prog = &programs[k % programs.len()];
        let x = DVector::from_fn(prog.dim(), |_, _| 2.0 * gaussian(&mut rng));
        let r1 = rng.random_range(0.0..5.0);
        let r2 = r1 + rng.random_range(1e-3..5.0);
        let (Ok(e1), Ok(e2)) = (surrogate_value(prog, &x, r1), surrogate_value(prog, &x, r2)) else {
            c.expect(false, "surrogate evaluation failed");
            continue;
        };
        c.expect(e1 <= e2 + 1e-12 * e2.abs(), format!("E decreased from {e1} to {e2}"));
        let e = prog.evaluate(&x).expect("evaluation");
        let infeasible = e.g.iter().any(|g| g.abs() > 1e-9) || e.h.iter().any(|h| *h > 1e-9);
        if infeasible {
            strict_checked += 1;
            c.expect(e1 < e2, format!("E not strictly increasing at infeasible x: {e1} vs {e2}"));
        }
    }
    c.note(format!("1000 monotonicity samples ({strict_checked} infeasible)"));
}

fn trace_invariants(c: &mut Check, shared: &Shared) {
    let mut worst_box = 0.0f64;
    let mut worst_join = 0.0f64;
    let mut checked = 0;
    for (name, prog, trace) in &shared.constrained {
        let mut last = f64::NEG_INFINITY;
        for p in trace.points() {
            let b = p.box_violation();
            worst_box = worst_box.max(b / (1.0 + p.rho));
            c.expect(b <= BOX_TOL * (1.0 + p.rho), format!("{name}: box violated by {b:e} at rho={}", p.rho));
            // a ρ-dependent amendment breaks monotonicity of E_ρ in ρ
            if prog.amendment().is_some() {
                continue;
            }
            if let Ok(e) = surrogate_value(prog, &p.x, p.rho) {
                c.expect(e >= last - 1e-9 * (1.0 + e.abs()), format!("{name}: E(x(rho)) decreased at rho={}", p.rho));
                last = e;
            }
        }
        let gap = trace.max_join_gap();
        worst_join = worst_join.max(gap);
        c.expect(gap <= JOIN_TOL, format!("{name}: segment joins differ by {gap:e}"));
        checked += 1;
    }
    for (name, trace) in &shared.regularization {
        for p in trace.points() {
            let b = p.box_violation();
            worst_box = worst_box.max(b / (1.0 + p.rho));
            c.expect(b <= BOX_TOL * (1.0 + p.rho), format!("{name}: box violated by {b:e} at rho={}", p.rho));
        }
        let gap = trace.max_join_gap();
        worst_join = worst_join.max(gap);
        c.expect(gap <= JOIN_TOL, format!("{name}: segment joins differ by {gap:e}"));
        checked += 1;
    }
    c.note(format!("{checked} traces, worst box {worst_box:.1e}, worst join {worst_join:.1e}"));
}

fn adapter_derivatives(c: &mut Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let sdp = sdp_surrogate(&SdpProgram::toy()).expect("toy SDP");
    let programs: Vec<(&str, Program)> = vec![
        ("projection", projection_problem(&v(&[-1.0, 2.0]), &half_disk())),
        ("qcqp", qcqp_lower(&QcqpProgram::toy()).expect("toy QCQP")),
        ("gp", gp_lower(&PosynomialProgram::toy()).expect("toy GP")),
        ("sdp", sdp),
    ];
    for (name, prog) in &programs {
        for _ in 0..20 {
            let x = DVector::from_fn(prog.dim(), |_, _| gaussian(&mut rng));
            if prog.validate_at(&x).is_err() {
                continue;
            }
            let report = prog.check_derivatives(&x, None);
            let err = report.max_gradient_error().max(report.max_hessian_error());
            worst = worst.max(err);
            c.expect(err <= 1e-5, format!("{name}: finite-difference error {err:e}"));
        }
    }
    c.note(format!("worst finite-difference error {worst:.1e}"));
}

/// Random QCQP-style system with a random active set of full row rank.
fn random_active_point(rng: &mut ChaCha8Rng) -> (Program, PathPoint<f64>) {
    let n = rng.random_range(2..=6);
    let m = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let a = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let mut prog = ConvexProgram::new(n, Arc::new(Quadratic::new(a, DVector::from_fn(n, |_, _| gaussian(rng)), 0.0)));
    let r = rng.random_range(0..=2);
    let s = rng.random_range(1..=3);
    for _ in 0..r {
        prog = prog.with_equality(DVector::from_fn(n, |_, _| gaussian(rng)), gaussian(rng));
    }
    for j in 0..s {
        let q = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
        let p = q.transpose() * &q;
        let b = DVector::from_fn(n, |_, _| gaussian(rng));
        prog = prog.with_inequality(format!("q{j}"), Arc::new(Quadratic::new(p, b, -1.0)));
    }
    let sides = [Side::Neg, Side::Zero, Side::Pos];
    let mut config = SetConfiguration::all(Side::Zero, r, Side::Zero, s);
    loop {
        for side in config.eq.iter_mut().chain(config.ineq.iter_mut()) {
            *side = sides[rng.random_range(0..3)];
        }
        if config.num_active() < n {
            break;
        }
    }
    let rho = rng.random_range(0.1..5.0);
    let point = PathPoint {
        rho,
        x: DVector::from_fn(n, |_, _| gaussian(rng)),
        lambda: DVector::from_fn(config.zero_eq().len(), |_, _| rng.random_range(-rho..rho)),
        omega: DVector::from_fn(config.zero_in().len(), |_, _| rng.random_range(0.0..rho)),
        config,
    };
    (prog, point)
}

fn derivative_routes(c: &mut Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (prog, point) = random_active_point(&mut rng);
        let sys = assemble(&prog, &point);
        let range = range_space_derivative(&sys);
        let null = null_basis(&sys.u_z).and_then(|b| null_space_derivative(&sys, &b));
        match (range, null) {
            (Ok(a), Ok(b)) => {
                let scale = 1.0 + a.dx.amax() + a.stacked_multipliers().amax();
                let err = ((&a.dx - &b.dx).amax())
                    .max((a.stacked_multipliers() - b.stacked_multipliers()).amax())
                    / scale;
                worst = worst.max(err);
                c.expect(err <= 1e-8, format!("system {k}: routes differ by {err:e}"));
            }
            (a, b) => c.expect(false, format!("system {k}: {:?} / {:?}", a.err(), b.err())),
        }
    }
    c.note(format!("100 active systems, worst relative disagreement {worst:.1e}"));
}

fn criterion_8(c: &mut Check, shared: &Shared) {
    monotonicity(c);
    trace_invariants(c, shared);
    adapter_derivatives(c);
    derivative_routes(c);
}

fn criterion_9(c: &mut Check, shared: &Shared) {
    for (name, got, reference) in &shared.time_points {
        let ok = (*got as f64) >= *reference as f64 / 10.0 && (*got as f64) <= *reference as f64 * 10.0;
        c.expect(ok, format!("{name}: {got} time points, reference {reference}"));
        c.note(format!("{name}: {got} time points (reference {reference})"));
    }
    for (name, _, trace) in shared.constrained.iter().take(9) {
        if name.starts_with("qcqp") || name.starts_with("gp") || name.contains("(-1, 2)") {
            c.note(format!("{name}: {} derivative evaluations", trace.derivative_evaluations));
        }
    }
    c.expect(shared.time_points.len() == 3, "missing time-point counts for criteria 1-3");
}

fn main() {
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut report = |id: usize, title: &str, c: Check| {
        let verdict = if c.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {id} [{title}]: {verdict}");
        for n in &c.notes {
            println!("    {n}");
        }
        for f in c.failures.iter().take(10) {
            println!("    failure: {f}");
        }
        if c.failures.len() > 10 {
            println!("    ... {} more failures", c.failures.len() - 10);
        }
        if !c.failures.is_empty() {
            failed += 1;
        }
    };
    let steps: [(usize, &str, fn(&mut Check, &mut Shared)); 7] = [
        (1, "half-disk projection", criterion_1),
        (2, "QCQP toy", criterion_2),
        (3, "GP toy", criterion_3),
        (4, "SDP toy", criterion_4),
        (5, "NNLS oracle equivalence", criterion_5),
        (6, "QP brute-force equivalence", criterion_6),
        (7, "total-variation denoising", criterion_7),
    ];
    for (id, title, f) in steps {
        let mut c = Check::default();
        f(&mut c, &mut shared);
        report(id, title, c);
    }
    let mut c = Check::default();
    criterion_8(&mut c, &shared);
    report(8, "property suites", c);
    let mut c = Check::default();
    criterion_9(&mut c, &shared);
    report(9, "derivative-evaluation counts", c);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
