use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use penalty_path::engine::{kkt_report, run, run_qp};
use penalty_path::model::relative_eigen_floor;
use penalty_path::oracle::{brute_force_qp, dykstra_project, fixed_rho_minimize, nnls_reference};
use penalty_path::penalty::{multiplier_recovery, stationarity_residual, surrogate_value};
use penalty_path::problems::{
    duplicate, gp_lower, nnls_problem, projection_problem, qcqp_lower, sdp_eig, sdp_surrogate,
    ConvexSet, LogPosynomial, Posynomial, QcqpProgram, QuadraticConstraint, SdpProgram,
};
use penalty_path::{Affine, ConvexProgram, EngineConfig, EventKind, Quadratic, SmoothFn};

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

#[test]
fn fixed_rho_oracle_agrees_with_half_disk_path() {
    let b = v(&[-1.0, 2.0]);
    let prog = projection_problem(&b, &half_disk());
    let trace = run(&prog, &EngineConfig::default()).unwrap();
    let at_zero = fixed_rho_minimize(&prog, 0.0, None);
    assert!((at_zero.solution - &b).amax() < 1e-8);
    for rho in [0.3, 1.0, 2.5, 10.0] {
        let path = surrogate_value(&prog, &trace.point_at(rho).x, rho).unwrap();
        let oracle = fixed_rho_minimize(&prog, rho, None);
        assert!(oracle.converged);
        assert!((path - oracle.objective).abs() <= 1e-4, "rho={rho}: {path} vs {}", oracle.objective);
    }
}

/// `½‖x − c‖²` over the box `[0, 1]²`.
fn box_qp(c: [f64; 2]) -> ConvexProgram<f64> {
    let c = v(&c);
    let f = Quadratic::new(DMatrix::identity(2, 2), -&c, 0.0);
    let mut prog = ConvexProgram::new(2, Arc::new(f));
    for k in 0..2 {
        let mut e = DVector::zeros(2);
        e[k] = 1.0;
        prog = prog
            .with_inequality(format!("upper{k}"), Arc::new(Affine { w: e.clone(), e: 1.0 }))
            .with_inequality(format!("lower{k}"), Arc::new(Affine { w: -e, e: 0.0 }));
    }
    prog
}

#[test]
fn brute_force_matches_box_qp_path() {
    let prog = box_qp([1.8, -0.7]);
    let trace = run_qp(&prog, &EngineConfig::default()).unwrap();
    assert!(trace.is_stationary());
    let end = trace.final_point().rho;
    let grid: Vec<f64> = (0..20).map(|k| 2.0 * end * k as f64 / 19.0).collect();
    let oracle = brute_force_qp(&prog, &grid).unwrap();
    for (rho, x) in grid.iter().zip(&oracle) {
        assert!((trace.point_at(*rho).x - x).amax() < 1e-10, "rho={rho}");
    }
    // past stabilization the minimizer is the constrained optimum
    for x in oracle.iter().filter(|_| true).skip(10) {
        assert!((x - v(&[1.0, 0.0])).amax() < 1e-12);
    }
}

#[test]
fn fixed_rho_oracle_matches_closed_form_qp() {
    let prog = box_qp([0.4, 2.5]);
    let trace = run_qp(&prog, &EngineConfig::default()).unwrap();
    for rho in [0.5, 1.0, 2.0] {
        let x = trace.point_at(rho).x;
        let oracle = fixed_rho_minimize(&prog, rho, None);
        assert!((oracle.solution - &x).amax() < 1e-6, "rho={rho}");
    }
}

#[test]
fn dykstra_needs_a_few_dozen_sweeps() {
    let rep = dykstra_project(&v(&[-1.0, 2.0]), &half_disk());
    assert!(rep.converged);
    assert!(rep.iterations < 200, "{} sweeps", rep.iterations);
}

#[test]
fn nnls_oracle_satisfies_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = DMatrix::from_fn(20, 10, |_, _| gaussian(&mut rng));
    let x = DVector::from_fn(20, |_, _| gaussian(&mut rng));
    let rep = nnls_reference(&a, &x);
    let grad = a.transpose() * (&a * &rep.solution - &x);
    for j in 0..10 {
        assert!(rep.solution[j] >= 0.0);
        if rep.solution[j] > 0.0 {
            assert!(grad[j].abs() < 1e-10);
        } else {
            assert!(grad[j] > -1e-10);
        }
    }
}

#[test]
fn nnls_event_count_tracks_negative_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let a = DMatrix::from_fn(100, 50, |_, _| gaussian(&mut rng));
    let x = DVector::from_fn(100, |_, _| gaussian(&mut rng));
    let prog = nnls_problem(&a, &x).unwrap();
    let negatives = prog.start().unwrap().iter().filter(|w| **w < 0.0).count();
    let trace = run_qp(&prog, &EngineConfig::default()).unwrap();
    let events = trace.transitions().count();
    println!("{negatives} negative starting coefficients, {events} events, {} segments", trace.num_segments());
    assert!(events >= negatives);
    assert!((&trace.final_point().x - nnls_reference(&a, &x).solution).amax() < 1e-8);
}

#[test]
fn qcqp_hit_points_lie_on_their_circles() {
    let prog = qcqp_lower(&QcqpProgram::<f64>::toy()).unwrap();
    let trace = run(&prog, &EngineConfig::default()).unwrap();
    let mut hits = 0;
    for e in trace.transitions() {
        if let EventKind::HitInequality(j) = e.kind {
            let h = prog.inequalities()[j].func.value(&e.point.x);
            assert!(h.abs() < 1e-9, "circle {j}: h = {h:e}");
            hits += 1;
        }
    }
    assert!(hits >= 2);
}

#[test]
fn random_qcqp_endpoints_pass_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..10 {
        let n = 3;
        let m = DMatrix::from_fn(n, n, |_, _| gaussian(&mut rng));
        let mut q = QcqpProgram {
            p0: m.transpose() * &m + DMatrix::identity(n, n),
            b0: DVector::from_fn(n, |_, _| 3.0 * gaussian(&mut rng)),
            c0: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
        };
        for _ in 0..3 {
            let r = DMatrix::from_fn(n, n, |_, _| gaussian(&mut rng));
            q.inequalities.push(QuadraticConstraint {
                p: r.transpose() * &r + DMatrix::identity(n, n) * 0.1,
                b: DVector::from_fn(n, |_, _| 0.3 * gaussian(&mut rng)),
                c: -rng.random_range(0.5..2.0),
            });
        }
        let prog = qcqp_lower(&q).unwrap();
        let trace = run(&prog, &EngineConfig::default()).unwrap();
        assert!(trace.is_stationary());
        let kkt = kkt_report(&prog, trace.final_point()).unwrap();
        assert!(kkt.max() <= 1e-6, "{kkt:?}");
    }
}

#[test]
fn random_log_posynomials_are_convex_with_exact_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..20 {
        let terms: Vec<(f64, Vec<f64>)> = (0..4)
            .map(|_| (rng.random_range(0.1..3.0), (0..3).map(|_| gaussian(&mut rng)).collect()))
            .collect();
        let refs: Vec<(f64, &[f64])> = terms.iter().map(|(c, a)| (*c, a.as_slice())).collect();
        let f = LogPosynomial::new(&Posynomial::<f64>::new(&refs));
        let y = DVector::from_fn(3, |_, _| gaussian(&mut rng));
        assert!(relative_eigen_floor(&f.hessian(&y)) > -1e-12);
        let err = penalty_path::model::finite_difference_errors("posy", &f, &y, 1e-5);
        assert!(err.gradient <= 1e-5 && err.hessian <= 1e-5, "{err:?}");
    }
}

#[test]
fn gp_endpoint_multipliers_recover() {
    let prog = gp_lower(&penalty_path::problems::PosynomialProgram::<f64>::toy()).unwrap();
    let trace = run(&prog, &EngineConfig::default()).unwrap();
    let end = trace.final_point();
    assert!(stationarity_residual(&prog, end).unwrap() <= 1e-6);
}

#[test]
fn sdp_endpoint_multipliers_recover() {
    let prog = sdp_surrogate(&SdpProgram::<f64>::toy()).unwrap();
    let trace = run(&prog, &EngineConfig::default()).unwrap();
    let end = trace.final_point();
    let (lam, om) = multiplier_recovery(&prog, &end.x, end.rho, &end.config).unwrap();
    let mut p = end.clone();
    p.lambda = lam;
    p.omega = om;
    assert!(stationarity_residual(&prog, &p).unwrap() <= 1e-6);
}

#[test]
fn sdp_with_psd_answer_stays_psd_in_the_tail() {
    // min x₁₁ + 2x₂₂ subject to x₁₁ = 1 and X ⪰ 0: the answer is diag(1, 0)
    let mut e11 = DMatrix::zeros(2, 2);
    e11[(0, 0)] = 1.0;
    let sdp = SdpProgram {
        c: DMatrix::from_diagonal(&v(&[1.0, 2.0])),
        constraints: vec![(e11, 1.0)],
        decay: 1.0,
    };
    let prog = sdp_surrogate(&sdp).unwrap();
    let trace = run(&prog, &EngineConfig::default()).unwrap();
    let x = duplicate(&trace.final_point().x);
    let answer = DMatrix::from_diagonal(&v(&[1.0, 0.0]));
    assert!((&x - answer).amax() < 1e-8, "{x}");
    let end = trace.final_point().rho;
    for k in 0..=10 {
        let p = trace.point_at(end * (1.0 + 0.1 * k as f64));
        let (info, _, _) = sdp_eig(&p.x).unwrap();
        assert!(info.min_eigenvalue() >= -1e-9, "{}", info.min_eigenvalue());
    }
}

