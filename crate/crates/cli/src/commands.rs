use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DVector;

use penalty_path::engine::{kkt_report, run, run_qp, run_regularization, LassoForm};
use penalty_path::problems::{
    denoise_build, duplicate, gp_lower, gp_to_x, nnls_problem, projection_problem, qcqp_lower, sdp_surrogate,
    DenoiseProblem,
};
use penalty_path::{EngineConfig, EventKind, Mode, Point, Program, Trace};

use crate::pgm::{Encoding, Graymap};
use crate::problem::{blur_operator, matrix, Kind, ProblemFile};
use crate::trace::{polylines, real, write_polylines, write_trace, Extra, TraceTable};

/// Engine settings given on the command line; unset fields fall back to the
/// problem file, then to the engine defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub rho_cap: Option<f64>,
    pub segments: Option<usize>,
    pub rho_min: Option<f64>,
    pub tol_stat: Option<f64>,
    pub mode: Option<Mode>,
}

impl Overrides {
    fn config(&self, file: Option<&ProblemFile>, mode: Mode) -> EngineConfig {
        let stored = file.map(|f| f.engine()).unwrap_or_default();
        let mut c = match mode {
            Mode::Constrained => EngineConfig::default(),
            Mode::Regularization => EngineConfig::regularization(),
        };
        if let Some(v) = self.rho_cap.or(stored.rho_cap) {
            c.rho_cap = v;
        }
        if let Some(v) = self.segments.or(stored.segments) {
            c.segment_cap = v;
        }
        if let Some(v) = self.rho_min.or(stored.rho_min) {
            c.rho_min = v;
        }
        if let Some(v) = self.tol_stat.or(stored.tol_stat) {
            c.tol_stat = v;
        }
        c
    }
}

/// Text to print and the process exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: String,
    pub exit_code: i32,
}

/// 0 when the path ends where it should, 2 when a cap stopped it. Reaching
/// `rho_min` is the normal end of a regularization path.
pub fn exit_code(trace: &Trace) -> i32 {
    match trace.termination.kind {
        EventKind::Stationary => 0,
        EventKind::RhoCapReached if trace.mode == Mode::Regularization => 0,
        _ => 2,
    }
}

enum Lowered {
    Program(Program),
    Denoise(DenoiseProblem<f64>),
}

fn load_image(path: &Path, blur: Option<&crate::problem::Rows>) -> Result<(DenoiseProblem<f64>, Graymap)> {
    let img = Graymap::read(path)?;
    let (m, n) = (img.height, img.width);
    let w = DVector::from_vec(img.to_unit_columns());
    let blur = blur
        .map(|k| blur_operator(&matrix("denoise.blur", k)?, m, n))
        .transpose()?;
    let problem = denoise_build(m, n, &w, blur)?;
    Ok((problem, img))
}

fn lower(file: &ProblemFile, base: &Path) -> Result<Lowered> {
    let prog = match file.kind {
        Kind::Qp => file.qp.as_ref().unwrap().lower()?,
        Kind::Qcqp => qcqp_lower(&file.qcqp.as_ref().unwrap().program()?)?,
        Kind::Gp => gp_lower(&file.gp.as_ref().unwrap().program()?)?,
        Kind::Sdp => sdp_surrogate(&file.sdp.as_ref().unwrap().program()?)?,
        Kind::Projection => {
            let (b, sets) = file.projection.as_ref().unwrap().sets()?;
            projection_problem(&b, &sets)
        }
        Kind::Nnls => {
            let s = file.nnls.as_ref().unwrap();
            nnls_problem(&matrix("nnls.v", &s.v)?, &crate::problem::vector("nnls.x", &s.x)?)?
        }
        Kind::Denoise => {
            let s = file.denoise.as_ref().unwrap();
            let (p, _) = load_image(&base.join(&s.image), s.blur.as_ref())?;
            return Ok(Lowered::Denoise(p));
        }
    };
    Ok(Lowered::Program(prog))
}

/// Worst violation of the lasso optimality conditions at `x`.
pub fn lasso_residual<L: LassoForm<f64>>(problem: &L, x: &DVector<f64>, rho: f64) -> f64 {
    let g = problem.gradient(x);
    (0..problem.dim()).fold(0.0, |worst, j| {
        let r = if !problem.is_penalized(j) {
            g[j].abs()
        } else if x[j] != 0.0 {
            (g[j] + rho * x[j].signum()).abs()
        } else {
            (g[j].abs() - rho).max(0.0)
        };
        worst.max(r)
    })
}

fn nu_1(p: &Point) -> f64 {
    duplicate(&p.x).symmetric_eigenvalues().min()
}

fn vector_line(v: &DVector<f64>) -> String {
    v.iter().map(|x| real(*x)).collect::<Vec<_>>().join(" ")
}

fn summary(kind: Kind, trace: &Trace, residual: f64) -> String {
    let end = trace.final_point();
    let mut s = String::new();
    let _ = writeln!(s, "kind          {kind}");
    let _ = writeln!(s, "mode          {}", trace.mode);
    let _ = writeln!(s, "termination   {}", trace.termination.kind);
    if let Some(r) = trace.rho_max {
        let _ = writeln!(s, "rho max       {}", real(r));
    }
    let _ = writeln!(s, "final rho     {}", real(end.rho));
    let _ = writeln!(s, "segments      {}", trace.num_segments());
    let _ = writeln!(s, "events        {}", trace.transitions().count());
    let _ = writeln!(s, "evaluations   {}", trace.derivative_evaluations);
    let _ = writeln!(s, "time points   {}", trace.time_points);
    let _ = writeln!(s, "kkt residual  {}", real(residual));
    let _ = writeln!(s, "final point   {}", vector_line(&end.x));
    match kind {
        Kind::Gp => {
            let _ = writeln!(s, "x = exp(y)    {}", vector_line(&gp_to_x(&end.x)));
        }
        Kind::Sdp => {
            let x = duplicate(&end.x);
            for (i, r) in x.row_iter().enumerate() {
                let _ = writeln!(s, "X row {:<7}{}", i + 1, vector_line(&r.transpose()));
            }
            let _ = writeln!(s, "nu_1          {}", real(nu_1(end)));
        }
        _ => {}
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Integrate the path ODE even when the closed form applies.
    pub integrate: bool,
    pub overrides: Overrides,
}

/// Runs the path for one problem file.
pub fn solve(problem: &Path, opts: &SolveOptions) -> Result<Outcome> {
    let file = ProblemFile::load(problem)?;
    let base = problem.parent().unwrap_or(Path::new("."));
    let mode = opts.overrides.mode.unwrap_or_else(|| file.default_mode());
    if mode != file.default_mode() {
        bail!("kind = \"{}\" runs in {} mode, not {mode}", file.kind, file.default_mode());
    }
    let config = opts.overrides.config(Some(&file), mode);
    let (trace, csv, residual) = match lower(&file, base)? {
        Lowered::Program(prog) => {
            let trace = if prog.is_qp() && !opts.integrate {
                run_qp(&prog, &config)?
            } else {
                run(&prog, &config)?
            };
            let nu = Extra {
                name: "nu_1",
                value: &nu_1,
            };
            let extras: &[Extra] = if file.kind == Kind::Sdp { std::slice::from_ref(&nu) } else { &[] };
            let csv = write_trace(&trace, extras);
            let residual = kkt_report(&prog, trace.final_point())?.max();
            (trace, csv, residual)
        }
        Lowered::Denoise(p) => {
            let trace = run_regularization(&p, &config)?;
            let end = trace.final_point();
            let residual = lasso_residual(&p, &end.x, end.rho);
            let csv = write_trace(&trace, &[]);
            (trace, csv, residual)
        }
    };
    let report = summary(file.kind, &trace, residual);
    if let Some(path) = &opts.trace {
        std::fs::write(path, &csv).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &opts.summary {
        std::fs::write(path, &report).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(Outcome {
        exit_code: exit_code(&trace),
        report,
    })
}

#[derive(Debug, Clone, Default)]
pub struct DenoiseOptions {
    pub out_dir: PathBuf,
    /// Snapshot positions as fractions of `ρ_max`.
    pub snapshots: Vec<f64>,
    pub trace: Option<PathBuf>,
    pub overrides: Overrides,
}

pub fn denoise(image: &Path, opts: &DenoiseOptions) -> Result<Outcome> {
    if let Some(s) = opts.snapshots.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        bail!("--snapshots: {s} is not a fraction of rho_max in [0, 1]");
    }
    if matches!(opts.overrides.mode, Some(Mode::Constrained)) {
        bail!("denoising runs in regularization mode");
    }
    let (problem, img) = load_image(image, None)?;
    let encoding = if std::fs::read(image)?.starts_with(b"P2") {
        Encoding::Plain
    } else {
        Encoding::Raw
    };
    let config = opts.overrides.config(None, Mode::Regularization);
    let trace = run_regularization(&problem, &config)?;
    let rho_max = trace.rho_max.unwrap_or(0.0);
    std::fs::create_dir_all(&opts.out_dir).with_context(|| format!("cannot create {}", opts.out_dir.display()))?;

    let mut report = String::new();
    let end = trace.final_point();
    let _ = writeln!(report, "image         {}x{} maxval {}", img.width, img.height, img.maxval);
    let _ = writeln!(report, "termination   {}", trace.termination.kind);
    let _ = writeln!(report, "rho max       {}", real(rho_max));
    let _ = writeln!(report, "final rho     {}", real(end.rho));
    let _ = writeln!(report, "segments      {}", trace.num_segments());
    let _ = writeln!(report, "kkt residual  {}", real(lasso_residual(&problem, &end.x, end.rho)));

    let mut schedule = String::from("segment,rho_start,rho_end,events\n");
    for (k, seg) in trace.segments.iter().enumerate() {
        let _ = writeln!(schedule, "{},{},{},{}", k + 1, real(seg.rho_start), real(seg.rho_end), seg.events.len());
    }
    let schedule_path = opts.out_dir.join("schedule.csv");
    std::fs::write(&schedule_path, schedule).with_context(|| format!("cannot write {}", schedule_path.display()))?;

    for (k, frac) in opts.snapshots.iter().enumerate() {
        let rho = frac * rho_max;
        let x = trace.point_at(rho).x;
        let u = problem.to_image(&x);
        let snap = Graymap::from_unit_columns(img.width, img.height, img.maxval, u.as_slice());
        let path = opts.out_dir.join(format!("snapshot_{:02}.pgm", k + 1));
        snap.write(&path, encoding)?;
        let _ = writeln!(
            report,
            "snapshot {:<4} rho {} objective {} -> {}",
            k + 1,
            real(rho),
            real(problem.objective(&x, rho)),
            path.display()
        );
    }
    if let Some(path) = &opts.trace {
        std::fs::write(path, write_trace(&trace, &[])).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(Outcome {
        exit_code: exit_code(&trace),
        report,
    })
}

pub fn plot_data(trace: &Path, output: Option<&Path>) -> Result<Outcome> {
    let text = std::fs::read_to_string(trace).with_context(|| format!("cannot read {}", trace.display()))?;
    let table = TraceTable::parse(&text).with_context(|| format!("in {}", trace.display()))?;
    let csv = write_polylines(&polylines(&table));
    let report = match output {
        Some(path) => {
            std::fs::write(path, &csv).with_context(|| format!("cannot write {}", path.display()))?;
            String::new()
        }
        None => csv,
    };
    Ok(Outcome { report, exit_code: 0 })
}
