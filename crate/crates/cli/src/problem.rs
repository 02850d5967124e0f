//! Problem files: a TOML document with a `kind` key and one matching section.
//!
//! ```toml
//! kind = "projection"
//!
//! [projection]
//! b = [-1.0, 2.0]
//! balls = [{ center = [0.0, 0.0], radius = 1.0 }]
//! halfspaces = [{ a = [-1.0, 0.0], b = 0.0 }]
//! ```

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use penalty_path::problems::{
    ConvexSet, Monomial, Posynomial, PosynomialProgram, QcqpProgram, QuadraticConstraint, SdpProgram,
};
use penalty_path::{Affine, ConvexProgram, Mode, Quadratic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Qp,
    Qcqp,
    Gp,
    Sdp,
    Projection,
    Nnls,
    Denoise,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Qp => "qp",
            Kind::Qcqp => "qcqp",
            Kind::Gp => "gp",
            Kind::Sdp => "sdp",
            Kind::Projection => "projection",
            Kind::Nnls => "nnls",
            Kind::Denoise => "denoise",
        };
        f.write_str(s)
    }
}

/// Dense matrices are written row by row.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearEquality {
    pub a: Vec<f64>,
    pub d: f64,
}

/// `wᵗx ≤ e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearInequality {
    pub w: Vec<f64>,
    pub e: f64,
}

/// `½xᵗPx + qᵗx + c` subject to linear constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpSection {
    pub p: Rows,
    pub q: Vec<f64>,
    #[serde(default)]
    pub c: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equalities: Vec<LinearEquality>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inequalities: Vec<LinearInequality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

/// `½xᵗPx + bᵗx + c ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticInequality {
    pub p: Rows,
    pub b: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcqpSection {
    pub p0: Rows,
    pub b0: Vec<f64>,
    #[serde(default)]
    pub c0: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equalities: Vec<LinearEquality>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inequalities: Vec<QuadraticInequality>,
}

/// `c · Π x_i^{a_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosynomialSpec {
    pub terms: Vec<Term>,
}

/// Posynomial objective, constraints `h_j(x) ≤ 1`, monomial equalities `g_i(x) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    pub dim: usize,
    pub objective: PosynomialSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<PosynomialSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equalities: Vec<Term>,
}

/// `tr(A X) = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConstraint {
    pub a: Rows,
    pub b: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdpSection {
    pub c: Rows,
    #[serde(default)]
    pub constraints: Vec<TraceConstraint>,
    #[serde(default = "one")]
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// `aᵗx ≤ b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Balls come before half-spaces in constraint numbering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSection {
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub balls: Vec<Ball>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub halfspaces: Vec<HalfSpace>,
}

/// `min ½‖x − Vw‖²` over `w ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnlsSection {
    pub v: Rows,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSection {
    /// Graymap path, relative to the problem file.
    pub image: String,
    /// Odd-sized convolution kernel with zero padding at the border.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur: Option<Rows>,
}

/// Engine settings stored with the problem; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_stat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp: Option<QpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qcqp: Option<QcqpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdp: Option<SdpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnls: Option<NnlsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoise: Option<DenoiseSection>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(text).map_err(|e| anyhow!("{}", e.to_string().trim_end()))?;
        let present: Vec<Kind> = [
            (Kind::Qp, file.qp.is_some()),
            (Kind::Qcqp, file.qcqp.is_some()),
            (Kind::Gp, file.gp.is_some()),
            (Kind::Sdp, file.sdp.is_some()),
            (Kind::Projection, file.projection.is_some()),
            (Kind::Nnls, file.nnls.is_some()),
            (Kind::Denoise, file.denoise.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.then_some(k))
        .collect();
        if !present.contains(&file.kind) {
            bail!("missing section `[{}]` for kind = \"{}\"", file.kind, file.kind);
        }
        if let Some(other) = present.iter().find(|k| **k != file.kind) {
            bail!("section `[{other}]` does not match kind = \"{}\"", file.kind);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn engine(&self) -> EngineSection {
        self.engine.clone().unwrap_or_default()
    }

    pub fn default_mode(&self) -> Mode {
        if self.kind == Kind::Denoise {
            Mode::Regularization
        } else {
            Mode::Constrained
        }
    }
}

pub(crate) fn vector(field: &str, v: &[f64]) -> Result<DVector<f64>> {
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        bail!("{field}: entry {} is not finite", k + 1);
    }
    Ok(DVector::from_column_slice(v))
}

fn sized(field: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    if v.len() != n {
        bail!("{field}: expected {n} entries, found {}", v.len());
    }
    vector(field, v)
}

pub(crate) fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let Some(first) = rows.first() else {
        bail!("{field}: matrix has no rows");
    };
    let cols = first.len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            bail!("{field}: row {} has {} entries, expected {cols}", i + 1, r.len());
        }
        if let Some(k) = r.iter().position(|x| !x.is_finite()) {
            bail!("{field}: entry ({}, {}) is not finite", i + 1, k + 1);
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn square(field: &str, rows: &Rows, n: usize) -> Result<DMatrix<f64>> {
    let m = matrix(field, rows)?;
    if m.shape() != (n, n) {
        bail!("{field}: expected a {n}x{n} matrix, found {}x{}", m.nrows(), m.ncols());
    }
    Ok(m)
}

impl QpSection {
    pub fn lower(&self) -> Result<ConvexProgram<f64>> {
        let n = self.q.len();
        let p = square("qp.p", &self.p, n)?;
        let q = vector("qp.q", &self.q)?;
        let mut prog = ConvexProgram::new(n, std::sync::Arc::new(Quadratic::new(p, q, self.c)));
        for (i, e) in self.equalities.iter().enumerate() {
            prog = prog.with_equality(sized(&format!("qp.equalities[{}].a", i + 1), &e.a, n)?, e.d);
        }
        for (j, h) in self.inequalities.iter().enumerate() {
            let w = sized(&format!("qp.inequalities[{}].w", j + 1), &h.w, n)?;
            prog = prog.with_inequality(format!("c{}", j + 1), std::sync::Arc::new(Affine { w, e: h.e }));
        }
        if let Some(s) = &self.start {
            prog = prog.with_start(sized("qp.start", s, n)?);
        }
        Ok(prog)
    }
}

impl QcqpSection {
    pub fn program(&self) -> Result<QcqpProgram<f64>> {
        let n = self.b0.len();
        let mut q = QcqpProgram {
            p0: square("qcqp.p0", &self.p0, n)?,
            b0: vector("qcqp.b0", &self.b0)?,
            c0: self.c0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
        };
        for (i, e) in self.equalities.iter().enumerate() {
            q.equalities.push((sized(&format!("qcqp.equalities[{}].a", i + 1), &e.a, n)?, e.d));
        }
        for (j, h) in self.inequalities.iter().enumerate() {
            let field = format!("qcqp.inequalities[{}]", j + 1);
            q.inequalities.push(QuadraticConstraint {
                p: square(&format!("{field}.p"), &h.p, n)?,
                b: sized(&format!("{field}.b"), &h.b, n)?,
                c: h.c,
            });
        }
        Ok(q)
    }
}

fn monomial(field: &str, t: &Term, n: usize) -> Result<Monomial<f64>> {
    Ok(Monomial {
        coefficient: t.c,
        exponents: sized(&format!("{field}.a"), &t.a, n)?,
    })
}

fn posynomial(field: &str, p: &PosynomialSpec, n: usize) -> Result<Posynomial<f64>> {
    let terms = p
        .terms
        .iter()
        .enumerate()
        .map(|(k, t)| monomial(&format!("{field}.terms[{}]", k + 1), t, n))
        .collect::<Result<_>>()?;
    Ok(Posynomial { terms })
}

impl GpSection {
    pub fn program(&self) -> Result<PosynomialProgram<f64>> {
        let n = self.dim;
        Ok(PosynomialProgram {
            dim: n,
            objective: posynomial("gp.objective", &self.objective, n)?,
            constraints: self
                .constraints
                .iter()
                .enumerate()
                .map(|(j, p)| posynomial(&format!("gp.constraints[{}]", j + 1), p, n))
                .collect::<Result<_>>()?,
            equalities: self
                .equalities
                .iter()
                .enumerate()
                .map(|(i, t)| monomial(&format!("gp.equalities[{}]", i + 1), t, n))
                .collect::<Result<_>>()?,
        })
    }
}

impl SdpSection {
    pub fn program(&self) -> Result<SdpProgram<f64>> {
        let c = matrix("sdp.c", &self.c)?;
        let n = c.nrows();
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, k)| Ok((square(&format!("sdp.constraints[{}].a", i + 1), &k.a, n)?, k.b)))
            .collect::<Result<_>>()?;
        Ok(SdpProgram {
            c,
            constraints,
            decay: self.decay,
        })
    }
}

impl ProjectionSection {
    pub fn sets(&self) -> Result<(DVector<f64>, Vec<ConvexSet<f64>>)> {
        let n = self.b.len();
        let b = vector("projection.b", &self.b)?;
        let mut sets = Vec::new();
        for (k, s) in self.balls.iter().enumerate() {
            if !(s.radius > 0.0) {
                bail!("projection.balls[{}].radius: must be positive", k + 1);
            }
            sets.push(ConvexSet::Ball {
                center: sized(&format!("projection.balls[{}].center", k + 1), &s.center, n)?,
                radius: s.radius,
            });
        }
        for (k, s) in self.halfspaces.iter().enumerate() {
            sets.push(ConvexSet::HalfSpace {
                a: sized(&format!("projection.halfspaces[{}].a", k + 1), &s.a, n)?,
                b: s.b,
            });
        }
        Ok((b, sets))
    }
}

/// Full `p × p` operator of a zero-padded 2-D convolution on an `m × n`
/// image stacked column by column.
pub fn blur_operator(kernel: &DMatrix<f64>, m: usize, n: usize) -> Result<DMatrix<f64>> {
    let (kr, kc) = kernel.shape();
    if kr % 2 == 0 || kc % 2 == 0 {
        bail!("denoise.blur: kernel dimensions must be odd, found {kr}x{kc}");
    }
    let (hr, hc) = ((kr / 2) as isize, (kc / 2) as isize);
    let p = m * n;
    let mut k = DMatrix::zeros(p, p);
    for c in 0..n {
        for r in 0..m {
            for dc in -hc..=hc {
                for dr in -hr..=hr {
                    let (sr, sc) = (r as isize + dr, c as isize + dc);
                    if sr < 0 || sc < 0 || sr >= m as isize || sc >= n as isize {
                        continue;
                    }
                    let w = kernel[((dr + hr) as usize, (dc + hc) as usize)];
                    k[(r + c * m, sr as usize + sc as usize * m)] += w;
                }
            }
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HALF_DISK: &str = r#"
kind = "projection"

[projection]
b = [-1.0, 2.0]
balls = [{ center = [0.0, 0.0], radius = 1.0 }]
halfspaces = [{ a = [-1.0, 0.0], b = 0.0 }]
"#;

    #[test]
    fn parses_projection() {
        let p = ProblemFile::parse(HALF_DISK).unwrap();
        assert_eq!(p.kind, Kind::Projection);
        let (b, sets) = p.projection.unwrap().sets().unwrap();
        assert_eq!(b.as_slice(), &[-1.0, 2.0]);
        assert_eq!(sets.len(), 2);
    }

    #[test]
    fn round_trip() {
        let p = ProblemFile::parse(HALF_DISK).unwrap();
        let again = ProblemFile::parse(&p.to_toml().unwrap()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn missing_field_is_named() {
        let err = ProblemFile::parse("kind = \"qcqp\"\n[qcqp]\np0 = [[1.0]]\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("b0"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn wrong_type_names_field_and_line() {
        let text = "kind = \"nnls\"\n[nnls]\nv = [[1.0]]\nx = \"oops\"\n";
        let msg = format!("{:#}", ProblemFile::parse(text).unwrap_err());
        assert!(msg.contains("line 4") && msg.contains('x'), "{msg}");
    }

    #[test]
    fn section_must_match_kind() {
        let msg = format!("{:#}", ProblemFile::parse("kind = \"qp\"\n[nnls]\nv = [[1.0]]\nx = [1.0]\n").unwrap_err());
        assert!(msg.contains("[qp]"), "{msg}");
        let msg = format!("{:#}", ProblemFile::parse("kind = \"lp\"\n").unwrap_err());
        assert!(msg.contains("kind"), "{msg}");
    }

    #[test]
    fn ragged_matrix_names_row() {
        let err = matrix("qp.p", &vec![vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert_eq!(err.to_string(), "qp.p: row 2 has 1 entries, expected 2");
    }

    #[test]
    fn identity_kernel_gives_identity() {
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(blur_operator(&k, 3, 2).unwrap(), DMatrix::identity(6, 6));
    }

    #[test]
    fn kernel_shift_respects_stacking() {
        // picks the pixel one row below
        let k = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        let op = blur_operator(&k, 2, 2).unwrap();
        let u = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((op * u).as_slice(), &[2.0, 0.0, 4.0, 0.0]);
    }
}
