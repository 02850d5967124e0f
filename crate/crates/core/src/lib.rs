//! Exact-penalty solution-path following for convex programs.
//!
//! A constrained convex program `min f(x)` subject to affine equalities
//! `g_i(x) = 0` and smooth convex inequalities `h_j(x) ≤ 0` is replaced by the
//! penalized surrogate
//!
//! ```text
//! E_ρ(x) = f(x) + ρ Σ |g_i(x)| + ρ Σ max{0, h_j(x)}.
//! ```
//!
//! Its minimizer `x(ρ)` moves continuously from the unconstrained minimum at
//! `ρ = 0` to the constrained optimum, which is reached at a finite `ρ`. The
//! [`engine`] follows that path segment by segment by integrating an ODE for
//! `(x, λ, ω)` and switching active sets at hitting and escape events. Run in
//! the decreasing direction, the same machinery traces lasso-type
//! regularization paths such as anisotropic total-variation denoising.
//!
//! Everything is generic over the [`Scalar`] type (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod engine;
pub mod error;
pub mod kkt;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod penalty;
pub mod problems;
mod scalar;

pub use engine::{EngineConfig, EventKind, EventRecord, Mode, PathTrace, Segment};
pub use error::{ConstraintRef, PathError, Result};
pub use model::{Affine, AffineEquality, Amendment, ConvexProgram, Inequality, Quadratic, SmoothFn};
pub use penalty::{PathPoint, SetConfiguration, Side};
pub use scalar::Scalar;

pub type Program = ConvexProgram<f64>;
pub type Point = PathPoint<f64>;
pub type Trace = PathTrace<f64>;
