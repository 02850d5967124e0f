use std::fmt;

use thiserror::Error;

/// Identifies one constraint of a program: equality `g_i` or inequality `h_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
}

impl fmt::Display for ConstraintRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintRef::Equality(i) => write!(f, "g{}", i + 1),
            ConstraintRef::Inequality(j) => write!(f, "h{}", j + 1),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("oracle `{function}` returned a non-finite value")]
    Domain { function: String },
    #[error("active constraint matrix is rank deficient over {rows:?}")]
    RankDeficient { rows: Vec<ConstraintRef> },
    #[error("bordered KKT matrix is singular")]
    SingularKkt,
    #[error("reduced Hessian on the active null space is singular")]
    SingularReducedHessian,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("initialization failed: {0}")]
    InitFailure(String),
    #[error("objective is not coercive; use an amended surrogate (as the SDP adapter does) or supply a start point")]
    NotCoercive,
    #[error("integrator step size underflow at rho = {rho}")]
    Stall { rho: f64 },
    #[error("minimum eigenvalue is not simple (gap {gap:e})")]
    Multiplicity { gap: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

pub type Result<T, E = PathError> = std::result::Result<T, E>;
