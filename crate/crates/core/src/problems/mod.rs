//! Adapters that lower application problems into [`ConvexProgram`] or
//! [`LassoForm`](crate::engine::LassoForm) shape.
//!
//! [`ConvexProgram`]: crate::model::ConvexProgram

mod denoise;
mod gp;
mod projection;
mod qcqp;
mod sdp;

pub use denoise::{denoise_build, denoise_reconstruct, DenoiseProblem};
pub use gp::{gp_lower, gp_to_x, gp_wellposed, gp_x_direction, LogPosynomial, Monomial, Posynomial, PosynomialProgram};
pub use projection::{nnls_problem, projection_problem, ConvexSet};
pub use qcqp::{qcqp_lower, QcqpProgram, QuadraticConstraint};
pub use sdp::{
    duplicate, half_vectorize, sdp_eig, sdp_surrogate, MinEigenvalue, SdpProgram, SpectralInfo,
};
