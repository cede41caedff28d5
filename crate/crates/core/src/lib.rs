//! Certified inner estimates of regions of orbital stability for limit
//! cycles of (hybrid) polynomial systems.
//!
//! The pipeline: refine a periodic orbit ([`ode`]), build moving transversal
//! surfaces and the transverse dynamics ([`transverse`]), seed a quadratic
//! Lyapunov function from the periodic Lyapunov/Riccati equations ([`lyap`]),
//! and grow the certified region with sum-of-squares programs ([`sos`]).

// `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod error;
pub mod linalg;
pub mod lyap;
pub mod model;
pub mod ode;
pub mod poly;
pub mod scalar;
pub mod sdp;
pub mod sos;
pub mod surfopt;
pub mod transverse;
pub mod validate;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision polynomial, the coefficient type used throughout the pipeline.
pub type Poly = poly::Polynomial<f64>;
/// Double-precision polynomial map.
pub type PolyVec = poly::PolynomialVector<f64>;
/// Single-precision polynomial.
pub type Poly32 = poly::Polynomial<f32>;
