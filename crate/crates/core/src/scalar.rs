use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// Real scalar usable as a polynomial coefficient or ODE state entry.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Serialize + DeserializeOwned + Send + Sync + 'static
{
    /// Coefficients below this magnitude are dropped after arithmetic.
    fn prune_threshold() -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }
}

impl Scalar for f64 {
    fn prune_threshold() -> Self {
        1e-14
    }
}

impl Scalar for f32 {
    fn prune_threshold() -> Self {
        // 1e-14 is far below f32 resolution for O(1) data; keep the same absolute cut.
        1e-14
    }
}
