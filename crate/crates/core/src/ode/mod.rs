//! Integration of hybrid flows, periodic orbits and their monodromy.

pub mod flow;
pub mod monodromy;
pub mod orbit;
pub mod rk;

pub use flow::{hybrid_flow, integrate, write_trajectory_csv, Feedback, FlowOptions, FlowResult, FlowSample, HybridFlow, ImpactRecord};
pub use monodromy::{floquet, monodromy, saltation};
pub use orbit::{find_orbit, OrbitGuess, OrbitSegment, PeriodicOrbit, ShootingOptions, Side};
pub use rk::Tolerances;
