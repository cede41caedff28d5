use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("zero normal vector in {0}")]
    ZeroNormal(String),
    #[error("unsupported atom: {0}")]
    UnsupportedAtom(String),
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },
    #[error("too many impacts ({0}); probable Zeno behaviour or modelling error")]
    TooManyImpacts(usize),
    #[error("shooting diverged: {0}")]
    ShootingDiverged(String),
    #[error("singular jacobian: {0}")]
    SingularJacobian(String),
    #[error("grazing impact: {0}")]
    Grazing(String),
    #[error("antipodal basis seed: w = -z")]
    AntipodalSeed,
    #[error("no admissible basis seed after {0} draws")]
    SeedRejection(usize),
    #[error("transversality violation at tau={tau}: z'f={value}")]
    Transversality { tau: f64, value: f64 },
    #[error("alignment violation at impact {impact}")]
    Alignment { impact: usize },
    #[error("tau projection did not converge (state outside the well-posed tube)")]
    ProjectionFailed,
    #[error("coordinate breakdown: tau-dot denominator {0} <= 0")]
    Breakdown(f64),
    #[error("transverse linearization unstable (spectral radius {0})")]
    Unstable(f64),
    #[error("periodic Riccati sweep did not converge: {0}")]
    RiccatiDivergence(String),
    #[error("verifier fails at minimum level {0}")]
    LevelInfeasible(f64),
    #[error("odd-degree polynomial cannot be a sum of squares (degree {0})")]
    OddDegree(u32),
    #[error("sdp numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model has no control inputs")]
    NoInputs,
}

pub type Result<T> = std::result::Result<T, Error>;
