//! Sum-of-squares certification of regional orbital stability.

mod alternate;
mod certificate;
mod conditions;
mod expr;
mod problem;
mod program;
mod vstep;

pub use alternate::{alternate, certify, seed_level, AlternationOptions};
pub use certificate::{CertImpact, CertSample, Certificate, SolverStats};
pub use conditions::{
    build_dv, check_containment, check_decrease, check_jump, check_wellposed, containment_target, decrease_multiplier_degree,
    decrease_target, guard_target, jump_target, multiplier_step, positive_target, premature_target, radius_upper_bound, slope_expr,
    wellposed_target, Checked, Condition, ConditionStatus, ImpactReport, SampleReport, StepReport,
};
pub use expr::{LinExpr, PolyExpr};
pub use problem::{quadratic_poly, ImpactSpec, Margins, SampleOptions, SampleSpec, VerificationProblem};
pub use program::{assemble_sos, check_sos, SosConstraint, SosProgram, SosSolution, MARGIN_TOL};
pub use vstep::{v_monomials, v_step, VStep};
