//! V-step: with multipliers fixed, maximize the certified ball radius over
//! the sampled `V` coefficients (one joint SDP), then re-center.

use super::conditions::{
    build_dv, decrease_target, norm2, positive_target, premature_target, slope_expr, times_var, wellposed_target, Condition, StepReport,
};
use super::expr::{LinExpr, PolyExpr};
use super::problem::{scale_vars, VerificationProblem};
use super::program::SosProgram;
use crate::error::{Error, Result};
use crate::poly::{monomial_basis, Monomial};
use crate::Poly;

/// Monomials of an even `V` vanishing at the origin: even degrees in `2..=vdeg`.
pub fn v_monomials(k: usize, vdeg: u32) -> Vec<Monomial> {
    monomial_basis(k, vdeg, 2).into_iter().filter(|m| m.degree() % 2 == 0).collect()
}

fn fixed(rep: &StepReport, s: f64, i: usize, c: Condition, name: &str) -> Result<PolyExpr> {
    rep.multiplier(i, c, name)
        .map(|p| PolyExpr::from_poly(&scale_vars(p, s)))
        .ok_or_else(|| Error::Numerical(format!("missing multiplier {name} at sample {i}")))
}

fn fixed_impact(rep: &StepReport, s: f64, i: usize, c: Condition, name: &str) -> Result<PolyExpr> {
    rep.impact_multiplier(i, c, name)
        .map(|p| PolyExpr::from_poly(&scale_vars(p, s)))
        .ok_or_else(|| Error::Numerical(format!("missing multiplier {name} at impact {i}")))
}

/// `vp` is already in scaled coordinates `y = x / s`; multipliers in `rep`
/// are in the original ones.
fn build(vp: &VerificationProblem, rep: &StepReport, s: f64, vdeg: u32, q_cap: Option<f64>) -> Result<(SosProgram, Vec<PolyExpr>, usize)> {
    let k = vp.k;
    let mg = vp.margins;
    let margin = q_cap.is_some();
    let mut prog = SosProgram::new(k);
    let monos = v_monomials(k, vdeg);
    let vs: Vec<PolyExpr> = vp.samples.iter().map(|_| prog.free_poly(&monos)).collect();
    let q = prog.free();
    for (i, sample) in vp.samples.iter().enumerate() {
        let v = &vs[i];
        prog.require_sos("positive", &positive_target(v, mg.positive), margin)?;
        let dv = build_dv(sample, v, &slope_expr(sample, &vs, k), mg.decrease);
        let l = fixed(rep, s, i, Condition::Decrease, "l")?;
        prog.require_sos("decrease", &decrease_target(&dv, v, &l), margin)?;
        let m = fixed(rep, s, i, Condition::Wellposed, "m")?;
        prog.require_sos("wellposed", &wellposed_target(&sample.dynamics.den, mg.wellposed, v, &m), margin)?;
        let s_hat = rep
            .multiplier(i, Condition::Containment, "s_hat")
            .map(|p| scale_vars(p, s))
            .ok_or_else(|| Error::Numerical(format!("missing containment multiplier at sample {i}")))?;
        let ball = PolyExpr::from_poly(&Poly::one(k).sub(&s_hat)?).sub(v).add(&times_var(&s_hat.mul(&norm2(k))?, q));
        prog.require_sos("containment", &ball, margin)?;
        if let Some((lin, guard)) = &sample.switching {
            let m_s = fixed(rep, s, i, Condition::Premature, "m_s")?;
            let l_s = prog.free_poly(&monomial_basis(k, vdeg + 1, 0));
            prog.require_sos("premature", &premature_target(lin, guard, mg.wellposed, &l_s, &m_s, v), margin)?;
        }
    }
    for (j, imp) in vp.impacts.iter().enumerate() {
        let m = fixed_impact(rep, s, j, Condition::Jump, "m")?;
        let t = super::conditions::jump_target(&vs[imp.pre], &vs[imp.post], &imp.update, &m);
        prog.require_sos("jump", &t, margin)?;
        let mg_ = fixed_impact(rep, s, j, Condition::Guard, "m")?;
        let t = super::conditions::guard_target(&imp.guard, mg.wellposed, &vs[imp.pre], &mg_);
        prog.require_sos("guard", &t, margin)?;
    }
    match q_cap {
        Some(cap) => prog.add_le(LinExpr::var(q, 1.0), cap),
        None => prog.minimize(LinExpr::var(q, 1.0)),
    }
    Ok((prog, vs, q))
}

#[derive(Debug, Clone)]
pub struct VStep {
    pub values: Vec<Poly>,
    /// Radius certified by the joint SDP with the fixed multipliers.
    pub radius: f64,
    pub centered: bool,
    pub sdps: usize,
}

/// One V-step from the multipliers in `rep` (which must include the
/// containment multipliers). `r_prev` is the current certified radius.
pub fn v_step(vp: &VerificationProblem, rep: &StepReport, vdeg: u32, r_prev: f64) -> Result<VStep> {
    // Common length scale: geometric mean of the per-sample radii.
    let logs: Vec<f64> = rep.samples.iter().map(|x| x.radius).filter(|r| r.is_finite() && *r > 0.0).map(f64::ln).collect();
    let s = if logs.is_empty() { 1.0 } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
    let vy = vp.scaled(s);
    let back = |sol: &super::program::SosSolution, vs: &[PolyExpr]| -> Vec<Poly> {
        vs.iter().map(|v| scale_vars(&sol.poly(v), 1.0 / s)).collect()
    };
    let (prog, vs, q) = build(&vy, rep, s, vdeg, None)?;
    let sol = prog.solve();
    if sol.status != crate::sdp::SdpStatus::Optimal {
        return Err(Error::Numerical(format!("V-step SDP: {:?}", sol.status)));
    }
    let q_star = sol.values[q];
    if !(q_star > 0.0) {
        return Err(Error::Numerical(format!("V-step ball parameter {q_star}")));
    }
    let r_star = s / q_star.sqrt();
    let plain = VStep { values: back(&sol, &vs), radius: r_star, centered: false, sdps: 1 };
    // Re-center: keep 90% of the radius gain, maximize the Gram margins.
    let r_c = r_prev + 0.9 * (r_star - r_prev).max(0.0);
    let (prog, vs, _) = build(&vy, rep, s, vdeg, Some((s / r_c).powi(2)))?;
    let sol = prog.solve();
    if sol.feasible {
        Ok(VStep { values: back(&sol, &vs), radius: r_c, centered: true, sdps: 2 })
    } else {
        Ok(VStep { sdps: 2, ..plain })
    }
}
