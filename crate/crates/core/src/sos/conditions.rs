//! Certification conditions as SoS targets, and the multiplier step
//! (all conditions checked with `V` fixed, one SDP per condition).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expr::{LinExpr, PolyExpr};
use super::problem::{scale_vars, ImpactSpec, SampleSpec, VerificationProblem};
use super::program::{SosProgram, SosSolution};
use crate::poly::Monomial;
use crate::sdp::SdpStatus;
use crate::Poly;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Positive,
    Decrease,
    Wellposed,
    Containment,
    Premature,
    Jump,
    Guard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionStatus {
    Pass,
    Fail,
    Numerical,
}

impl ConditionStatus {
    fn of(sol: &SosSolution) -> Self {
        if sol.feasible {
            ConditionStatus::Pass
        } else if matches!(sol.status, SdpStatus::NumericalFailure | SdpStatus::IterationLimit) {
            ConditionStatus::Numerical
        } else {
            ConditionStatus::Fail
        }
    }
}

pub(crate) fn norm2(k: usize) -> Poly {
    let mut p = Poly::zero(k);
    for j in 0..k {
        let mut e = vec![0; k];
        e[j] = 2;
        p.add_term(Monomial::new(e), 1.0);
    }
    p
}

fn one_minus(v: &PolyExpr) -> PolyExpr {
    PolyExpr::from_poly(&Poly::one(v.nvars())).sub(v)
}

fn round_even(d: i64) -> u32 {
    let d = d.max(0) as u32;
    d + d % 2
}

/// `dV/dtau` from the interpolation weights.
pub fn slope_expr(sample: &SampleSpec, vs: &[PolyExpr], k: usize) -> PolyExpr {
    let mut out = PolyExpr::zero(k);
    for &(j, w) in &sample.slope {
        out.add_scaled(&vs[j], w);
    }
    out
}

/// `DV = dV/dtau n + dV/dx_perp (d x_perp') + d delta |x_perp|^2`.
pub fn build_dv(sample: &SampleSpec, v: &PolyExpr, slope: &PolyExpr, decrease: f64) -> PolyExpr {
    let k = v.nvars();
    let dy = &sample.dynamics;
    let mut out = slope.mul_poly(&dy.num);
    for j in 0..k {
        out = out.add(&v.differentiate(j).mul_poly(dy.den_xdot.component(j)));
    }
    let pad = dy.den.mul(&norm2(k)).expect("same arity").scale(decrease);
    out.add(&PolyExpr::from_poly(&pad))
}

pub fn decrease_target(dv: &PolyExpr, v: &PolyExpr, l: &PolyExpr) -> PolyExpr {
    dv.scale(-1.0).sub(&l.mul(&one_minus(v)))
}

pub fn wellposed_target(den: &Poly, wellposed: f64, v: &PolyExpr, m: &PolyExpr) -> PolyExpr {
    let d = den.sub(&Poly::constant(den.nvars(), wellposed)).expect("same arity");
    PolyExpr::from_poly(&d).sub(&m.mul(&one_minus(v)))
}

pub fn positive_target(v: &PolyExpr, positive: f64) -> PolyExpr {
    v.sub(&PolyExpr::from_poly(&norm2(v.nvars()).scale(positive)))
}

/// `1 - V - s (r^2 - |x|^2)`.
pub fn containment_target(v: &PolyExpr, s: &PolyExpr, r2: f64) -> PolyExpr {
    let k = v.nvars();
    let ball = Poly::constant(k, r2).sub(&norm2(k)).expect("same arity");
    one_minus(v).sub(&s.mul_poly(&ball))
}

/// `-((c'x - d) l_s + g) - delta - m_s (1 - V)`.
pub fn premature_target(lin: &Poly, guard: &Poly, wellposed: f64, l_s: &PolyExpr, m_s: &PolyExpr, v: &PolyExpr) -> PolyExpr {
    let fixed = guard.add(&Poly::constant(guard.nvars(), wellposed)).expect("same arity").neg();
    PolyExpr::from_poly(&fixed).sub(&l_s.mul_poly(lin)).sub(&m_s.mul(&one_minus(v)))
}

/// `V-(x) - V+(U(x)) - m (1 - V-(x))`.
pub fn jump_target(v_pre: &PolyExpr, v_post: &PolyExpr, update: &[Poly], m: &PolyExpr) -> PolyExpr {
    let k = v_pre.nvars();
    v_pre.sub(&v_post.compose(update, k)).sub(&m.mul(&one_minus(v_pre)))
}

pub fn guard_target(guard: &Poly, wellposed: f64, v_pre: &PolyExpr, m: &PolyExpr) -> PolyExpr {
    let g = guard.sub(&Poly::constant(guard.nvars(), wellposed)).expect("same arity");
    PolyExpr::from_poly(&g).sub(&m.mul(&one_minus(v_pre)))
}

/// Multiplier degree for the decrease condition: `deg DV - deg V` rounded up to even.
pub fn decrease_multiplier_degree(dv_degree: u32, v_degree: u32) -> u32 {
    round_even(dv_degree as i64 - v_degree as i64).max(2)
}

fn jump_multiplier_degree(v_degree: u32, update: &[Poly]) -> u32 {
    let du = update.iter().map(Poly::degree).max().unwrap_or(1).max(1);
    round_even((v_degree * du) as i64 - v_degree as i64).max(2)
}

/// Scale of a fixed polynomial used to normalize targets.
fn scale_of(p: &PolyExpr) -> f64 {
    p.terms().map(|(_, e)| e.constant.abs()).fold(0.0, f64::max).max(1e-300)
}

/// Outcome of one condition in the multiplier step.
#[derive(Debug, Clone)]
pub struct Checked {
    pub status: ConditionStatus,
    pub margin: f64,
    pub multipliers: BTreeMap<String, Poly>,
    pub sdps: usize,
}

impl Checked {
    fn from(sol: &SosSolution, multipliers: BTreeMap<String, Poly>) -> Self {
        Self { status: ConditionStatus::of(sol), margin: sol.margin.unwrap_or(f64::NAN), multipliers, sdps: 1 }
    }
}

fn solve_with(prog: SosProgram, mults: &[(&str, PolyExpr, f64)]) -> Checked {
    let sol = prog.solve();
    let mut out = BTreeMap::new();
    if sol.feasible {
        for (name, e, s) in mults {
            out.insert(name.to_string(), sol.poly(e).scale(*s));
        }
    }
    Checked::from(&sol, out)
}

pub fn check_positive(v: &Poly, positive: f64) -> Checked {
    let mut prog = SosProgram::new(v.nvars());
    let t = positive_target(&PolyExpr::from_poly(v), positive);
    if prog.require_sos("positive", &t, true).is_err() {
        return failed();
    }
    solve_with(prog, &[])
}

fn failed() -> Checked {
    Checked { status: ConditionStatus::Fail, margin: f64::NAN, multipliers: BTreeMap::new(), sdps: 0 }
}

pub fn check_decrease(sample: &SampleSpec, vs: &[Poly], i: usize, decrease: f64) -> Checked {
    let k = vs[i].nvars();
    let mut slope = Poly::zero(k);
    for &(j, w) in &sample.slope {
        slope = slope.add(&vs[j].scale(w)).expect("same arity");
    }
    let v = PolyExpr::from_poly(&vs[i]);
    let dv = build_dv(sample, &v, &PolyExpr::from_poly(&slope), decrease);
    let s = scale_of(&dv);
    let mut prog = SosProgram::new(k);
    let dl = decrease_multiplier_degree(dv.degree(), vs[i].degree());
    let l = prog.sos_poly(2, dl);
    let target = decrease_target(&dv.scale(1.0 / s), &v, &l);
    if prog.require_sos("decrease", &target, true).is_err() {
        return failed();
    }
    solve_with(prog, &[("l", l, s)])
}

pub fn check_wellposed(sample: &SampleSpec, v: &Poly, wellposed: f64) -> Checked {
    let k = v.nvars();
    let den = &sample.dynamics.den;
    let s = den.max_abs_coeff().max(1e-300);
    let mut prog = SosProgram::new(k);
    let m = prog.sos_poly(0, 2);
    let target = wellposed_target(&den.scale(1.0 / s), wellposed / s, &PolyExpr::from_poly(v), &m);
    if prog.require_sos("wellposed", &target, true).is_err() {
        return failed();
    }
    solve_with(prog, &[("m", m, s)])
}

pub fn check_premature(lin: &Poly, guard: &Poly, v: &Poly, wellposed: f64) -> Checked {
    let k = v.nvars();
    let s = guard.max_abs_coeff().max(lin.max_abs_coeff()).max(1e-300);
    let mut prog = SosProgram::new(k);
    let dl = v.degree() + 1;
    let monos = crate::poly::monomial_basis(k, dl, 0);
    let l_s = prog.free_poly(&monos);
    let m_s = prog.sos_poly(0, 2);
    let target = premature_target(&lin.scale(1.0 / s), &guard.scale(1.0 / s), wellposed / s, &l_s, &m_s, &PolyExpr::from_poly(v));
    if prog.require_sos("premature", &target, true).is_err() {
        return failed();
    }
    solve_with(prog, &[("l_s", l_s, 1.0), ("m_s", m_s, s)])
}

pub fn check_jump(imp: &ImpactSpec, v_pre: &Poly, v_post: &Poly) -> Checked {
    let k = v_pre.nvars();
    let pre = PolyExpr::from_poly(v_pre);
    let post = PolyExpr::from_poly(v_post);
    let mut prog = SosProgram::new(k);
    let m = prog.sos_poly(2, jump_multiplier_degree(v_pre.degree(), &imp.update));
    let target = jump_target(&pre, &post, &imp.update, &m);
    if prog.require_sos("jump", &target, true).is_err() {
        return failed();
    }
    solve_with(prog, &[("m", m, 1.0)])
}

pub fn check_guard(imp: &ImpactSpec, v_pre: &Poly, wellposed: f64) -> Checked {
    let k = v_pre.nvars();
    let s = imp.guard.max_abs_coeff().max(1e-300);
    let mut prog = SosProgram::new(k);
    let m = prog.sos_poly(0, 2);
    let target = guard_target(&imp.guard.scale(1.0 / s), wellposed / s, &PolyExpr::from_poly(v_pre), &m);
    if prog.require_sos("guard", &target, true).is_err() {
        return failed();
    }
    solve_with(prog, &[("m", m, s)])
}

/// Upper bound on the radius of the largest ball inside `{V <= 1}`, from
/// ray searches along sampled directions.
pub fn radius_upper_bound(v: &Poly) -> f64 {
    let k = v.nvars();
    let dirs: Vec<Vec<f64>> = match k {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..128)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / 64.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..256)
                .map(|_| {
                    let d: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    d.iter().map(|x| x / n).collect()
                })
                .collect()
        }
    };
    let mut best = f64::INFINITY;
    for d in dirs {
        let at = |r: f64| v.eval(&d.iter().map(|x| x * r).collect::<Vec<_>>());
        let mut hi = 1e-3;
        while at(hi) < 1.0 && hi < 1e6 {
            hi *= 1.5;
        }
        if hi >= 1e6 {
            continue;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(hi);
    }
    best
}

/// Largest certified ball `{|x| <= r} ⊆ {V <= 1}`, by bisection on `r`,
/// with a multiplier sized for `V` of degree `vdeg`.
/// Returns the radius and `s_hat = s r^2`.
pub fn check_containment(v: &Poly, vdeg: u32) -> (Checked, f64) {
    let k = v.nvars();
    let ub = radius_upper_bound(v).min(1e6);
    let vd = v.degree().max(vdeg).max(2);
    let attempt = |r: f64| -> (SosSolution, PolyExpr) {
        let mut prog = SosProgram::new(k);
        let s = prog.sos_poly(0, vd - 2);
        let target = containment_target(&PolyExpr::from_poly(v), &s, r * r);
        prog.require_sos("containment", &target, true).expect("even degree");
        (prog.solve(), s)
    };
    let mut sdps = 0;
    let mut best: Option<(f64, Poly)> = None;
    let (sol, s) = attempt(ub);
    sdps += 1;
    if sol.feasible {
        best = Some((ub, sol.poly(&s)));
    } else {
        let (mut lo, mut hi) = (0.0, ub);
        while hi - lo > 1e-4 * hi {
            let mid = 0.5 * (lo + hi);
            let (sol, s) = attempt(mid);
            sdps += 1;
            if sol.feasible {
                lo = mid;
                best = Some((mid, sol.poly(&s)));
            } else {
                hi = mid;
            }
        }
    }
    match best {
        Some((r, s)) => {
            let mut mults = BTreeMap::new();
            mults.insert("s_hat".to_string(), s.scale(r * r));
            (Checked { status: ConditionStatus::Pass, margin: 0.0, multipliers: mults, sdps }, r)
        }
        None => (Checked { status: ConditionStatus::Fail, margin: f64::NAN, multipliers: BTreeMap::new(), sdps }, 0.0),
    }
}

#[derive(Debug, Clone)]
pub struct SampleReport {
    pub checks: BTreeMap<Condition, Checked>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct ImpactReport {
    pub checks: BTreeMap<Condition, Checked>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub samples: Vec<SampleReport>,
    pub impacts: Vec<ImpactReport>,
    pub radius: f64,
}

impl StepReport {
    fn all_checks(&self) -> impl Iterator<Item = &Checked> {
        self.samples.iter().flat_map(|s| s.checks.values()).chain(self.impacts.iter().flat_map(|s| s.checks.values()))
    }

    pub fn all_pass(&self) -> bool {
        self.all_checks().all(|c| c.status == ConditionStatus::Pass)
    }

    pub fn counts(&self) -> (usize, usize) {
        let pass = self.all_checks().filter(|c| c.status == ConditionStatus::Pass).count();
        (pass, self.all_checks().count() - pass)
    }

    pub fn sdps(&self) -> usize {
        self.all_checks().map(|c| c.sdps).sum()
    }

    pub fn numerical_failures(&self) -> usize {
        self.all_checks().filter(|c| c.status == ConditionStatus::Numerical).count()
    }

    pub fn multiplier(&self, sample: usize, cond: Condition, name: &str) -> Option<&Poly> {
        self.samples[sample].checks.get(&cond)?.multipliers.get(name)
    }

    pub fn impact_multiplier(&self, impact: usize, cond: Condition, name: &str) -> Option<&Poly> {
        self.impacts[impact].checks.get(&cond)?.multipliers.get(name)
    }
}

/// Natural length scale of `{V <= 1}`, used to normalize coordinates.
fn region_scale(v: &Poly) -> f64 {
    let ub = radius_upper_bound(v);
    if ub.is_finite() {
        ub.clamp(1e-8, 1e8)
    } else {
        1.0
    }
}

fn unscale(mut c: Checked, s: f64) -> Checked {
    for p in c.multipliers.values_mut() {
        *p = scale_vars(p, 1.0 / s);
    }
    c
}

/// Checks every condition for fixed `V` values at the samples. With
/// `containment = Some(vdeg)` the ball search runs with a multiplier sized
/// for `V` of degree `vdeg`; `None` skips it (level bisection).
///
/// Each check runs in coordinates scaled by the size of its sublevel set;
/// multipliers and radii are reported in the original coordinates.
pub fn multiplier_step(vp: &VerificationProblem, vs: &[Poly], containment: Option<u32>) -> StepReport {
    let k = vp.k;
    let scales: Vec<f64> = vs.par_iter().map(region_scale).collect();
    let local = |i: usize, s: f64| -> Vec<Poly> {
        let mut out = vec![Poly::zero(k); vs.len()];
        out[i] = scale_vars(&vs[i], s);
        for &(j, _) in &vp.samples[i].slope {
            out[j] = scale_vars(&vs[j], s);
        }
        out
    };
    let samples: Vec<SampleReport> = vp
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let s = scales[i];
            let mg = vp.margins.scaled(s);
            let sample = sample.scaled(s);
            let ys = local(i, s);
            let v = &ys[i];
            let mut checks = BTreeMap::new();
            checks.insert(Condition::Positive, check_positive(v, mg.positive));
            checks.insert(Condition::Decrease, unscale(check_decrease(&sample, &ys, i, mg.decrease), s));
            checks.insert(Condition::Wellposed, unscale(check_wellposed(&sample, v, mg.wellposed), s));
            if let Some((lin, guard)) = &sample.switching {
                checks.insert(Condition::Premature, unscale(check_premature(lin, guard, v, mg.wellposed), s));
            }
            let mut radius = f64::NAN;
            if let Some(vdeg) = containment {
                let (c, r) = check_containment(v, vdeg);
                checks.insert(Condition::Containment, unscale(c, s));
                radius = r * s;
            }
            SampleReport { checks, radius }
        })
        .collect();
    let impacts: Vec<ImpactReport> = vp
        .impacts
        .par_iter()
        .map(|imp| {
            let s = scales[imp.pre];
            let wellposed = vp.margins.wellposed;
            let imp_s = imp.scaled(s);
            let pre = scale_vars(&vs[imp.pre], s);
            let post = scale_vars(&vs[imp.post], s);
            let mut checks = BTreeMap::new();
            checks.insert(Condition::Jump, unscale(check_jump(&imp_s, &pre, &post), s));
            checks.insert(Condition::Guard, unscale(check_guard(&imp_s, &pre, wellposed), s));
            ImpactReport { checks }
        })
        .collect();
    let radius = if containment.is_some() { samples.iter().map(|s| s.radius).fold(f64::INFINITY, f64::min) } else { f64::NAN };
    StepReport { samples, impacts, radius }
}

/// `p * q` as an expression in a decision variable `q`.
pub(crate) fn times_var(p: &Poly, var: usize) -> PolyExpr {
    let mut out = PolyExpr::zero(p.nvars());
    for (m, &c) in p.terms() {
        out.add_term(m.clone(), &LinExpr::var(var, c), 1.0);
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sos::problem::Margins;
    use crate::transverse::TransverseSample;
    use crate::PolyVec;

    /// `x' = -x + x^2` sampled at `n` points of a unit period.
    pub(crate) fn scalar_fixture(n: usize, delta: f64) -> VerificationProblem {
        let x = Poly::var(1, 0);
        let f = x.pow(2).sub(&x).unwrap();
        let dynamics = (0..n)
            .map(|i| TransverseSample {
                tau: i as f64 / n as f64,
                num: Poly::one(1),
                den: Poly::one(1),
                den_xdot: PolyVec::new(1, vec![f.clone()]).unwrap(),
            })
            .collect();
        VerificationProblem::from_dynamics(1, dynamics, 1.0, Margins::uniform(delta))
    }

    #[test]
    fn scalar_fixture_levels() {
        let vp = scalar_fixture(4, 1e-4);
        let x2 = Poly::var(1, 0).pow(2);
        let at = |rho: f64| vec![x2.scale(1.0 / rho); 4];
        let rep = multiplier_step(&vp, &at(0.81), Some(2));
        assert!(rep.all_pass(), "{:?}", rep.samples[0].checks);
        assert!((rep.radius - 0.9).abs() < 1e-3, "{}", rep.radius);
        let rep = multiplier_step(&vp, &at(1.21), None);
        assert!(!rep.all_pass());
        assert_eq!(rep.samples[0].checks[&Condition::Decrease].status, ConditionStatus::Fail);
    }

    #[test]
    fn dv_hand_expansion() {
        let vp = scalar_fixture(4, 0.0);
        let p = 2.5;
        let x = Poly::var(1, 0);
        let v = PolyExpr::from_poly(&x.pow(2).scale(p));
        let dv = build_dv(&vp.samples[0], &v, &PolyExpr::zero(1), 0.01).to_fixed().unwrap();
        // 2 p x (-x + x^2) + 0.01 x^2
        let want = x.pow(3).scale(2.0 * p).add(&x.pow(2).scale(-2.0 * p + 0.01)).unwrap();
        assert!(dv.sub(&want).unwrap().max_abs_coeff() < 1e-14);
        assert_eq!(dv.eval(&[0.0]), 0.0);
    }

    #[test]
    fn jump_condition_scalar() {
        let x = Poly::var(1, 0);
        for (a, ok) in [(0.7, true), (1.0, true), (1.2, false)] {
            let imp = ImpactSpec { index: 0, pre: 0, post: 1, update: vec![x.scale(a)], guard: Poly::one(1) };
            let v = x.pow(2).scale(3.0);
            let c = check_jump(&imp, &v, &v);
            assert_eq!(c.status == ConditionStatus::Pass, ok, "a={a} margin={}", c.margin);
        }
    }

    #[test]
    fn wellposed_with_constant_denominator() {
        let vp = scalar_fixture(2, 1e-3);
        let v = Poly::var(1, 0).pow(2);
        let c = check_wellposed(&vp.samples[0], &v, 1e-3);
        assert_eq!(c.status, ConditionStatus::Pass);
    }
}
