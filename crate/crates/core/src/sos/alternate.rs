//! Level seeding and the multiplier-step / V-step alternation.

use super::certificate::Certificate;
use super::conditions::multiplier_step;
use super::problem::VerificationProblem;
use super::vstep::v_step;
use crate::error::{Error, Result};
use crate::lyap::{bisect_level, PeriodicQuadratic};
use crate::Poly;

#[derive(Debug, Clone, Copy)]
pub struct AlternationOptions {
    /// Degree of `V` (2 or 4).
    pub vdeg: u32,
    pub max_iter: usize,
    /// Stop when the relative radius gain falls below this.
    pub rel_tol: f64,
}

impl Default for AlternationOptions {
    fn default() -> Self {
        Self { vdeg: 4, max_iter: 10, rel_tol: 1e-3 }
    }
}

/// Largest `rho` (within 1%) such that `x'P x / rho` passes every condition.
pub fn seed_level(vp: &VerificationProblem, pq: &PeriodicQuadratic, rho_min: f64, rho_max: f64) -> Result<f64> {
    bisect_level(|rho| multiplier_step(vp, &vp.quadratic_values(pq, rho), None).all_pass(), rho_min, rho_max)
}

/// Alternates V-steps and multiplier steps from a seed that already passes.
pub fn alternate(vp: &VerificationProblem, seed: Vec<Poly>, opts: &AlternationOptions) -> Result<Certificate> {
    if !(opts.vdeg == 2 || opts.vdeg == 4) {
        return Err(Error::Config(format!("V degree must be 2 or 4, got {}", opts.vdeg)));
    }
    let mut vs = seed;
    let mut rep = multiplier_step(vp, &vs, Some(opts.vdeg));
    if !rep.all_pass() {
        let (_, f) = rep.counts();
        return Err(Error::Infeasible(format!("seed certificate fails {f} conditions")));
    }
    let mut r = rep.radius;
    let mut history = vec![r];
    let mut sdps = rep.sdps();
    let mut failures = rep.numerical_failures();
    let mut vsteps = 0;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let step = match v_step(vp, &rep, opts.vdeg, r) {
            Ok(s) => s,
            Err(_) => {
                failures += 1;
                break;
            }
        };
        vsteps += 1;
        sdps += step.sdps;
        let mut cand = step.values;
        let mut cand_rep = multiplier_step(vp, &cand, Some(opts.vdeg));
        sdps += cand_rep.sdps();
        failures += cand_rep.numerical_failures();
        if !(cand_rep.all_pass() && cand_rep.radius > r) {
            // Shrink towards the accepted iterate once.
            cand = vs.iter().zip(&cand).map(|(a, b)| a.scale(0.5).add(&b.scale(0.5)).expect("same arity")).collect();
            cand_rep = multiplier_step(vp, &cand, Some(opts.vdeg));
            sdps += cand_rep.sdps();
            failures += cand_rep.numerical_failures();
            if !(cand_rep.all_pass() && cand_rep.radius > r) {
                break;
            }
        }
        let gain = (cand_rep.radius - r) / r;
        vs = cand;
        rep = cand_rep;
        r = rep.radius;
        history.push(r);
        if gain < opts.rel_tol {
            break;
        }
    }
    let mut cert = Certificate::assemble(vp, &vs, &rep, vp.period, vp.hybrid);
    cert.iterations = iterations;
    cert.history = history;
    cert.stats.sdps = sdps;
    cert.stats.numerical_failures = failures;
    cert.stats.vsteps = vsteps;
    Ok(cert)
}

/// Seeds from a periodic quadratic, then alternates.
pub fn certify(vp: &VerificationProblem, pq: &PeriodicQuadratic, rho_bounds: (f64, f64), opts: &AlternationOptions) -> Result<Certificate> {
    let rho = seed_level(vp, pq, rho_bounds.0, rho_bounds.1)?;
    let mut cert = alternate(vp, vp.quadratic_values(pq, rho), opts)?;
    cert.seed_rho = rho;
    Ok(cert)
}
