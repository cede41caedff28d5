//! Monte-Carlo falsification of a certificate: start on the boundary
//! `{V = 1}`, simulate the full (hybrid) dynamics and check that every
//! trajectory reaches the orbit.

use std::sync::Mutex;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyap::FeedbackGain;
use crate::ode::flow::{hybrid_flow, Feedback, FlowOptions, FlowSample};
use crate::ode::PeriodicOrbit;
use crate::sos::Certificate;
use crate::transverse::TransverseSystem;

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub samples: usize,
    /// Simulation horizon in orbit periods.
    pub periods: f64,
    pub dist_tol: f64,
    pub seed: u64,
    /// Allowed increase of `V` across an impact.
    pub v_tol: f64,
    /// Keep the trajectories of the first this-many samples.
    pub record: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { samples: 500, periods: 10.0, dist_tol: 1e-3, seed: 0, v_tol: 1e-6, record: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub seg: usize,
    pub tau: f64,
    pub x_perp: Vec<f64>,
    pub x0: Vec<f64>,
    pub final_distance: f64,
    pub converged: bool,
    pub impacts: usize,
    /// Largest `V+ - V-` over impacts that started inside `{V <= 1}`.
    pub max_impact_increase: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub converged: usize,
    pub fraction: f64,
    pub max_final_distance: f64,
    pub impacts_checked: usize,
    pub impact_violations: usize,
    pub outcomes: Vec<SampleOutcome>,
    #[serde(skip)]
    pub trajectories: Vec<Vec<FlowSample>>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.samples > 0 && self.converged == self.samples && self.impact_violations == 0
    }
}

/// Euclidean distance from `x` to the orbit curve of phase `phase`.
pub fn orbit_distance(orbit: &PeriodicOrbit, phase: usize, x: &[f64]) -> f64 {
    let d2 = |y: &[f64]| y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best = f64::INFINITY;
    for seg in orbit.segments().iter().filter(|s| s.phase == phase) {
        let (i, _) = seg.x.iter().enumerate().map(|(i, y)| (i, d2(y))).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let lo = seg.t[i.saturating_sub(1)];
        let hi = seg.t[(i + 1).min(seg.t.len() - 1)];
        // Golden-section refinement on the dense interpolant.
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if d2(&seg.state(c)) < d2(&seg.state(d)) {
                b = d;
            } else {
                a = c;
            }
        }
        best = best.min(d2(&seg.state(0.5 * (a + b)))).min(d2(&seg.x[i]));
    }
    best.sqrt()
}

/// Transverse LQR realized through the phase estimate:
/// `u = u*(tau) - K(tau) x_perp` with `(x_perp, tau)` from the projection.
pub struct ClosedLoop<'a> {
    sys: TransverseSystem<'a>,
    gain: &'a FeedbackGain,
    hint: Mutex<Option<(usize, f64)>>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(sys: TransverseSystem<'a>, gain: &'a FeedbackGain) -> Self {
        Self { sys, gain, hint: Mutex::new(None) }
    }

    fn locate(&self, x: &DVector<f64>) -> Result<(usize, f64)> {
        let hint = *self.hint.lock().expect("hint lock");
        let found = match hint {
            Some((s, t)) => self.sys.tau_project(x, s, t).or_else(|_| self.sys.tau_locate(x)),
            None => self.sys.tau_locate(x),
        }?;
        *self.hint.lock().expect("hint lock") = Some(found);
        Ok(found)
    }

    pub fn input(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xv = DVector::from_column_slice(x);
        let (seg, tau) = self.locate(&xv)?;
        let fr = self.sys.frame(seg, tau)?;
        let xp = &fr.pi * (&xv - &fr.x_star);
        let v = self.gain.k(seg, tau) * xp;
        Ok(fr.u_star.iter().zip(v.iter()).map(|(u, v)| u - v).collect())
    }
}

impl Feedback for ClosedLoop<'_> {
    fn control(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        // Outside the tube the nominal input is the only sensible fallback.
        self.input(x).unwrap_or_else(|_| {
            let mut u = self.sys.orbit.nominal_input();
            u.resize(self.sys.model.m(), 0.0);
            u
        })
    }
}

/// Deterministic samples `(seg, tau, x_perp)` with `V(x_perp, tau) = 1`.
pub fn boundary_samples(cert: &Certificate, sys: &TransverseSystem, count: usize, seed: u64) -> Result<Vec<(usize, f64, DVector<f64>)>> {
    let k = cert.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spans: Vec<(f64, f64)> = (0..sys.num_segments()).map(|s| sys.segment_span(s)).collect();
    let total: f64 = spans.iter().map(|(a, b)| b - a).sum();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Numerical("could not place samples on the level set".into()));
        }
        let mut r = rng.gen::<f64>() * total;
        let mut seg = 0;
        while seg + 1 < spans.len() && r > spans[seg].1 - spans[seg].0 {
            r -= spans[seg].1 - spans[seg].0;
            seg += 1;
        }
        let tau = spans[seg].0 + r;
        let mut d = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = d.norm();
        if n == 0.0 {
            continue;
        }
        d /= n;
        let v = |s: f64| cert.value_at(seg, tau, (&d * s).as_slice());
        // First crossing of V = 1 along the ray.
        let mut hi = cert.radius.max(1e-6);
        let mut lo = 0.0;
        let mut grown = 0;
        while v(hi) < 1.0 {
            lo = hi;
            hi *= 1.5;
            grown += 1;
            if grown > 200 {
                break;
            }
        }
        if !(v(hi) >= 1.0) {
            continue;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if v(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push((seg, tau, d * hi));
    }
    Ok(out)
}

fn v_perp(sys: &TransverseSystem, cert: &Certificate, seg: usize, tau: f64, x: &[f64]) -> Result<f64> {
    let fr = sys.frame(seg, tau)?;
    let xp = &fr.pi * (DVector::from_column_slice(x) - &fr.x_star);
    Ok(cert.value_at(seg, tau, xp.as_slice()))
}

/// Simulates from boundary samples of `cert`, in closed loop when `gain` is given.
pub fn validate(
    sys: &TransverseSystem,
    cert: &Certificate,
    gain: Option<&FeedbackGain>,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    if opts.samples == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    if cert.dim + 1 != sys.model.n() {
        return Err(Error::Dimension(format!("certificate of dimension {} for a model with n = {}", cert.dim, sys.model.n())));
    }
    if gain.is_some() && sys.model.m() == 0 {
        return Err(Error::NoInputs);
    }
    let starts = boundary_samples(cert, sys, opts.samples, opts.seed)?;
    let period = sys.orbit.period();
    let nseg = sys.num_segments();
    let results: Vec<(SampleOutcome, usize, usize, Option<Vec<FlowSample>>)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, (seg, tau, xp))| {
            let x0 = sys.from_transverse(xp, *seg, *tau).map(|v| v.as_slice().to_vec()).unwrap_or_default();
            let phase = sys.orbit.segments()[*seg].phase;
            let record = idx < opts.record;
            let fopts = FlowOptions { record, ..FlowOptions::default() };
            let cl = gain.map(|g| ClosedLoop::new(*sys, g));
            let fb: Option<&dyn Feedback> = cl.as_ref().map(|c| c as &dyn Feedback);
            let mut outcome = SampleOutcome {
                seg: *seg,
                tau: *tau,
                x_perp: xp.as_slice().to_vec(),
                x0: x0.clone(),
                final_distance: f64::NAN,
                converged: false,
                impacts: 0,
                max_impact_increase: None,
                error: None,
            };
            let (mut checked, mut violations) = (0, 0);
            match hybrid_flow(sys.model, phase, &x0, opts.periods * period, fb, &fopts) {
                Ok(flow) => {
                    outcome.final_distance = orbit_distance(sys.orbit, flow.phase, &flow.x);
                    outcome.converged = outcome.final_distance < opts.dist_tol;
                    outcome.impacts = flow.impacts.len();
                    for imp in &flow.impacts {
                        let pre_seg = (0..nseg).find(|&s| sys.orbit.segments()[s].phase == imp.phase).unwrap_or(0);
                        let post_seg = (pre_seg + 1) % nseg;
                        let tau_pre = sys.segment_span(pre_seg).1;
                        let tau_post = sys.segment_span(post_seg).0;
                        let (Ok(vm), Ok(vp)) =
                            (v_perp(sys, cert, pre_seg, tau_pre, &imp.x_pre), v_perp(sys, cert, post_seg, tau_post, &imp.x_post))
                        else {
                            continue;
                        };
                        if vm <= 1.0 {
                            checked += 1;
                            let inc = vp - vm;
                            outcome.max_impact_increase = Some(outcome.max_impact_increase.map_or(inc, |m: f64| m.max(inc)));
                            if inc > opts.v_tol {
                                violations += 1;
                            }
                        }
                    }
                    let traj = record.then_some(flow.samples);
                    (outcome, checked, violations, traj)
                }
                Err(e) => {
                    outcome.error = Some(e.to_string());
                    (outcome, checked, violations, None)
                }
            }
        })
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut trajectories = Vec::new();
    let (mut checked, mut violations) = (0, 0);
    for (o, c, v, t) in results {
        checked += c;
        violations += v;
        if let Some(t) = t {
            trajectories.push(t);
        }
        outcomes.push(o);
    }
    let converged = outcomes.iter().filter(|o| o.converged).count();
    let max_final_distance =
        outcomes.iter().map(|o| o.final_distance).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    Ok(ValidationReport {
        samples: outcomes.len(),
        converged,
        fraction: converged as f64 / outcomes.len() as f64,
        max_final_distance,
        impacts_checked: checked,
        impact_violations: violations,
        outcomes,
        trajectories,
    })
}
