//! Surface-normal optimization: maximize the tube in which the phase
//! dynamics are well posed.
//!
//! The cost is the shaped p-norm
//! `J(z) = ( (1/T) integral phi(tau) (|dz/dtau| / z'f)^p dtau )^(1/p)`, discretized
//! on the orbit knots with the trapezoid rule and the same finite-difference
//! stencil the surface family uses for `dz/dtau`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::stencil;
use crate::model::HybridModel;
use crate::ode::PeriodicOrbit;
use crate::transverse::{GridSegment, SurfaceFamily, SurfaceGrid};

/// `|x_perp^dagger| = |z'f| / |dz/dtau|`, the smallest transverse offset at
/// which the phase rate is singular. Infinite for locally constant `z`.
pub fn wellposed_radius(z: &DVector<f64>, dz: &DVector<f64>, f: &DVector<f64>) -> f64 {
    let d = dz.norm();
    if d <= 1e-14 {
        f64::INFINITY
    } else {
        z.dot(f).abs() / d
    }
}

/// Minimum of [`wellposed_radius`] over the knots of `family`.
pub fn min_wellposed_radius(model: &HybridModel, orbit: &PeriodicOrbit, family: &SurfaceFamily) -> f64 {
    let u = orbit.nominal_input();
    let mut r = f64::INFINITY;
    for (seg, fs) in orbit.segments().iter().zip(&family.segments) {
        for (i, x) in seg.x.iter().enumerate() {
            let f = DVector::from_vec(model.field(seg.phase, x, &u));
            let z = DVector::from_column_slice(&fs.z[i]);
            let dz = DVector::from_column_slice(&fs.dz[i]);
            r = r.min(wellposed_radius(&z, &dz, &f));
        }
    }
    r
}

/// Default shaping for hybrid orbits: `prod_i sin^2(pi (tau - tau_i) / T)`
/// over the impact phases, scaled to a maximum of one on the knots.
pub fn default_shaping(orbit: &PeriodicOrbit) -> Vec<Vec<f64>> {
    let period = orbit.period();
    let impacts: Vec<f64> = orbit.segments().iter().skip(1).map(|s| s.t[0]).chain([0.0]).collect();
    let mut phi: Vec<Vec<f64>> = orbit
        .segments()
        .iter()
        .map(|s| {
            s.t.iter()
                .map(|&t| {
                    if orbit.is_hybrid() {
                        impacts.iter().map(|&ti| (std::f64::consts::PI * (t - ti) / period).sin().powi(2)).product()
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    let max = phi.iter().flatten().copied().fold(0.0, f64::max);
    if max > 0.0 {
        phi.iter_mut().flatten().for_each(|v| *v /= max);
    }
    phi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOptOptions {
    /// Even exponent, at least 2.
    pub p: u32,
    /// Transversality floor; `None` keeps the family's own `delta`.
    pub delta: Option<f64>,
    pub max_iter: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub rel_tol: f64,
}

impl Default for SurfaceOptOptions {
    fn default() -> Self {
        Self { p: 50, delta: None, max_iter: 200, rel_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceOptResult {
    pub grid: SurfaceGrid,
    pub p: u32,
    pub cost_initial: f64,
    pub cost_final: f64,
    pub min_radius_initial: f64,
    pub min_radius_final: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Discretized problem on the flattened knot list.
pub struct SurfaceOptProblem {
    pub p: u32,
    pub delta: f64,
    /// `f(x*)` per knot.
    f: Vec<DVector<f64>>,
    /// Quadrature weight times shaping per knot.
    weight: Vec<f64>,
    /// Derivative stencil per knot as `(knot, weight)`.
    stencil: Vec<Vec<(usize, f64)>>,
    /// Knots held fixed.
    pinned: Vec<bool>,
    /// Knots that must equal another (periodic closure): `(copy, source)`.
    ties: Vec<(usize, usize)>,
    /// Segment boundaries in the flattened list.
    bounds: Vec<(usize, usize)>,
    phases: Vec<usize>,
    taus: Vec<f64>,
    pub z0: Vec<DVector<f64>>,
}

fn trapezoid(ts: &[f64]) -> Vec<f64> {
    let n = ts.len();
    (0..n)
        .map(|i| {
            let l = if i > 0 { ts[i] - ts[i - 1] } else { 0.0 };
            let r = if i + 1 < n { ts[i + 1] - ts[i] } else { 0.0 };
            0.5 * (l + r)
        })
        .collect()
}

impl SurfaceOptProblem {
    /// Builds the problem from an initial family on the orbit knots.
    pub fn new(model: &HybridModel, orbit: &PeriodicOrbit, init: &SurfaceFamily, opts: &SurfaceOptOptions) -> Result<Self> {
        if opts.p < 2 || !opts.p.is_multiple_of(2) {
            return Err(Error::Config(format!("exponent p must be an even integer >= 2, got {}", opts.p)));
        }
        if init.segments.len() != orbit.segments().len() {
            return Err(Error::Config("surface family does not match the orbit".into()));
        }
        let u = orbit.nominal_input();
        let phi = default_shaping(orbit);
        let hybrid = orbit.is_hybrid();
        let mut prob = SurfaceOptProblem {
            p: opts.p,
            delta: opts.delta.unwrap_or(init.delta),
            f: vec![],
            weight: vec![],
            stencil: vec![],
            pinned: vec![],
            ties: vec![],
            bounds: vec![],
            phases: vec![],
            taus: vec![],
            z0: vec![],
        };
        for (k, (seg, fs)) in orbit.segments().iter().zip(&init.segments).enumerate() {
            if fs.tau.len() != seg.t.len() {
                return Err(Error::Config(format!("surface segment {k} is not on the orbit knots")));
            }
            let off = prob.f.len();
            let n = seg.t.len();
            let q = trapezoid(&seg.t);
            let closed = (!hybrid).then(|| orbit.period());
            for (i, x) in seg.x.iter().enumerate() {
                prob.f.push(DVector::from_vec(model.field(seg.phase, x, &u)));
                prob.z0.push(DVector::from_column_slice(&fs.z[i]));
                prob.weight.push(q[i] * phi[k][i]);
                prob.stencil.push(stencil(&seg.t, i, closed).into_iter().map(|(j, w)| (off + j, w)).collect());
                prob.pinned.push(hybrid && (i == 0 || i + 1 == n));
            }
            prob.bounds.push((off, off + n));
            prob.phases.push(seg.phase);
            prob.taus.extend_from_slice(&seg.t);
        }
        let total = orbit.period();
        prob.weight.iter_mut().for_each(|w| *w /= total);
        if !hybrid {
            let last = prob.f.len() - 1;
            prob.ties.push((last, 0));
        }
        for (i, z) in prob.z0.iter().enumerate() {
            let zf = z.dot(&prob.f[i]);
            if !(zf > prob.delta) {
                return Err(Error::Transversality { tau: prob.taus[i], value: zf });
            }
        }
        Ok(prob)
    }

    /// Projected derivatives `dz/dtau` at every knot.
    pub fn derivatives(&self, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..z.len())
            .map(|i| {
                let d = self.raw_derivative(z, i);
                &d - &z[i] * z[i].dot(&d)
            })
            .collect()
    }

    fn raw_derivative(&self, z: &[DVector<f64>], i: usize) -> DVector<f64> {
        let mut d = DVector::zeros(z[i].len());
        for &(k, wk) in &self.stencil[i] {
            d += &z[k] * wk;
        }
        d
    }

    fn ratios(&self, z: &[DVector<f64>]) -> Vec<f64> {
        self.derivatives(z).iter().enumerate().map(|(i, g)| g.norm() / z[i].dot(&self.f[i])).collect()
    }

    /// Smallest well-posedness radius over the knots.
    pub fn min_radius(&self, z: &[DVector<f64>]) -> f64 {
        self.ratios(z).iter().map(|q| if *q > 0.0 { 1.0 / q } else { f64::INFINITY }).fold(f64::INFINITY, f64::min)
    }

    /// The discretized cost (zero for a locally constant `z`).
    pub fn cost(&self, z: &[DVector<f64>]) -> f64 {
        self.cost_and_gradient(z, false).0
    }

    /// Cost and its Euclidean gradient with respect to the knot normals.
    pub fn cost_and_gradient(&self, z: &[DVector<f64>], grad: bool) -> (f64, Vec<DVector<f64>>) {
        let p = self.p as i32;
        let n = z.len();
        let dim = z[0].len();
        let raw: Vec<DVector<f64>> = (0..n).map(|i| self.raw_derivative(z, i)).collect();
        let s: Vec<f64> = (0..n).map(|i| z[i].dot(&self.f[i])).collect();
        let g: Vec<DVector<f64>> = (0..n).map(|i| &raw[i] - &z[i] * z[i].dot(&raw[i])).collect();
        let q: Vec<f64> = (0..n).map(|i| g[i].norm() / s[i]).collect();
        // Scale by the largest weighted ratio so q^p stays finite.
        let m = (0..n).filter(|&i| self.weight[i] > 0.0).map(|i| q[i]).fold(0.0, f64::max);
        let mut gz = vec![DVector::zeros(dim); n];
        if m <= 0.0 {
            return (0.0, gz);
        }
        let sum: f64 = (0..n).map(|i| self.weight[i] * (q[i] / m).powi(p)).sum();
        let cost = m * sum.powf(1.0 / p as f64);
        if !grad || sum <= 0.0 {
            return (cost, gz);
        }
        // dJ/dq_i = w_i (q_i/m)^(p-1) sum^(1/p - 1).
        let outer = sum.powf(1.0 / p as f64 - 1.0);
        for i in 0..n {
            let gn = g[i].norm();
            if self.weight[i] == 0.0 || gn == 0.0 {
                continue;
            }
            let dq = self.weight[i] * (q[i] / m).powi(p - 1) * outer;
            // q = |g| / s.
            let a = &g[i] * (dq / (gn * s[i]));
            let ds = -dq * gn / (s[i] * s[i]);
            // g = d - z (z'd).
            let za = z[i].dot(&a);
            let dd = &a - &z[i] * za;
            for &(k, wk) in &self.stencil[i] {
                gz[k] += &dd * wk;
            }
            let zd = z[i].dot(&raw[i]);
            gz[i] += -(&a * zd) - &raw[i] * za + &self.f[i] * ds;
        }
        (cost, gz)
    }

    /// Tangent-space gradient with pinned knots zeroed and ties merged.
    fn projected(&self, z: &[DVector<f64>], mut gz: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
        for &(copy, src) in &self.ties {
            let c = gz[copy].clone();
            gz[src] += c;
        }
        for (i, g) in gz.iter_mut().enumerate() {
            if self.pinned[i] || self.ties.iter().any(|&(c, _)| c == i) {
                g.fill(0.0);
            } else {
                let zg = z[i].dot(g);
                *g -= &z[i] * zg;
            }
        }
        for &(copy, src) in &self.ties {
            gz[copy] = gz[src].clone();
        }
        gz
    }

    /// Gradient on the product of unit spheres, zero at pinned knots.
    pub fn projected_gradient(&self, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let (_, g) = self.cost_and_gradient(z, true);
        self.projected(z, g)
    }

    fn feasible(&self, z: &[DVector<f64>]) -> bool {
        z.iter().zip(&self.f).all(|(z, f)| z.dot(f) > self.delta)
    }

    /// Projected gradient with a monotone backtracking line search.
    pub fn optimize(&self, opts: &SurfaceOptOptions) -> SurfaceOptResult {
        let mut z = self.z0.clone();
        let (mut cost, g) = self.cost_and_gradient(&z, true);
        let mut g = self.projected(&z, g);
        let cost_initial = cost;
        let min_radius_initial = self.min_radius(&z);
        let mut history = vec![cost];
        let mut iterations = 0;
        // Step size in radians of rotation per knot.
        let mut step = 0.05;
        while iterations < opts.max_iter && cost > 0.0 {
            let gmax = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if gmax <= 1e-14 * cost.max(1.0) {
                break;
            }
            let mut accepted = None;
            let mut alpha = step / gmax;
            for _ in 0..40 {
                let trial: Vec<DVector<f64>> = z
                    .iter()
                    .zip(&g)
                    .map(|(zi, gi)| {
                        let v = zi - gi * alpha;
                        let r = v.norm();
                        v / r
                    })
                    .collect();
                if self.feasible(&trial) {
                    let c = self.cost(&trial);
                    if c < cost {
                        accepted = Some((trial, c));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((trial, c)) = accepted else { break };
            iterations += 1;
            let gain = (cost - c) / cost;
            step = (alpha * gmax * 2.0).min(0.2);
            z = trial;
            cost = c;
            history.push(cost);
            let (_, ng) = self.cost_and_gradient(&z, true);
            g = self.projected(&z, ng);
            if gain < opts.rel_tol {
                break;
            }
        }
        SurfaceOptResult {
            grid: self.grid(&z),
            p: self.p,
            cost_initial,
            cost_final: cost,
            min_radius_initial,
            min_radius_final: self.min_radius(&z),
            iterations,
            history,
        }
    }

    /// Knot normals in the [`SurfaceGrid`] layout.
    pub fn grid(&self, z: &[DVector<f64>]) -> SurfaceGrid {
        SurfaceGrid {
            segments: self
                .bounds
                .iter()
                .zip(&self.phases)
                .map(|(&(a, b), &phase)| GridSegment {
                    phase,
                    tau: self.taus[a..b].to_vec(),
                    z: z[a..b].iter().map(|v| v.as_slice().to_vec()).collect(),
                })
                .collect(),
        }
    }
}

/// Optimizes the normals of `init` along `orbit`.
pub fn optimize_z(model: &HybridModel, orbit: &PeriodicOrbit, init: &SurfaceFamily, opts: &SurfaceOptOptions) -> Result<SurfaceOptResult> {
    let prob = SurfaceOptProblem::new(model, orbit, init, opts)?;
    Ok(prob.optimize(opts))
}
