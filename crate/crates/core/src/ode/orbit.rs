use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::flow::{run_with_events, EventSpec, FlowOptions, ImpactRecord};
use super::monodromy::{flow_with_sensitivity, saltation};
use super::rk::{hermite, hermite_derivative, Tolerances};
use crate::error::{Error, Result};
use crate::model::{dot, HybridModel};

/// Knots of the orbit in one phase, with the field value at each knot for
/// cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSegment {
    pub phase: usize,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

impl OrbitSegment {
    pub fn span(&self) -> (f64, f64) {
        (self.t[0], *self.t.last().unwrap())
    }

    fn interval(&self, t: f64) -> usize {
        let k = self.t.partition_point(|&s| s <= t);
        k.clamp(1, self.t.len() - 1) - 1
    }

    pub fn state(&self, t: f64) -> Vec<f64> {
        let i = self.interval(t);
        hermite(self.t[i], self.t[i + 1], &self.x[i], &self.x[i + 1], &self.f[i], &self.f[i + 1], t)
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        let i = self.interval(t);
        hermite_derivative(self.t[i], self.t[i + 1], &self.x[i], &self.x[i + 1], &self.f[i], &self.f[i + 1], t)
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.t.len() < 2 || self.x.len() != self.t.len() || self.f.len() != self.t.len() {
            return Err(Error::Dimension("orbit segment needs at least two consistent knots".into()));
        }
        if self.x.iter().chain(self.f.iter()).any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("orbit knot of wrong length, n = {n}")));
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Model("orbit knot times must increase".into()));
        }
        Ok(())
    }
}

/// Which side of an impact time a query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Pre,
    Post,
}

/// A periodic orbit sampled on `[0, T]`. Hybrid orbits have one segment per
/// phase, each ending at an impact; `t = 0` is the post-impact state of the
/// last phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    n: usize,
    period: f64,
    /// Nominal input along the orbit (constant; empty when m = 0).
    #[serde(default)]
    u: Vec<f64>,
    segments: Vec<OrbitSegment>,
    #[serde(default)]
    impacts: Vec<ImpactRecord>,
}

impl PeriodicOrbit {
    pub fn new(n: usize, u: Vec<f64>, segments: Vec<OrbitSegment>, impacts: Vec<ImpactRecord>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Model("orbit has no segments".into()));
        }
        for s in &segments {
            s.check(n)?;
        }
        if segments[0].t[0] != 0.0 {
            return Err(Error::Model("orbit must start at t = 0".into()));
        }
        for w in segments.windows(2) {
            if (w[0].span().1 - w[1].span().0).abs() > 1e-12 {
                return Err(Error::Model("orbit segments are not contiguous".into()));
            }
        }
        let period = segments.last().unwrap().span().1;
        Ok(Self { n, period, u, segments, impacts })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: Self = serde_json::from_str(text)
            .map_err(|e| Error::Parse { location: format!("line {}, column {}", e.line(), e.column()), message: e.to_string() })?;
        Self::new(raw.n, raw.u, raw.segments, raw.impacts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("orbit serializes")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn segments(&self) -> &[OrbitSegment] {
        &self.segments
    }

    pub fn impacts(&self) -> &[ImpactRecord] {
        &self.impacts
    }

    pub fn is_hybrid(&self) -> bool {
        !self.impacts.is_empty()
    }

    pub fn nominal_input(&self) -> Vec<f64> {
        self.u.clone()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.segments[0].x[0].clone()
    }

    /// Segment start/end times.
    pub fn segment_bounds(&self) -> Vec<(f64, f64)> {
        self.segments.iter().map(|s| s.span()).collect()
    }

    /// Index of the segment containing `t`; at an impact time `side` picks
    /// the segment ending there (`Pre`) or starting there (`Post`).
    pub fn segment_index(&self, t: f64, side: Side) -> usize {
        let last = self.segments.len() - 1;
        for (k, s) in self.segments.iter().enumerate() {
            let (a, b) = s.span();
            match side {
                Side::Pre if t > a && t <= b => return k,
                Side::Post if t >= a && t < b => return k,
                _ => {}
            }
        }
        if t <= 0.0 {
            0
        } else {
            last
        }
    }

    pub fn phase_at(&self, t: f64, side: Side) -> usize {
        self.segments[self.segment_index(t, side)].phase
    }

    pub fn state_at(&self, t: f64, side: Side) -> Vec<f64> {
        self.segments[self.segment_index(t, side)].state(t)
    }

    pub fn velocity_at(&self, t: f64, side: Side) -> Vec<f64> {
        self.segments[self.segment_index(t, side)].velocity(t)
    }

    /// `|x*(T+) - x*(0)|`, with the final reset applied for hybrid orbits.
    pub fn closure_error(&self, model: &HybridModel) -> f64 {
        let last = self.segments.last().unwrap();
        let end = last.x.last().unwrap().clone();
        let end = if model.surface(last.phase).is_some() { model.apply_delta(last.phase, &end) } else { end };
        dist(&end, &self.initial_state())
    }

    /// Consistency against the model: shapes, closure, nonvanishing field,
    /// impacts on their surfaces with nonzero crossing speed.
    pub fn validate(&self, model: &HybridModel, closure_tol: f64) -> Result<()> {
        if self.n != model.n() {
            return Err(Error::Dimension(format!("orbit n = {}, model n = {}", self.n, model.n())));
        }
        if !self.u.is_empty() && self.u.len() != model.m() {
            return Err(Error::Dimension(format!("orbit input of length {}", self.u.len())));
        }
        let hybrid = model.is_hybrid();
        if hybrid && self.segments.len() != model.num_phases() {
            return Err(Error::Model(format!("orbit has {} segments for {} phases", self.segments.len(), model.num_phases())));
        }
        let closure = self.closure_error(model);
        if !(closure <= closure_tol) {
            return Err(Error::Model(format!("orbit closure error {closure:e}")));
        }
        for (k, s) in self.segments.iter().enumerate() {
            if hybrid && s.phase != k {
                return Err(Error::Model(format!("segment {k} is in phase {}", s.phase)));
            }
            for x in &s.x {
                let fx = model.field(s.phase, x, &self.u);
                if norm(&fx) <= 1e-10 {
                    return Err(Error::Model("vector field vanishes on the orbit".into()));
                }
            }
            if let Some(surf) = model.surface(s.phase) {
                let xe = s.x.last().unwrap();
                if surf.residual(xe).abs() > 1e-8 {
                    return Err(Error::Model(format!("segment {k} does not end on its surface")));
                }
                let fe = model.field(s.phase, xe, &self.u);
                if dot(&surf.c_minus, &fe).abs() <= 1e-6 * norm(&fe) {
                    return Err(Error::Grazing(format!("impact at end of segment {k}")));
                }
            }
        }
        Ok(())
    }

    /// Euclidean distance from `x` to the orbit.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for (k, s) in self.segments.iter().enumerate() {
            for (i, xi) in s.x.iter().enumerate() {
                let d = dist(xi, x);
                if d < best.0 {
                    best = (d, k, i);
                }
            }
        }
        let (mut d, k, i) = best;
        let s = &self.segments[k];
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(s.t.len() - 1);
        for j in lo..hi {
            d = d.min(golden_min(s.t[j], s.t[j + 1], |t| dist(&s.state(t), x)));
        }
        d
    }
}

fn golden_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd).min(f(a)).min(f(b))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative `|f(x0)|` below which a shooting result is an equilibrium.
const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Initial guess for shooting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitGuess {
    pub x0: Vec<f64>,
    pub period: f64,
}

#[derive(Debug, Clone)]
pub struct ShootingOptions {
    /// State component held fixed for continuous orbits (default: largest `|f|` at the guess).
    pub anchor: Option<usize>,
    pub max_iter: usize,
    pub closure_tol: f64,
    /// Knots per period in the recorded orbit (upper bound on the step).
    pub knots: usize,
    pub u_nominal: Vec<f64>,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self { anchor: None, max_iter: 50, closure_tol: 1e-10, knots: 1000, u_nominal: Vec::new() }
    }
}

/// Refine a guess into a periodic orbit by Newton shooting.
pub fn find_orbit(model: &HybridModel, guess: &OrbitGuess, opts: &ShootingOptions) -> Result<PeriodicOrbit> {
    let n = model.n();
    if guess.x0.len() != n {
        return Err(Error::Dimension(format!("guess of length {}, n = {n}", guess.x0.len())));
    }
    if !opts.u_nominal.is_empty() && opts.u_nominal.len() != model.m() {
        return Err(Error::Dimension(format!("nominal input of length {}", opts.u_nominal.len())));
    }
    if !(guess.period > 0.0) {
        return Err(Error::Config("period guess must be positive".into()));
    }
    let (x0, period) = if model.is_hybrid() { shoot_hybrid(model, guess, opts)? } else { shoot_continuous(model, guess, opts)? };
    let u = &opts.u_nominal;
    if norm(&model.field(0, &x0, u)) <= EQUILIBRIUM_TOL * (1.0 + norm(&x0)) {
        return Err(Error::ShootingDiverged("converged to an equilibrium".into()));
    }
    record_orbit(model, &x0, period, opts)
}

fn shoot_continuous(model: &HybridModel, guess: &OrbitGuess, opts: &ShootingOptions) -> Result<(Vec<f64>, f64)> {
    let n = model.n();
    let u = &opts.u_nominal;
    let f0 = model.field(0, &guess.x0, u);
    let anchor = match opts.anchor {
        Some(a) if a < n => a,
        Some(a) => return Err(Error::Config(format!("anchor {a} out of range"))),
        None => (0..n).max_by(|&i, &j| f0[i].abs().total_cmp(&f0[j].abs())).unwrap(),
    };
    let anchor_value = guess.x0[anchor];
    let tol = Tolerances::tight();
    let eye = DMatrix::identity(n, n);
    let residual = |x0: &[f64], t: f64| -> Result<(DVector<f64>, DMatrix<f64>, Vec<f64>)> {
        let r = flow_with_sensitivity(model, 0, 0.0, x0, &eye, t, false, u, tol)?;
        let mut res = DVector::zeros(n + 1);
        for i in 0..n {
            res[i] = r.x[i] - x0[i];
        }
        res[n] = x0[anchor] - anchor_value;
        Ok((res, r.phi, r.x))
    };
    let mut x = guess.x0.clone();
    let mut period = guess.period;
    let (mut res, mut phi, mut xt) = residual(&x, period)?;
    for _ in 0..opts.max_iter {
        if res.norm() <= opts.closure_tol {
            return Ok((x, period));
        }
        let ft = model.field(0, &xt, u);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&(&phi - &eye));
        for i in 0..n {
            jac[(i, n)] = ft[i];
        }
        jac[(n, anchor)] = 1.0;
        // Minimum-norm step: orbit continua (centers) make the Jacobian singular.
        let step = jac.svd(true, true).solve(&(-&res), 1e-13).map_err(|e| Error::SingularJacobian(e.to_string()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let xn: Vec<f64> = (0..n).map(|i| x[i] + lambda * step[i]).collect();
            let tn = period + lambda * step[n];
            if tn > 0.0 {
                if let Ok((r2, p2, x2)) = residual(&xn, tn) {
                    if r2.norm() < res.norm() {
                        x = xn;
                        period = tn;
                        res = r2;
                        phi = p2;
                        xt = x2;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res.norm() <= opts.closure_tol {
        return Ok((x, period));
    }
    Err(Error::ShootingDiverged(format!("closure error {:e}", res.norm())))
}

/// One return of the hybrid flow: final post-impact state, return time and
/// the Jacobian of the impact-to-impact map.
fn hybrid_return(model: &HybridModel, x0: &[f64], horizon: f64, u: &[f64]) -> Result<(Vec<f64>, f64, DMatrix<f64>)> {
    let n = model.n();
    let mut phi = DMatrix::identity(n, n);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    for k in 0..model.num_phases() {
        let r = flow_with_sensitivity(model, k, t, &x, &phi, t + horizon, true, u, Tolerances::tight())?;
        if !r.event {
            return Err(Error::ShootingDiverged(format!("no impact in phase {k}")));
        }
        let (xp, s) = saltation(model, k, &r.x, u)?;
        // Drop the f+ c'/(c'f-) part of the saltation: the impact time floats.
        let surf = model.surface(k).unwrap();
        let fm = DVector::from_vec(model.field(k, &r.x, u));
        let fp = DVector::from_vec(model.field(model.next_phase(k), &xp, u));
        let c = DVector::from_column_slice(&surf.c_minus);
        let p = s - fp * c.transpose() / c.dot(&fm);
        phi = p * r.phi;
        x = xp;
        t = r.t;
    }
    Ok((x, t, phi))
}

fn shoot_hybrid(model: &HybridModel, guess: &OrbitGuess, opts: &ShootingOptions) -> Result<(Vec<f64>, f64)> {
    let n = model.n();
    let u = &opts.u_nominal;
    let entry = model.surface(model.num_phases() - 1).unwrap();
    let horizon = 10.0 * guess.period;
    let eye = DMatrix::<f64>::identity(n, n);
    let eval = |x0: &[f64]| -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let (xn, t, phi) = hybrid_return(model, x0, horizon, u)?;
        let mut res = DVector::zeros(n + 1);
        for i in 0..n {
            res[i] = xn[i] - x0[i];
        }
        res[n] = entry.post_residual(x0);
        Ok((res, phi, t))
    };
    let mut x = guess.x0.clone();
    let (mut res, mut phi, mut period) = eval(&x)?;
    for _ in 0..opts.max_iter {
        if res.norm() <= opts.closure_tol {
            return Ok((x, period));
        }
        let mut jac = DMatrix::zeros(n + 1, n);
        jac.view_mut((0, 0), (n, n)).copy_from(&(&phi - &eye));
        for j in 0..n {
            jac[(n, j)] = entry.c_plus[j];
        }
        let step = jac.svd(true, true).solve(&(-&res), 1e-13).map_err(|e| Error::SingularJacobian(e.to_string()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let xn: Vec<f64> = (0..n).map(|i| x[i] + lambda * step[i]).collect();
            if let Ok((r2, p2, t2)) = eval(&xn) {
                if r2.norm() < res.norm() {
                    x = xn;
                    res = r2;
                    phi = p2;
                    period = t2;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res.norm() <= opts.closure_tol {
        return Ok((x, period));
    }
    Err(Error::ShootingDiverged(format!("closure error {:e}", res.norm())))
}

fn record_orbit(model: &HybridModel, x0: &[f64], period: f64, opts: &ShootingOptions) -> Result<PeriodicOrbit> {
    let n = model.n();
    let u = opts.u_nominal.clone();
    let tol = Tolerances::tight().with_h_max(period / opts.knots.max(1) as f64);
    let fopts = FlowOptions { tol, record: true, ..FlowOptions::default() };
    let mut segments = Vec::new();
    let mut impacts = Vec::new();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    for k in 0..model.num_phases() {
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| dy.copy_from_slice(&model.field(k, y, &u));
        let surface = model.surface(k);
        let residual = |y: &[f64]| surface.map(|s| s.residual(y)).unwrap_or(1.0);
        let guard = |y: &[f64]| surface.map(|s| s.guard_value(y)).unwrap_or(-1.0);
        let spec = EventSpec { residual: &residual, guard: &guard };
        let t_end = if surface.is_some() { t + 10.0 * period } else { period };
        let raw = run_with_events(&rhs, t, x.clone(), t_end, surface.map(|_| &spec), &fopts)?;
        if surface.is_some() && !raw.event {
            return Err(Error::ShootingDiverged(format!("no impact in phase {k} while recording")));
        }
        let mut seg = OrbitSegment { phase: k, t: vec![t], x: vec![x.clone()], f: vec![model.field(k, &x, &u)] };
        for s in &raw.steps {
            // An event just past an accepted step leaves a sliver; keep the later knot.
            if seg.t.len() > 1 && s.t1 - seg.t.last().unwrap() < 1e-8 * period {
                seg.t.pop();
                seg.x.pop();
                seg.f.pop();
            }
            seg.t.push(s.t1);
            seg.x.push(s.x1.clone());
            seg.f.push(s.f1.clone());
        }
        debug_assert!(seg.x.iter().all(|v| v.len() == n));
        // Uniform knots from the dense output.
        let (a, b) = seg.span();
        let m = (((b - a) / period * opts.knots as f64).ceil() as usize).max(8);
        let ts: Vec<f64> = (0..=m).map(|j| if j == m { b } else { a + (b - a) * j as f64 / m as f64 }).collect();
        let xs: Vec<Vec<f64>> = ts.iter().map(|&s| if s == b { seg.x.last().unwrap().clone() } else { seg.state(s) }).collect();
        let fs = xs.iter().map(|x| model.field(k, x, &u)).collect();
        let seg = OrbitSegment { phase: k, t: ts, x: xs, f: fs };
        segments.push(seg);
        t = raw.t;
        x = raw.x;
        if surface.is_some() {
            let post = model.apply_delta(k, &x);
            impacts.push(ImpactRecord { t, phase: k, x_pre: x.clone(), x_post: post.clone() });
            x = post;
        }
    }
    PeriodicOrbit::new(n, u, segments, impacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::monodromy::{floquet, monodromy};
    use std::f64::consts::PI;

    fn vdp() -> HybridModel {
        HybridModel::from_json_str(
            r#"{"n":2,"m":0,"phases":[{"f":[
            {"nvars":2,"terms":[{"c":1.0,"e":[0,1]}]},
            {"nvars":2,"terms":[{"c":-1.0,"e":[1,0]},{"c":1.0,"e":[0,1]},{"c":-1.0,"e":[2,1]}]}],
            "surface":null,"delta":null}]}"#,
        )
        .unwrap()
    }

    fn rimless(alpha: f64, gamma: f64) -> HybridModel {
        let c2 = (2.0 * alpha).cos();
        let text = format!(
            r#"{{"n":2,"m":0,"atoms":[{{"fn":"sin","var":0}}],"phases":[{{"f":[
            {{"nvars":3,"terms":[{{"c":1.0,"e":[0,1,0]}}]}},
            {{"nvars":3,"terms":[{{"c":1.0,"e":[0,0,1]}}]}}],
            "surface":{{"c_minus":[1.0,0.0],"d_minus":{dm},"guard":{{"nvars":2,"terms":[{{"c":1.0,"e":[0,1]}}]}},
                        "c_plus":[1.0,0.0],"d_plus":{dp}}},
            "delta":[{{"nvars":2,"terms":[{{"c":1.0,"e":[1,0]}},{{"c":{sh},"e":[0,0]}}]}},
                     {{"nvars":2,"terms":[{{"c":{c2},"e":[0,1]}}]}}]}}]}}"#,
            dm = gamma + alpha,
            dp = gamma - alpha,
            sh = -2.0 * alpha,
        );
        HybridModel::from_json_str(&text).unwrap()
    }

    #[test]
    fn vdp_period_and_multipliers() {
        let m = vdp();
        let orbit = find_orbit(&m, &OrbitGuess { x0: vec![2.0, 0.0], period: 6.6 }, &ShootingOptions::default()).unwrap();
        assert!((orbit.period() - 6.663286859).abs() < 1e-6, "{}", orbit.period());
        assert!(orbit.closure_error(&m) < 1e-9);
        orbit.validate(&m, 1e-8).unwrap();
        let mu = floquet(&monodromy(&m, &orbit).unwrap());
        assert!((mu[0].norm() - 1.0).abs() < 1e-6);
        // The nontrivial multiplier is exp(-int div f) = exp(-1.0613 T).
        assert!(mu[1].norm() < 1e-2);
    }

    #[test]
    fn equilibrium_guess_is_rejected() {
        let err = find_orbit(&vdp(), &OrbitGuess { x0: vec![0.0, 0.0], period: 1.0 }, &ShootingOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ShootingDiverged(_)), "{err}");
    }

    #[test]
    fn rimless_wheel_fixed_point() {
        let (alpha, gamma) = (PI / 8.0, 0.08);
        let m = rimless(alpha, gamma);
        let c2 = (2.0 * alpha).cos();
        let wm = (2.0 * ((gamma - alpha).cos() - (gamma + alpha).cos()) / (1.0 - c2 * c2)).sqrt();
        let guess = OrbitGuess { x0: vec![gamma - alpha + 0.01, 0.9 * c2 * wm], period: 0.5 };
        let orbit = find_orbit(&m, &guess, &ShootingOptions::default()).unwrap();
        let x0 = orbit.initial_state();
        assert!((x0[0] - (gamma - alpha)).abs() < 1e-9);
        assert!((x0[1] - c2 * wm).abs() < 1e-8, "{} vs {}", x0[1], c2 * wm);
        assert_eq!(orbit.impacts().len(), 1);
        assert!((orbit.impacts()[0].x_pre[1] - wm).abs() < 1e-8);
        orbit.validate(&m, 1e-8).unwrap();
    }

    #[test]
    fn orbit_json_round_trip() {
        let m = vdp();
        let orbit = find_orbit(&m, &OrbitGuess { x0: vec![2.0, 0.0], period: 6.6 }, &ShootingOptions::default()).unwrap();
        let back = PeriodicOrbit::from_json_str(&orbit.to_json_string()).unwrap();
        assert_eq!(back, orbit);
        assert!(orbit.distance(&orbit.state_at(1.234, Side::Post)) < 1e-9);
    }

    #[test]
    fn shooting_from_far_guess_fails_cleanly() {
        let m = vdp();
        let r = find_orbit(&m, &OrbitGuess { x0: vec![0.0, 1e-3], period: 1.0 }, &ShootingOptions { max_iter: 3, ..Default::default() });
        assert!(r.is_err());
    }
}
