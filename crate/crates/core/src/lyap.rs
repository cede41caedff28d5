//! Periodic Lyapunov, jump-Lyapunov and jump-Riccati equations along the
//! transverse linearization, and the level bisection for quadratic seeds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{grid_derivative, min_sym_eigenvalue, solve_symmetric_fixed_point, spectral_radius, sym};
use crate::ode::rk::{hermite, solve, Tolerances};
use crate::transverse::{TransverseLtv, TransverseSystem};

/// A linear periodic system with impacts: `x' = A x + B u` on each segment,
/// `x+ = A_d x` after segment `i` for `i < num_impacts()`.
pub trait LinearPeriodic: Sync {
    fn dim(&self) -> usize;
    fn inputs(&self) -> usize;
    fn grid(&self, seg: usize) -> &[f64];
    fn num_segments(&self) -> usize;
    fn num_impacts(&self) -> usize;
    fn ab(&self, seg: usize, tau: f64) -> (DMatrix<f64>, DMatrix<f64>);
    fn jump(&self, impact: usize) -> DMatrix<f64>;
}

impl LinearPeriodic for TransverseSystem<'_> {
    fn dim(&self) -> usize {
        TransverseSystem::dim(self)
    }

    fn inputs(&self) -> usize {
        self.model.m()
    }

    fn grid(&self, seg: usize) -> &[f64] {
        &self.family.segments[seg].tau
    }

    fn num_segments(&self) -> usize {
        TransverseSystem::num_segments(self)
    }

    fn num_impacts(&self) -> usize {
        self.orbit.impacts().len()
    }

    fn ab(&self, seg: usize, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        match self.frame(seg, tau) {
            Ok(fr) => self.linearize(&fr),
            Err(_) => {
                let k = TransverseSystem::dim(self);
                (DMatrix::from_element(k, k, f64::NAN), DMatrix::from_element(k, self.model.m(), f64::NAN))
            }
        }
    }

    fn jump(&self, impact: usize) -> DMatrix<f64> {
        self.impact_jacobian(impact).unwrap_or_else(|_| {
            let k = TransverseSystem::dim(self);
            DMatrix::from_element(k, k, f64::NAN)
        })
    }
}

/// Sampled systems are interpolated linearly between grid points.
impl LinearPeriodic for TransverseLtv {
    fn dim(&self) -> usize {
        self.segments[0].a[0].nrows()
    }

    fn inputs(&self) -> usize {
        self.segments[0].b[0].ncols()
    }

    fn grid(&self, seg: usize) -> &[f64] {
        &self.segments[seg].tau
    }

    fn num_segments(&self) -> usize {
        self.segments.len()
    }

    fn num_impacts(&self) -> usize {
        self.impacts.len()
    }

    fn ab(&self, seg: usize, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = &self.segments[seg];
        let k = s.tau.partition_point(|&t| t <= tau).clamp(1, s.tau.len() - 1) - 1;
        let h = s.tau[k + 1] - s.tau[k];
        let th = ((tau - s.tau[k]) / h).clamp(0.0, 1.0);
        (&s.a[k] * (1.0 - th) + &s.a[k + 1] * th, &s.b[k] * (1.0 - th) + &s.b[k + 1] * th)
    }

    fn jump(&self, impact: usize) -> DMatrix<f64> {
        self.impacts[impact].clone()
    }
}

/// Weights: `Q` on the flow, `Q_i` at impacts, `R` on the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: DMatrix<f64>,
    pub qi: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Weights {
    pub fn identity(k: usize, m: usize) -> Self {
        Self { q: DMatrix::identity(k, k), qi: DMatrix::identity(k, k), r: DMatrix::identity(m, m) }
    }

    fn check(&self, k: usize, m: usize) -> Result<()> {
        if self.q.shape() != (k, k) || self.qi.shape() != (k, k) || (m > 0 && self.r.shape() != (m, m)) {
            return Err(Error::Dimension("weight matrices do not match the system".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadSegment {
    pub tau: Vec<f64>,
    /// Lower-triangular entries of `P`, row by row.
    pub p: Vec<Vec<f64>>,
    /// Lower-triangular entries of `dP/dtau`.
    pub dp: Vec<Vec<f64>>,
}

/// `V(x_perp, tau) = x_perp' P(tau) x_perp` on the grid, Hermite-interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicQuadratic {
    pub dim: usize,
    pub segments: Vec<QuadSegment>,
}

pub fn pack_lower(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.nrows() * (m.nrows() + 1) / 2);
    for i in 0..m.nrows() {
        for j in 0..=i {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn unpack_lower(k: usize, v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in 0..=i {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    m
}

impl PeriodicQuadratic {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Parse { location: format!("line {}, column {}", e.line(), e.column()), message: e.to_string() })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("quadratic serializes")
    }

    pub fn p(&self, seg: usize, tau: f64) -> DMatrix<f64> {
        let s = &self.segments[seg];
        let k = s.tau.partition_point(|&t| t <= tau).clamp(1, s.tau.len() - 1) - 1;
        let v = hermite(s.tau[k], s.tau[k + 1], &s.p[k], &s.p[k + 1], &s.dp[k], &s.dp[k + 1], tau.clamp(s.tau[0], *s.tau.last().unwrap()));
        unpack_lower(self.dim, &v)
    }

    pub fn p_grid(&self, seg: usize, i: usize) -> DMatrix<f64> {
        unpack_lower(self.dim, &self.segments[seg].p[i])
    }

    pub fn dp_grid(&self, seg: usize, i: usize) -> DMatrix<f64> {
        unpack_lower(self.dim, &self.segments[seg].dp[i])
    }

    pub fn value(&self, seg: usize, tau: f64, x: &DVector<f64>) -> f64 {
        (x.transpose() * self.p(seg, tau) * x)[(0, 0)]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for seg in &mut out.segments {
            for v in seg.p.iter_mut().chain(seg.dp.iter_mut()) {
                v.iter_mut().for_each(|c| *c *= s);
            }
        }
        out
    }

    /// Smallest eigenvalue of `P` over the grid refined four times.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for (k, s) in self.segments.iter().enumerate() {
            for w in s.tau.windows(2) {
                for j in 0..4 {
                    let t = w[0] + (w[1] - w[0]) * j as f64 / 4.0;
                    lo = lo.min(min_sym_eigenvalue(&self.p(k, t)));
                }
            }
            lo = lo.min(min_sym_eigenvalue(&self.p_grid(k, s.tau.len() - 1)));
        }
        lo
    }
}

/// `K(tau) = R^-1 B(tau)' P(tau)` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackGain {
    pub inputs: usize,
    pub dim: usize,
    pub segments: Vec<GainSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSegment {
    pub tau: Vec<f64>,
    /// Row-major `m x (n-1)` entries.
    pub k: Vec<Vec<f64>>,
}

impl FeedbackGain {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Parse { location: format!("line {}, column {}", e.line(), e.column()), message: e.to_string() })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("gain serializes")
    }

    /// Linear interpolation between grid points.
    pub fn k(&self, seg: usize, tau: f64) -> DMatrix<f64> {
        let s = &self.segments[seg];
        let i = s.tau.partition_point(|&t| t <= tau).clamp(1, s.tau.len() - 1) - 1;
        let th = ((tau - s.tau[i]) / (s.tau[i + 1] - s.tau[i])).clamp(0.0, 1.0);
        let a = DMatrix::from_row_slice(self.inputs, self.dim, &s.k[i]);
        let b = DMatrix::from_row_slice(self.inputs, self.dim, &s.k[i + 1]);
        a * (1.0 - th) + b * th
    }
}

fn matrix_tol() -> Tolerances {
    Tolerances { rtol: 1e-11, atol: 1e-13, ..Tolerances::default() }
}

/// Forward transition over one period, impacts included.
pub fn transition<S: LinearPeriodic + ?Sized>(sys: &S, gain: Option<&FeedbackGain>) -> Result<DMatrix<f64>> {
    let k = sys.dim();
    let mut phi = DMatrix::identity(k, k);
    for seg in 0..sys.num_segments() {
        let g = sys.grid(seg);
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            let (mut a, b) = sys.ab(seg, t);
            if let Some(gk) = gain {
                a -= b * gk.k(seg, t);
            }
            let p = DMatrix::from_column_slice(k, k, y);
            dy.copy_from_slice((a * p).as_slice());
        };
        let y = solve(&rhs, g[0], phi.as_slice().to_vec(), *g.last().unwrap(), matrix_tol())?;
        phi = DMatrix::from_column_slice(k, k, &y);
        if seg < sys.num_impacts() {
            phi = sys.jump(seg) * phi;
        }
    }
    Ok(phi)
}

/// Right-hand side of the backward equation in reversed time `s`:
/// `dP/ds = A'P + PA + Q - P B R^-1 B' P`.
fn backward_rate<S: LinearPeriodic + ?Sized>(
    sys: &S,
    seg: usize,
    t: f64,
    p: &DMatrix<f64>,
    w: &Weights,
    rinv: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let (a, b) = sys.ab(seg, t);
    let mut d = a.transpose() * p + p * &a + &w.q;
    if let Some(ri) = rinv {
        d -= p * &b * ri * b.transpose() * p;
    }
    d
}

struct Sweep {
    /// P at the grid points of each segment.
    values: Vec<Vec<DMatrix<f64>>>,
    start: DMatrix<f64>,
}

/// Integrate backward over one period from `P(0+) = x` (continuous: `P(T) = x`).
fn sweep<S: LinearPeriodic + ?Sized>(
    sys: &S,
    x: &DMatrix<f64>,
    w: &Weights,
    rinv: Option<&DMatrix<f64>>,
    with_q: bool,
    store: bool,
) -> Result<Sweep> {
    let k = sys.dim();
    let nseg = sys.num_segments();
    let zero_w;
    let w = if with_q {
        w
    } else {
        zero_w = Weights { q: DMatrix::zeros(k, k), qi: DMatrix::zeros(k, k), r: w.r.clone() };
        &zero_w
    };
    let mut values: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); nseg];
    let mut p = x.clone();
    for seg in (0..nseg).rev() {
        if seg < sys.num_impacts() {
            let ad = sys.jump(seg);
            p = ad.transpose() * &p * &ad + &w.qi;
        }
        let g = sys.grid(seg);
        let mut col = vec![p.clone()];
        for i in (0..g.len() - 1).rev() {
            let (t1, t0) = (g[i + 1], g[i]);
            let rhs = |s: f64, y: &[f64], dy: &mut [f64]| {
                let pm = DMatrix::from_column_slice(k, k, y);
                dy.copy_from_slice(backward_rate(sys, seg, t1 - s, &pm, w, rinv).as_slice());
            };
            let y = solve(&rhs, 0.0, p.as_slice().to_vec(), t1 - t0, matrix_tol())?;
            p = sym(&DMatrix::from_column_slice(k, k, &y));
            if !p.iter().all(|v| v.is_finite()) || p.norm() > 1e12 {
                return Err(Error::RiccatiDivergence(format!("backward sweep blew up at tau = {t0}")));
            }
            if store {
                col.push(p.clone());
            }
        }
        if store {
            col.reverse();
            values[seg] = col;
        }
    }
    Ok(Sweep { values, start: p })
}

fn assemble<S: LinearPeriodic + ?Sized>(
    sys: &S,
    values: Vec<Vec<DMatrix<f64>>>,
    w: &Weights,
    rinv: Option<&DMatrix<f64>>,
) -> PeriodicQuadratic {
    let segments = values
        .into_iter()
        .enumerate()
        .map(|(seg, ps)| {
            let g = sys.grid(seg).to_vec();
            let dp = ps.iter().zip(&g).map(|(p, &t)| pack_lower(&(-backward_rate(sys, seg, t, p, w, rinv)))).collect();
            QuadSegment { tau: g, p: ps.iter().map(pack_lower).collect(), dp }
        })
        .collect();
    PeriodicQuadratic { dim: sys.dim(), segments }
}

fn check_pd(pq: &PeriodicQuadratic) -> Result<()> {
    let lo = pq.min_eigenvalue();
    if !(lo > 0.0) {
        return Err(Error::Numerical(format!("periodic solution is not positive definite (min eigenvalue {lo:e})")));
    }
    Ok(())
}

/// Unique periodic solution of `P' + A'P + PA + Q = 0` with jumps
/// `P(tau_i-) = A_d' P(tau_i+) A_d + Q_i`.
pub fn periodic_lyapunov<S: LinearPeriodic + ?Sized>(sys: &S, w: &Weights) -> Result<PeriodicQuadratic> {
    let k = sys.dim();
    w.check(k, sys.inputs())?;
    let psi = transition(sys, None)?;
    let rho = spectral_radius(&psi);
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let base = sweep(sys, &DMatrix::zeros(k, k), w, None, true, false)?.start;
    let lin = |x: &DMatrix<f64>| psi.transpose() * x * &psi;
    let mut x = solve_symmetric_fixed_point(k, lin, &base).ok_or_else(|| Error::Numerical("periodic fixed point is singular".into()))?;
    // Polish against the backward sweep itself so the stored solution closes exactly.
    for _ in 0..200 {
        let next = sweep(sys, &x, w, None, true, false)?.start;
        let change = (&next - &x).norm();
        x = next;
        if change <= 1e-13 * x.norm().max(1.0) {
            break;
        }
    }
    let values = sweep(sys, &x, w, None, true, true)?.values;
    let pq = assemble(sys, values, w, None);
    check_pd(&pq)?;
    Ok(pq)
}

/// Alias for systems with impacts; the same fixed point.
pub fn jump_lyapunov<S: LinearPeriodic + ?Sized>(sys: &S, w: &Weights) -> Result<PeriodicQuadratic> {
    periodic_lyapunov(sys, w)
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub quadratic: PeriodicQuadratic,
    pub gain: FeedbackGain,
    /// Spectral radius of the closed-loop transverse monodromy.
    pub closed_loop_radius: f64,
    pub sweeps: usize,
}

/// Periodic solution of `-P' = A'P + PA - P B R^-1 B' P + Q` with jumps,
/// by backward sweeps repeated until `|P(0) - P(T)| <= 1e-8`.
pub fn jump_riccati<S: LinearPeriodic + ?Sized>(sys: &S, w: &Weights) -> Result<RiccatiSolution> {
    let k = sys.dim();
    let m = sys.inputs();
    if m == 0 {
        return Err(Error::Config("Riccati design needs at least one input".into()));
    }
    w.check(k, m)?;
    if min_sym_eigenvalue(&w.r) <= 0.0 {
        return Err(Error::Config("R must be positive definite".into()));
    }
    let rinv = w.r.clone().try_inverse().ok_or_else(|| Error::Config("R is singular".into()))?;
    let mut x = w.q.clone();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let next = sweep(sys, &x, w, Some(&rinv), true, false)?.start;
        let change = (&next - &x).norm();
        x = next;
        if change <= 1e-8 {
            break;
        }
        if sweeps >= 2000 {
            return Err(Error::RiccatiDivergence(format!("no periodic convergence after {sweeps} sweeps")));
        }
    }
    let values = sweep(sys, &x, w, Some(&rinv), true, true)?.values;
    let gain = FeedbackGain {
        inputs: m,
        dim: k,
        segments: values
            .iter()
            .enumerate()
            .map(|(seg, ps)| {
                let g = sys.grid(seg).to_vec();
                let ks = ps
                    .iter()
                    .zip(&g)
                    .map(|(p, &t)| {
                        let (_, b) = sys.ab(seg, t);
                        let kk = &rinv * b.transpose() * p;
                        let mut row = Vec::with_capacity(m * k);
                        for i in 0..m {
                            row.extend(kk.row(i).iter());
                        }
                        row
                    })
                    .collect();
                GainSegment { tau: g, k: ks }
            })
            .collect(),
    };
    let quadratic = assemble(sys, values, w, Some(&rinv));
    check_pd(&quadratic)?;
    let closed_loop_radius = spectral_radius(&transition(sys, Some(&gain))?);
    Ok(RiccatiSolution { quadratic, gain, closed_loop_radius, sweeps })
}

/// Largest `|P' + A'P + PA + Q (- P B R^-1 B' P)|_F` over the grid, with `P'`
/// from finite differences of the grid values.
pub fn residual<S: LinearPeriodic + ?Sized>(sys: &S, pq: &PeriodicQuadratic, w: &Weights, riccati: bool) -> f64 {
    let rinv = if riccati { w.r.clone().try_inverse() } else { None };
    let mut worst: f64 = 0.0;
    for (seg, s) in pq.segments.iter().enumerate() {
        let vals: Vec<DVector<f64>> = s.p.iter().map(|v| DVector::from_column_slice(v)).collect();
        for (i, &t) in s.tau.iter().enumerate() {
            let dp = unpack_lower(pq.dim, grid_derivative(&s.tau, &vals, i, None).as_slice());
            let p = pq.p_grid(seg, i);
            let r = dp + backward_rate(sys, seg, t, &p, w, rinv.as_ref());
            worst = worst.max(r.norm());
        }
    }
    worst
}

/// Largest verified level in `[rho_min, rho_max]`, by geometric bisection to
/// relative width 0.01; returns the verified lower end.
pub fn bisect_level(mut verifier: impl FnMut(f64) -> bool, rho_min: f64, rho_max: f64) -> Result<f64> {
    if !(rho_min > 0.0 && rho_max >= rho_min) {
        return Err(Error::Config("level bracket must satisfy 0 < rho_min <= rho_max".into()));
    }
    if verifier(rho_max) {
        return Ok(rho_max);
    }
    if !verifier(rho_min) {
        return Err(Error::LevelInfeasible(rho_min));
    }
    let (mut lo, mut hi) = (rho_min, rho_max);
    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        if verifier(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transverse::LtvSegment;

    fn scalar_ltv(a: f64, b: f64, impacts: Vec<f64>) -> TransverseLtv {
        let nseg = impacts.len().max(1);
        let segments = (0..nseg)
            .map(|s| {
                let tau: Vec<f64> = (0..=20).map(|i| s as f64 + i as f64 / 20.0).collect();
                let len = tau.len();
                LtvSegment { phase: s, tau, a: vec![DMatrix::from_element(1, 1, a); len], b: vec![DMatrix::from_element(1, 1, b); len] }
            })
            .collect();
        TransverseLtv { segments, impacts: impacts.into_iter().map(|v| DMatrix::from_element(1, 1, v)).collect() }
    }

    fn weights(q: f64, qi: f64) -> Weights {
        Weights { q: DMatrix::from_element(1, 1, q), qi: DMatrix::from_element(1, 1, qi), r: DMatrix::from_element(1, 1, 1.0) }
    }

    #[test]
    fn stable_scalar_steady_state() {
        let pq = periodic_lyapunov(&scalar_ltv(-1.0, 0.0, vec![]), &weights(2.0, 0.0)).unwrap();
        for s in &pq.segments {
            for p in &s.p {
                assert!((p[0] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unstable_scalar_rejected() {
        let r = periodic_lyapunov(&scalar_ltv(1.0, 0.0, vec![]), &weights(1.0, 0.0));
        assert!(matches!(r, Err(Error::Unstable(_))));
    }

    #[test]
    fn pure_jump_fixed_point() {
        let a: f64 = 0.6;
        let pq = jump_lyapunov(&scalar_ltv(0.0, 0.0, vec![a]), &weights(0.0, 0.5)).unwrap();
        let want = 0.5 / (1.0 - a * a);
        assert!((pq.p_grid(0, 0)[(0, 0)] - want).abs() < 1e-10);
        assert!((pq.p_grid(0, 20)[(0, 0)] - want).abs() < 1e-10);
        assert!(jump_lyapunov(&scalar_ltv(0.0, 0.0, vec![1.2]), &weights(0.0, 0.5)).is_err());
    }

    #[test]
    fn scalar_riccati() {
        let sol = jump_riccati(&scalar_ltv(0.0, 1.0, vec![]), &weights(1.0, 0.0)).unwrap();
        assert!((sol.quadratic.p_grid(0, 7)[(0, 0)] - 1.0).abs() < 1e-8);
        assert!((sol.gain.k(0, 0.33)[(0, 0)] - 1.0).abs() < 1e-8);
        assert!(sol.closed_loop_radius < 1.0);
        assert!(jump_riccati(&scalar_ltv(1.0, 0.0, vec![]), &weights(1.0, 0.0)).is_err());
    }

    #[test]
    fn bisection_mechanics() {
        let r = bisect_level(|rho| rho <= 0.37, 0.01, 10.0).unwrap();
        assert!((0.3663..=0.37).contains(&r), "{r}");
        assert_eq!(bisect_level(|_| true, 0.1, 2.0).unwrap(), 2.0);
        assert!(matches!(bisect_level(|_| false, 0.1, 2.0), Err(Error::LevelInfeasible(_))));
    }

    #[test]
    fn packing_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        assert_eq!(pack_lower(&m), vec![1.0, 2.0, 4.0, 3.0, 5.0, 6.0]);
        assert_eq!(unpack_lower(3, &pack_lower(&m)), m);
    }
}
