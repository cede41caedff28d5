//! Moving transversal surfaces, transverse coordinates and the transverse
//! linearization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::grid_derivative;
use crate::model::HybridModel;
use crate::ode::rk::{hermite, hermite_derivative, solve, Tolerances};
use crate::ode::{PeriodicOrbit, Side};
use crate::{Poly, PolyVec};

/// Explicit surface normals on a grid, one segment per orbit segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSegment {
    pub phase: usize,
    pub tau: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub segments: Vec<GridSegment>,
}

impl SurfaceGrid {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Parse { location: format!("line {}, column {}", e.line(), e.column()), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }
}

#[derive(Debug, Clone)]
pub enum ZSpec {
    /// `z = f(x*) / |f(x*)|`.
    Orthogonal,
    /// Orthogonal normals bent towards the switching normals near impacts.
    Blended,
    Explicit(SurfaceGrid),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySegment {
    pub phase: usize,
    pub tau: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub dz: Vec<Vec<f64>>,
    /// Rows of the basis matrix at each grid point.
    pub pi: Vec<Vec<Vec<f64>>>,
}

/// The family of surfaces `S(tau) = {y : z(tau)'(y - x*(tau)) = 0}` with its
/// moving orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceFamily {
    pub n: usize,
    pub period: f64,
    pub kind: String,
    pub w: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    /// Well-posedness margin: `z'f(x*) > delta` on the grid.
    pub delta: f64,
    pub min_zf: f64,
    pub segments: Vec<FamilySegment>,
}

/// Completion of `w` to an orthonormal basis `eta_1 = w, eta_2, ..., eta_n`
/// (columns of the Householder reflection taking `e_1` to `w`).
pub fn complete_basis(w: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = w.len();
    let mut v = -w.clone();
    v[0] += 1.0;
    let vv = v.dot(&v);
    let h = if vv < 1e-24 { DMatrix::identity(n, n) } else { DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / vv) };
    (0..n).map(|j| h.column(j).into_owned()).collect()
}

/// Basis of `z`-perpendicular rows `xi_j = eta_j - (eta_j'z)/(1 + eta_1'z) (eta_1 + z)`;
/// for `n = 2` the planar rule `[-z_2, z_1]`.
pub fn build_basis(z: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
    if z.len() != w.len() || z.len() < 2 {
        return Err(Error::Dimension(format!("basis for z of length {}, w of length {}", z.len(), w.len())));
    }
    let z = DVector::from_column_slice(z);
    let eta = complete_basis(&DVector::from_column_slice(w));
    Ok(rotated_basis(&z, &z, &eta)?.0)
}

/// Basis matrix and its derivative along `dz`.
fn rotated_basis(z: &DVector<f64>, dz: &DVector<f64>, eta: &[DVector<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = z.len();
    if n == 2 {
        let pi = DMatrix::from_row_slice(1, 2, &[-z[1], z[0]]);
        let dpi = DMatrix::from_row_slice(1, 2, &[-dz[1], dz[0]]);
        return Ok((pi, dpi));
    }
    let e1 = &eta[0];
    let den = 1.0 + e1.dot(z);
    if den <= 1e-12 {
        return Err(Error::AntipodalSeed);
    }
    let dden = e1.dot(dz);
    let s = e1 + z;
    let mut pi = DMatrix::zeros(n - 1, n);
    let mut dpi = DMatrix::zeros(n - 1, n);
    for j in 1..n {
        let a = eta[j].dot(z) / den;
        let da = eta[j].dot(dz) / den - eta[j].dot(z) * dden / (den * den);
        let xi = &eta[j] - &s * a;
        let dxi = -(&s * da) - dz * a;
        pi.set_row(j - 1, &xi.transpose());
        dpi.set_row(j - 1, &dxi.transpose());
    }
    Ok((pi, dpi))
}

/// Seeded random unit vector kept away from every `+-z` on the grid.
pub fn pick_w(zs: &[DVector<f64>], seed: u64) -> Result<DVector<f64>> {
    let n = zs.first().map(|z| z.len()).ok_or(Error::NoInputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0;
    while draws < 10_000 {
        let v: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let r = v.norm();
        if !(0.01..=1.0).contains(&r) {
            continue;
        }
        draws += 1;
        let w = v / r;
        if zs.iter().all(|z| 1.0 - w.dot(z).abs() >= 1e-3) {
            return Ok(w);
        }
    }
    Err(Error::SeedRejection(draws))
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let r = v.norm();
    v / r
}

/// Grid derivative of unit vectors, projected onto the tangent space.
fn unit_derivatives(ts: &[f64], zs: &[DVector<f64>], period: Option<f64>) -> Vec<DVector<f64>> {
    (0..ts.len())
        .map(|i| {
            let d = grid_derivative(ts, zs, i, period);
            &d - &zs[i] * zs[i].dot(&d)
        })
        .collect()
}

/// Normalized cubic Hermite interpolant of `z` and its derivative.
fn interp_unit(ts: &[f64], zs: &[DVector<f64>], dzs: &[DVector<f64>], t: f64) -> (DVector<f64>, DVector<f64>) {
    let k = ts.partition_point(|&s| s <= t).clamp(1, ts.len() - 1) - 1;
    let (a, b) = (ts[k], ts[k + 1]);
    let h = hermite(a, b, zs[k].as_slice(), zs[k + 1].as_slice(), dzs[k].as_slice(), dzs[k + 1].as_slice(), t);
    let dh = hermite_derivative(a, b, zs[k].as_slice(), zs[k + 1].as_slice(), dzs[k].as_slice(), dzs[k + 1].as_slice(), t);
    let h = DVector::from_vec(h);
    let dh = DVector::from_vec(dh);
    let r = h.norm();
    let z = &h / r;
    let dz = (&dh - &z * z.dot(&dh)) / r;
    (z, dz)
}

/// Build the surface family along `orbit` on the orbit's knot grid.
pub fn make_surfaces(model: &HybridModel, orbit: &PeriodicOrbit, spec: &ZSpec, seed: u64) -> Result<SurfaceFamily> {
    let n = orbit.n();
    if n < 2 {
        return Err(Error::Dimension("transverse coordinates need n >= 2".into()));
    }
    let u = orbit.nominal_input();
    let nseg = orbit.segments().len();
    let mut zs_all: Vec<Vec<DVector<f64>>> = Vec::with_capacity(nseg);
    let mut dzs_all: Vec<Vec<DVector<f64>>> = Vec::with_capacity(nseg);
    let mut min_f = f64::INFINITY;
    for (k, seg) in orbit.segments().iter().enumerate() {
        let fs: Vec<DVector<f64>> = seg.x.iter().map(|x| DVector::from_vec(model.field(seg.phase, x, &u))).collect();
        min_f = fs.iter().map(|f| f.norm()).fold(min_f, f64::min);
        let zs: Vec<DVector<f64>> = match spec {
            ZSpec::Orthogonal => fs.iter().map(|f| unit(f.clone())).collect(),
            ZSpec::Blended => {
                let (a, b) = seg.span();
                let ell = 0.15 * (b - a);
                let entry = if model.is_hybrid() {
                    let prev = (seg.phase + model.num_phases() - 1) % model.num_phases();
                    model.surface(prev).map(|s| unit(DVector::from_column_slice(&s.c_plus)))
                } else {
                    None
                };
                let exit = model.surface(seg.phase).map(|s| unit(DVector::from_column_slice(&s.c_minus)));
                seg.t
                    .iter()
                    .zip(&fs)
                    .map(|(&t, f)| {
                        let mut z = unit(f.clone());
                        if let Some(c) = &entry {
                            let s = (-((t - a) / ell).powi(2)).exp();
                            z = unit(&z * (1.0 - s) + c * s);
                        }
                        if let Some(c) = &exit {
                            let s = (-((b - t) / ell).powi(2)).exp();
                            z = unit(&z * (1.0 - s) + c * s);
                        }
                        z
                    })
                    .collect()
            }
            ZSpec::Explicit(grid) => {
                let g = grid.segments.get(k).ok_or_else(|| Error::Config(format!("surface grid has no segment {k}")))?;
                if g.phase != seg.phase || g.tau.len() != g.z.len() || g.tau.len() < 2 {
                    return Err(Error::Config(format!("surface grid segment {k} is inconsistent with the orbit")));
                }
                let (a, b) = seg.span();
                let slack = 1e-9 * orbit.period().max(1.0);
                if g.tau[0] > a + slack || *g.tau.last().unwrap() < b - slack {
                    return Err(Error::Config(format!("surface grid segment {k} does not cover [{a}, {b}]")));
                }
                let gz: Vec<DVector<f64>> =
                    g.z.iter()
                        .map(|z| {
                            if z.len() != n {
                                return Err(Error::Dimension(format!("surface normal of length {}", z.len())));
                            }
                            let v = DVector::from_column_slice(z);
                            if v.norm() < 1e-12 {
                                return Err(Error::ZeroNormal(format!("surface grid segment {k}")));
                            }
                            Ok(unit(v))
                        })
                        .collect::<Result<_>>()?;
                let closed = !model.is_hybrid() && g.tau[0].abs() <= slack && (g.tau.last().unwrap() - orbit.period()).abs() <= slack;
                let gdz = unit_derivatives(&g.tau, &gz, closed.then(|| orbit.period()));
                seg.t.iter().map(|&t| interp_unit(&g.tau, &gz, &gdz, t).0).collect()
            }
        };
        let closed = (!model.is_hybrid()).then(|| orbit.period());
        dzs_all.push(unit_derivatives(&seg.t, &zs, closed));
        zs_all.push(zs);
    }
    let delta = 1e-3 * min_f;
    // Transversality and alignment.
    let mut min_zf = f64::INFINITY;
    for (k, seg) in orbit.segments().iter().enumerate() {
        for (i, x) in seg.x.iter().enumerate() {
            let f = DVector::from_vec(model.field(seg.phase, x, &u));
            let zf = zs_all[k][i].dot(&f);
            min_zf = min_zf.min(zf);
            if !(zf > delta) {
                return Err(Error::Transversality { tau: seg.t[i], value: zf });
            }
        }
    }
    if model.is_hybrid() {
        for (i, imp) in orbit.impacts().iter().enumerate() {
            let surf = model.surface(imp.phase).unwrap();
            let pre = zs_all[i].last().unwrap();
            let post = &zs_all[(i + 1) % nseg][0];
            let cm = unit(DVector::from_column_slice(&surf.c_minus));
            let cp = unit(DVector::from_column_slice(&surf.c_plus));
            if pre.dot(&cm) < 1.0 - 1e-8 || post.dot(&cp) < 1.0 - 1e-8 {
                return Err(Error::Alignment { impact: i });
            }
        }
    }
    let flat: Vec<DVector<f64>> = zs_all.iter().flatten().cloned().collect();
    let w = if n == 2 {
        let mut e = DVector::zeros(2);
        e[0] = 1.0;
        e
    } else {
        pick_w(&flat, seed)?
    };
    let eta = complete_basis(&w);
    let mut segments = Vec::with_capacity(nseg);
    for (k, seg) in orbit.segments().iter().enumerate() {
        let pi = zs_all[k]
            .iter()
            .zip(&dzs_all[k])
            .map(|(z, dz)| rotated_basis(z, dz, &eta).map(|(p, _)| crate::linalg::rows_of(&p)))
            .collect::<Result<Vec<_>>>()?;
        segments.push(FamilySegment {
            phase: seg.phase,
            tau: seg.t.clone(),
            z: zs_all[k].iter().map(|v| v.as_slice().to_vec()).collect(),
            dz: dzs_all[k].iter().map(|v| v.as_slice().to_vec()).collect(),
            pi,
        });
    }
    let kind = match spec {
        ZSpec::Orthogonal => "orthogonal",
        ZSpec::Blended => "blended",
        ZSpec::Explicit(_) => "explicit",
    };
    Ok(SurfaceFamily {
        n,
        period: orbit.period(),
        kind: kind.into(),
        w: w.as_slice().to_vec(),
        eta: eta.iter().map(|v| v.as_slice().to_vec()).collect(),
        delta,
        min_zf,
        segments,
    })
}

impl SurfaceFamily {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("surface family serializes")
    }

    /// The `(tau, z)` grid, as accepted by [`ZSpec::Explicit`].
    pub fn grid(&self) -> SurfaceGrid {
        SurfaceGrid { segments: self.segments.iter().map(|s| GridSegment { phase: s.phase, tau: s.tau.clone(), z: s.z.clone() }).collect() }
    }

    pub fn is_orthogonal(&self) -> bool {
        self.kind == "orthogonal"
    }

    fn eta(&self) -> Vec<DVector<f64>> {
        self.eta.iter().map(|v| DVector::from_column_slice(v)).collect()
    }

    /// `z` and `dz/dtau` inside segment `seg`.
    pub fn normal(&self, seg: usize, tau: f64) -> (DVector<f64>, DVector<f64>) {
        let s = &self.segments[seg];
        let k = s.tau.partition_point(|&t| t <= tau).clamp(1, s.tau.len() - 1) - 1;
        let zs: Vec<DVector<f64>> = s.z[k..k + 2].iter().map(|v| DVector::from_column_slice(v)).collect();
        let dzs: Vec<DVector<f64>> = s.dz[k..k + 2].iter().map(|v| DVector::from_column_slice(v)).collect();
        interp_unit(&s.tau[k..k + 2], &zs, &dzs, tau)
    }
}

/// Everything evaluated at one `tau`.
#[derive(Debug, Clone)]
pub struct Frame {
    pub seg: usize,
    pub phase: usize,
    pub tau: f64,
    pub x_star: DVector<f64>,
    pub f_star: DVector<f64>,
    pub u_star: Vec<f64>,
    pub z: DVector<f64>,
    pub dz: DVector<f64>,
    pub pi: DMatrix<f64>,
    pub dpi: DMatrix<f64>,
}

impl Frame {
    pub fn zf(&self) -> f64 {
        self.z.dot(&self.f_star)
    }
}

#[derive(Debug, Clone)]
pub struct TransverseRhs {
    pub xdot: DVector<f64>,
    pub taudot: f64,
    pub num: f64,
    pub den: f64,
}

/// Linearization `x_perp' = A x_perp + B v` on the family grid, plus impact maps.
#[derive(Debug, Clone)]
pub struct TransverseLtv {
    pub segments: Vec<LtvSegment>,
    pub impacts: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct LtvSegment {
    pub phase: usize,
    pub tau: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

/// Transverse dynamics at one sample as polynomials in `x_perp`:
/// numerator and denominator of `tau'`, and `den * x_perp'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseSample {
    pub tau: f64,
    pub num: Poly,
    pub den: Poly,
    pub den_xdot: PolyVec,
}

/// A model, its orbit and a surface family, viewed together.
#[derive(Clone, Copy)]
pub struct TransverseSystem<'a> {
    pub model: &'a HybridModel,
    pub orbit: &'a PeriodicOrbit,
    pub family: &'a SurfaceFamily,
}

impl<'a> TransverseSystem<'a> {
    pub fn new(model: &'a HybridModel, orbit: &'a PeriodicOrbit, family: &'a SurfaceFamily) -> Result<Self> {
        if family.segments.len() != orbit.segments().len() || family.n != orbit.n() || orbit.n() != model.n() {
            return Err(Error::Dimension("surface family does not match the orbit".into()));
        }
        Ok(Self { model, orbit, family })
    }

    /// Dimension of `x_perp`.
    pub fn dim(&self) -> usize {
        self.orbit.n() - 1
    }

    pub fn num_segments(&self) -> usize {
        self.family.segments.len()
    }

    pub fn segment_span(&self, seg: usize) -> (f64, f64) {
        self.orbit.segments()[seg].span()
    }

    pub fn frame(&self, seg: usize, tau: f64) -> Result<Frame> {
        let oseg = &self.orbit.segments()[seg];
        let (a, b) = oseg.span();
        let tau = tau.clamp(a, b);
        let x_star = DVector::from_vec(oseg.state(tau));
        let mut u_star = self.orbit.nominal_input();
        u_star.resize(self.model.m(), 0.0);
        let f_star = DVector::from_vec(self.model.field(oseg.phase, x_star.as_slice(), &u_star));
        let (z, dz) = self.family.normal(seg, tau);
        let (pi, dpi) = rotated_basis(&z, &dz, &self.family.eta())?;
        Ok(Frame { seg, phase: oseg.phase, tau, x_star, f_star, u_star, z, dz, pi, dpi })
    }

    pub fn frame_at(&self, tau: f64, side: Side) -> Result<Frame> {
        self.frame(self.orbit.segment_index(tau, side), tau)
    }

    /// Exact transverse dynamics; `u = None` uses the nominal input.
    pub fn rhs(&self, fr: &Frame, xp: &DVector<f64>, u: Option<&[f64]>) -> Result<TransverseRhs> {
        let x = &fr.x_star + fr.pi.transpose() * xp;
        let u = u.map(|v| v.to_vec()).unwrap_or_else(|| fr.u_star.clone());
        let fx = DVector::from_vec(self.model.field(fr.phase, x.as_slice(), &u));
        let off = fr.pi.transpose() * xp;
        let num = fr.z.dot(&fx);
        let den = fr.zf() - fr.dz.dot(&off);
        if !(den > 0.0) {
            return Err(Error::Breakdown(den));
        }
        let taudot = num / den;
        let xdot = &fr.dpi * &off * taudot + &fr.pi * &fx - &fr.pi * &fr.f_star * taudot;
        Ok(TransverseRhs { xdot, taudot, num, den })
    }

    /// `(A, B)` at one frame.
    pub fn linearize(&self, fr: &Frame) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.orbit.n();
        let (jx, ju) = self.model.field_jacobians(fr.phase, fr.x_star.as_slice(), &fr.u_star);
        let pit = fr.pi.transpose();
        let zf = fr.zf();
        let mut a = &fr.pi * &jx * &pit;
        if n > 2 {
            a += &fr.dpi * &pit;
        }
        let pif = &fr.pi * &fr.f_star;
        let orthogonal = self.family.is_orthogonal();
        if !orthogonal {
            let dtau = (fr.z.transpose() * &jx * &pit + fr.dz.transpose() * &pit) / zf;
            a -= &pif * dtau;
        }
        let mut b = &fr.pi * &ju;
        if !orthogonal && ju.ncols() > 0 {
            let dtau_u = fr.z.transpose() * &ju / zf;
            b -= &pif * dtau_u;
        }
        (a, b)
    }

    pub fn linearization(&self) -> Result<TransverseLtv> {
        let mut segments = Vec::with_capacity(self.num_segments());
        for (k, s) in self.family.segments.iter().enumerate() {
            let mut a = Vec::with_capacity(s.tau.len());
            let mut b = Vec::with_capacity(s.tau.len());
            for &t in &s.tau {
                let (ak, bk) = self.linearize(&self.frame(k, t)?);
                a.push(ak);
                b.push(bk);
            }
            segments.push(LtvSegment { phase: s.phase, tau: s.tau.clone(), a, b });
        }
        let impacts = (0..self.orbit.impacts().len()).map(|i| self.impact_jacobian(i)).collect::<Result<_>>()?;
        Ok(TransverseLtv { segments, impacts })
    }

    /// Frames just before and just after impact `i`.
    pub fn impact_frames(&self, i: usize) -> Result<(Frame, Frame)> {
        let nseg = self.num_segments();
        let pre = self.frame(i, self.segment_span(i).1)?;
        let j = (i + 1) % nseg;
        let post = self.frame(j, self.segment_span(j).0)?;
        Ok((pre, post))
    }

    /// Nonlinear impact update of `x_perp` at impact `i`.
    pub fn impact_update(&self, i: usize, xp: &DVector<f64>) -> Result<DVector<f64>> {
        let (pre, post) = self.impact_frames(i)?;
        let x = &pre.x_star + pre.pi.transpose() * xp;
        let xn = DVector::from_vec(self.model.apply_delta(pre.phase, x.as_slice()));
        Ok(&post.pi * (xn - &post.x_star))
    }

    /// `A_d = Pi(tau_i+) dDelta/dx Pi(tau_i-)'`.
    pub fn impact_jacobian(&self, i: usize) -> Result<DMatrix<f64>> {
        let (pre, post) = self.impact_frames(i)?;
        let jd = self.model.delta_jacobian(pre.phase, pre.x_star.as_slice());
        Ok(&post.pi * jd * pre.pi.transpose())
    }

    pub fn from_transverse(&self, xp: &DVector<f64>, seg: usize, tau: f64) -> Result<DVector<f64>> {
        let fr = self.frame(seg, tau)?;
        Ok(&fr.x_star + fr.pi.transpose() * xp)
    }

    fn residual(&self, seg: usize, tau: f64, x: &DVector<f64>) -> Result<(f64, f64)> {
        let fr = self.frame(seg, tau)?;
        let off = x - &fr.x_star;
        let g = fr.z.dot(&off);
        let dg = fr.dz.dot(&off) - fr.zf();
        Ok((g, dg))
    }

    /// Solve `z(tau)'(x - x*(tau)) = 0` near `tau_hint` by safeguarded Newton.
    pub fn tau_project(&self, x: &DVector<f64>, seg_hint: usize, tau_hint: f64) -> Result<(usize, f64)> {
        let period = self.orbit.period();
        let hybrid = self.model.is_hybrid();
        let wrap = |t: f64| if hybrid { t } else { t.rem_euclid(period) };
        let mut seg = seg_hint;
        let mut tau = tau_hint;
        let (mut g, mut dg) = self.residual(seg, tau, x)?;
        for _ in 0..100 {
            if g.abs() <= 1e-10 {
                let tau = if !hybrid && tau >= period { 0.0 } else { tau };
                return Ok((seg, tau));
            }
            if dg == 0.0 {
                break;
            }
            let step = (-g / dg).clamp(-0.05 * period, 0.05 * period);
            let mut lambda = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let mut t = wrap(tau + lambda * step);
                let mut s = seg;
                if hybrid {
                    let (a, b) = self.segment_span(seg);
                    t = t.clamp(a, b);
                } else {
                    s = 0;
                }
                let (g2, dg2) = self.residual(s, t, x)?;
                if g2.abs() < g.abs() {
                    seg = s;
                    tau = t;
                    g = g2;
                    dg = dg2;
                    moved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if g.abs() <= 1e-10 {
            return Ok((seg, tau));
        }
        Err(Error::ProjectionFailed)
    }

    /// Projection started from the nearest orbit knot.
    pub fn tau_locate(&self, x: &DVector<f64>) -> Result<(usize, f64)> {
        let mut best = (f64::INFINITY, 0, 0.0);
        for (k, s) in self.orbit.segments().iter().enumerate() {
            for (t, xs) in s.t.iter().zip(&s.x) {
                let d: f64 = xs.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, k, *t);
                }
            }
        }
        self.tau_project(x, best.1, best.2)
    }

    pub fn to_transverse(&self, x: &DVector<f64>, seg_hint: usize, tau_hint: f64) -> Result<(DVector<f64>, usize, f64)> {
        let (seg, tau) = self.tau_project(x, seg_hint, tau_hint)?;
        let fr = self.frame(seg, tau)?;
        Ok((&fr.pi * (x - &fr.x_star), seg, tau))
    }

    /// Transverse monodromy: propagate `Phi' = (A - B K(tau)) Phi` through every
    /// segment and compose the impact maps.
    pub fn monodromy(&self, gain: Option<&(dyn Fn(usize, f64) -> DMatrix<f64> + Sync)>) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let mut phi = DMatrix::identity(k, k);
        let nseg = self.num_segments();
        for seg in 0..nseg {
            let (a, b) = self.segment_span(seg);
            let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
                let fr = match self.frame(seg, t) {
                    Ok(fr) => fr,
                    Err(_) => {
                        dy.fill(f64::NAN);
                        return;
                    }
                };
                let (mut am, bm) = self.linearize(&fr);
                if let Some(gk) = gain {
                    am -= &bm * gk(seg, t);
                }
                let p = DMatrix::from_column_slice(k, k, y);
                dy.copy_from_slice((am * p).as_slice());
            };
            let tol = Tolerances { rtol: 1e-10, atol: 1e-12, ..Tolerances::default() };
            let y = solve(&rhs, a, phi.as_slice().to_vec(), b, tol)?;
            phi = DMatrix::from_column_slice(k, k, &y);
            if seg < self.orbit.impacts().len() {
                phi = self.impact_jacobian(seg)? * phi;
            }
        }
        Ok(phi)
    }

    /// Polynomial transverse dynamics at one frame. The field is Taylor
    /// expanded to `degree` about `(x*, u*)` when the model has atoms;
    /// `gain` closes the loop with `u = u* - K x_perp`.
    pub fn polynomial_sample(&self, fr: &Frame, degree: u32, gain: Option<&DMatrix<f64>>) -> Result<TransverseSample> {
        let n = self.orbit.n();
        let m = self.model.m();
        let k = n - 1;
        let mut center = fr.x_star.as_slice().to_vec();
        center.extend_from_slice(&fr.u_star);
        let field = self.model.polynomial_field(fr.phase, &center, degree)?;
        let mut map = DMatrix::zeros(n + m, k);
        map.view_mut((0, 0), (n, k)).copy_from(&fr.pi.transpose());
        if let Some(kg) = gain {
            if kg.nrows() != m || kg.ncols() != k {
                return Err(Error::Dimension(format!("gain of shape {}x{}", kg.nrows(), kg.ncols())));
            }
            map.view_mut((n, 0), (m, k)).copy_from(&(-kg));
        }
        let shift = DVector::from_column_slice(&center);
        let fx = field.substitute_affine(&map, &shift)?;
        let comb = |row: &[f64]| -> Result<Poly> {
            let mut acc = Poly::zero(k);
            for (c, p) in row.iter().zip(fx.components()) {
                acc = acc.add(&p.scale(*c))?;
            }
            Ok(acc)
        };
        let num = comb(fr.z.as_slice())?;
        let pidz = &fr.pi * &fr.dz;
        let neg: Vec<f64> = pidz.iter().map(|v| -v).collect();
        let den = Poly::linear(&neg, fr.zf());
        let dpipt = &fr.dpi * fr.pi.transpose();
        let pif = &fr.pi * &fr.f_star;
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let row: Vec<f64> = fr.pi.row(j).iter().copied().collect();
            let pf = comb(&row)?;
            let lin_row: Vec<f64> = dpipt.row(j).iter().copied().collect();
            let rot = Poly::linear(&lin_row, 0.0);
            let term = num.mul(&rot)?.add(&den.mul(&pf)?)?.sub(&num.scale(pif[j]))?;
            comps.push(term);
        }
        Ok(TransverseSample { tau: fr.tau, num, den, den_xdot: PolyVec::new(k, comps)? })
    }
}
