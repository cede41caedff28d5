//! Sampled data for the regional certification: polynomial transverse
//! dynamics at each tau sample, switching data and impact maps.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyap::{FeedbackGain, PeriodicQuadratic};
use crate::poly::Monomial;
use crate::transverse::{TransverseSample, TransverseSystem};
use crate::Poly;

/// Strictness margins: positivity of `V`, strict decrease, and
/// well-posedness of the tau dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub positive: f64,
    pub decrease: f64,
    pub wellposed: f64,
}

impl Margins {
    pub fn uniform(delta: f64) -> Self {
        Self { positive: delta, decrease: delta, wellposed: delta }
    }

    /// Default: `1e-4 * min z'f`.
    pub fn for_min_zf(min_zf: f64) -> Self {
        Self::uniform(1e-4 * min_zf)
    }

    /// Margins in coordinates `y = x / s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { positive: self.positive * s * s, decrease: self.decrease * s * s, wellposed: self.wellposed }
    }
}

/// `y -> p(s y)`.
pub fn scale_vars(p: &Poly, s: f64) -> Poly {
    let mut out = Poly::zero(p.nvars());
    for (m, &c) in p.terms() {
        out.add_term(m.clone(), c * s.powi(m.degree() as i32));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub seg: usize,
    pub tau: f64,
    pub dynamics: TransverseSample,
    /// `(c'x - d, guard(x))` in `x_perp`, for the premature-switching check.
    pub switching: Option<(Poly, Poly)>,
    /// `dV/dtau` at this sample as weights on sample values.
    pub slope: Vec<(usize, f64)>,
}

impl SampleSpec {
    /// The same sample in coordinates `y = x / s`.
    pub fn scaled(&self, s: f64) -> SampleSpec {
        let d = &self.dynamics;
        let comps = d.den_xdot.components().iter().map(|c| scale_vars(c, s).scale(1.0 / s)).collect();
        SampleSpec {
            seg: self.seg,
            tau: self.tau,
            dynamics: TransverseSample {
                tau: d.tau,
                num: scale_vars(&d.num, s),
                den: scale_vars(&d.den, s),
                den_xdot: crate::PolyVec::new(d.den_xdot.nvars(), comps).expect("same arity"),
            },
            switching: self.switching.as_ref().map(|(l, g)| (scale_vars(l, s), scale_vars(g, s))),
            slope: self.slope.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImpactSpec {
    pub index: usize,
    pub pre: usize,
    pub post: usize,
    /// `x_perp- -> x_perp+`.
    pub update: Vec<Poly>,
    /// Guard on the pre-impact surface, in `x_perp-`.
    pub guard: Poly,
}

impl ImpactSpec {
    /// The same impact in coordinates `y = x / s` on both sides.
    pub fn scaled(&self, s: f64) -> ImpactSpec {
        ImpactSpec {
            index: self.index,
            pre: self.pre,
            post: self.post,
            update: self.update.iter().map(|u| scale_vars(u, s).scale(1.0 / s)).collect(),
            guard: scale_vars(&self.guard, s),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub taus: usize,
    pub taylor_degree: u32,
    pub margins: Option<Margins>,
    pub premature: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { taus: 64, taylor_degree: 3, margins: None, premature: true }
    }
}

#[derive(Debug, Clone)]
pub struct VerificationProblem {
    pub k: usize,
    pub samples: Vec<SampleSpec>,
    pub impacts: Vec<ImpactSpec>,
    pub margins: Margins,
    pub taylor_degree: u32,
    pub taus_per_segment: usize,
    pub period: f64,
    pub hybrid: bool,
}

/// Slopes of the piecewise-linear interpolant: central differences inside,
/// one-sided at open ends, wrapped when `period` is given.
fn slopes(taus: &[f64], offset: usize, period: Option<f64>) -> Vec<Vec<(usize, f64)>> {
    let n = taus.len();
    (0..n)
        .map(|i| {
            if n == 1 {
                return vec![];
            }
            let (a, b, ta, tb) = match period {
                Some(t) => {
                    let a = (i + n - 1) % n;
                    let b = (i + 1) % n;
                    let ta = if i == 0 { taus[a] - t } else { taus[a] };
                    let tb = if i + 1 == n { taus[b] + t } else { taus[b] };
                    (a, b, ta, tb)
                }
                None if n >= 3 && (i == 0 || i + 1 == n) => {
                    // Second-order one-sided stencil at segment ends.
                    let idx = if i == 0 { [0, 1, 2] } else { [n - 1, n - 2, n - 3] };
                    let t = idx.map(|j| taus[j]);
                    return (0..3)
                        .map(|a| {
                            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                            let w = ((t[0] - t[b]) + (t[0] - t[c])) / ((t[a] - t[b]) * (t[a] - t[c]));
                            (offset + idx[a], w)
                        })
                        .collect();
                }
                None => {
                    let a = i.saturating_sub(1);
                    let b = (i + 1).min(n - 1);
                    (a, b, taus[a], taus[b])
                }
            };
            let h = tb - ta;
            vec![(offset + b, 1.0 / h), (offset + a, -1.0 / h)]
        })
        .collect()
}

fn affine_in_perp(c: &[f64], x_star: &[f64], pi: &DMatrix<f64>, d: f64) -> Poly {
    let pc = pi * nalgebra::DVector::from_column_slice(c);
    let c0: f64 = c.iter().zip(x_star).map(|(a, b)| a * b).sum::<f64>() - d;
    Poly::linear(pc.as_slice(), c0)
}

fn drop_small_constant(p: Poly, tol: f64) -> Poly {
    let one = Monomial::one(p.nvars());
    let c = p.coeff(&one);
    if c != 0.0 && c.abs() <= tol {
        let mut q = p;
        q.add_term(one, -c);
        q
    } else {
        p
    }
}

impl VerificationProblem {
    /// Samples a transverse system; `gain` closes the loop with `u = u* - K x_perp`.
    pub fn from_system(sys: &TransverseSystem, opts: &SampleOptions, gain: Option<&FeedbackGain>) -> Result<Self> {
        if opts.taus < 2 {
            return Err(Error::Config("at least two tau samples are required".into()));
        }
        let k = sys.dim();
        let hybrid = sys.orbit.is_hybrid();
        let nseg = sys.num_segments();
        let mut samples = Vec::new();
        let mut seg_first = Vec::with_capacity(nseg);
        for seg in 0..nseg {
            let (a, b) = sys.segment_span(seg);
            let taus: Vec<f64> = if hybrid {
                (0..opts.taus).map(|j| a + (b - a) * j as f64 / (opts.taus - 1) as f64).collect()
            } else {
                (0..opts.taus).map(|j| a + (b - a) * j as f64 / opts.taus as f64).collect()
            };
            let offset = samples.len();
            seg_first.push(offset);
            let sl = slopes(&taus, offset, if hybrid { None } else { Some(b - a) });
            for (j, (&tau, slope)) in taus.iter().zip(sl).enumerate() {
                let fr = sys.frame(seg, tau)?;
                let kg = gain.map(|g| g.k(seg, tau));
                let dynamics = sys.polynomial_sample(&fr, opts.taylor_degree, kg.as_ref())?;
                let switching = match sys.model.surface(fr.phase) {
                    Some(s) if hybrid && opts.premature && j + 1 < taus.len() => {
                        let lin = affine_in_perp(&s.c_minus, fr.x_star.as_slice(), &fr.pi, s.d_minus);
                        let guard = s.guard.substitute_affine(&fr.pi.transpose(), &fr.x_star)?;
                        Some((lin, guard))
                    }
                    _ => None,
                };
                samples.push(SampleSpec { seg, tau, dynamics, switching, slope });
            }
        }
        let mut impacts = Vec::new();
        for i in 0..sys.orbit.impacts().len() {
            let (pre, post) = sys.impact_frames(i)?;
            let delta = sys.model.delta_map(pre.phase).substitute_affine(&pre.pi.transpose(), &pre.x_star)?;
            let mut update = Vec::with_capacity(k);
            for j in 0..k {
                let mut u = Poly::constant(k, -post.pi.row(j).dot(&post.x_star.transpose()));
                for (l, comp) in delta.components().iter().enumerate() {
                    u = u.add(&comp.scale(post.pi[(j, l)]))?;
                }
                update.push(drop_small_constant(u, 1e-7));
            }
            let surface =
                sys.model.surface(pre.phase).ok_or_else(|| Error::Model(format!("phase {} has no switching surface", pre.phase)))?;
            let guard = surface.guard.substitute_affine(&pre.pi.transpose(), &pre.x_star)?;
            let post_seg = (i + 1) % nseg;
            let pre_idx = seg_first[i] + opts.taus - 1;
            impacts.push(ImpactSpec { index: i, pre: pre_idx, post: seg_first[post_seg], update, guard });
        }
        Ok(Self {
            k,
            samples,
            impacts,
            margins: opts.margins.unwrap_or_else(|| Margins::for_min_zf(sys.family.min_zf)),
            taylor_degree: opts.taylor_degree,
            taus_per_segment: opts.taus,
            period: sys.orbit.period(),
            hybrid,
        })
    }

    /// Periodic continuous problem from explicit samples, equally spaced over `period`.
    pub fn from_dynamics(k: usize, dynamics: Vec<TransverseSample>, period: f64, margins: Margins) -> Self {
        let taus: Vec<f64> = dynamics.iter().map(|d| d.tau).collect();
        let sl = slopes(&taus, 0, Some(period));
        let n = dynamics.len();
        let samples =
            dynamics.into_iter().zip(sl).map(|(d, slope)| SampleSpec { seg: 0, tau: d.tau, dynamics: d, switching: None, slope }).collect();
        Self { k, samples, impacts: vec![], margins, taylor_degree: 0, taus_per_segment: n, period, hybrid: false }
    }

    /// The whole problem in coordinates `y = x / s`.
    pub fn scaled(&self, s: f64) -> VerificationProblem {
        VerificationProblem {
            samples: self.samples.iter().map(|x| x.scaled(s)).collect(),
            impacts: self.impacts.iter().map(|x| x.scaled(s)).collect(),
            margins: self.margins.scaled(s),
            ..self.clone()
        }
    }

    /// `V_i = x_perp' P(tau_i) x_perp / rho`.
    pub fn quadratic_values(&self, pq: &PeriodicQuadratic, rho: f64) -> Vec<Poly> {
        self.samples.iter().map(|s| quadratic_poly(&pq.p(s.seg, s.tau), 1.0 / rho)).collect()
    }

    /// Smallest `d(0) = z'f*` over the samples.
    pub fn min_zf(&self) -> f64 {
        self.samples.iter().map(|s| s.dynamics.den.constant_term()).fold(f64::INFINITY, f64::min)
    }
}

pub fn quadratic_poly(p: &DMatrix<f64>, scale: f64) -> Poly {
    let k = p.nrows();
    let mut out = Poly::zero(k);
    for i in 0..k {
        for j in 0..k {
            let mut e = vec![0u32; k];
            e[i] += 1;
            e[j] += 1;
            out.add_term(Monomial::new(e), scale * p[(i, j)]);
        }
    }
    out
}
