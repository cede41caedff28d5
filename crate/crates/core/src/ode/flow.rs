use std::io::Write;

use serde::{Deserialize, Serialize};

use super::rk::{dopri_step, AcceptedStep, Stepper, Tolerances};
use crate::error::{Error, Result};
use crate::model::HybridModel;

/// State feedback `u = k(t, x)` applied during simulation.
pub trait Feedback: Sync {
    fn control(&self, t: f64, x: &[f64]) -> Vec<f64>;
}

impl<F> Feedback for F
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self(t, x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub tol: Tolerances,
    /// Required `|c'x - d|` at a located event.
    pub event_tol: f64,
    pub max_impacts: usize,
    /// Record accepted steps as trajectory samples.
    pub record: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { tol: Tolerances::default(), event_tol: 1e-10, max_impacts: 10_000, record: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub phase: usize,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub t: f64,
    pub x: Vec<f64>,
    pub phase: usize,
    /// Phase whose exit surface stopped the integration, if any.
    pub event: Option<usize>,
    pub samples: Vec<FlowSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub t: f64,
    pub phase: usize,
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HybridFlow {
    pub t: f64,
    pub x: Vec<f64>,
    pub phase: usize,
    pub impacts: Vec<ImpactRecord>,
    pub samples: Vec<FlowSample>,
}

pub(crate) struct EventSpec<'a> {
    pub residual: &'a (dyn Fn(&[f64]) -> f64 + Sync + 'a),
    pub guard: &'a (dyn Fn(&[f64]) -> f64 + Sync + 'a),
}

pub(crate) struct RawFlow {
    pub t: f64,
    pub x: Vec<f64>,
    pub event: bool,
    pub steps: Vec<AcceptedStep<f64>>,
}

/// Integrate until `t_end` or until the event surface is crossed where the guard holds.
pub(crate) fn run_with_events<F>(
    f: &F,
    t0: f64,
    x0: Vec<f64>,
    t_end: f64,
    event: Option<&EventSpec<'_>>,
    opts: &FlowOptions,
) -> Result<RawFlow>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let mut st = Stepper::new(f, t0, x0, opts.tol)?;
    let mut steps = Vec::new();
    let start_on_surface = event.map(|e| (e.residual)(&st.x).abs() <= 1e-9).unwrap_or(false);
    let mut first = true;
    while st.t < t_end {
        let step = st.step(f, t_end)?;
        if let Some(ev) = event {
            let h0 = (ev.residual)(&step.x0);
            let h1 = (ev.residual)(&step.x1);
            let crosses = (h0 < 0.0 && h1 >= 0.0) || (h0 > 0.0 && h1 <= 0.0);
            let skip = first && start_on_surface;
            if crosses && !skip {
                let (s, xe) = locate(f, &step, ev, h0, h1, opts.event_tol)?;
                if (ev.guard)(&xe) >= 0.0 {
                    let te = step.t0 + s;
                    if opts.record {
                        let mut fe = vec![0.0; xe.len()];
                        f(te, &xe, &mut fe);
                        steps.push(AcceptedStep { t0: step.t0, t1: te, x0: step.x0.clone(), x1: xe.clone(), f0: step.f0.clone(), f1: fe });
                    }
                    return Ok(RawFlow { t: te, x: xe, event: true, steps });
                }
            }
        }
        first = false;
        if opts.record {
            steps.push(step);
        }
    }
    Ok(RawFlow { t: st.t, x: st.x, event: false, steps })
}

/// Illinois regula falsi on the residual along a re-taken single step.
fn locate<F>(f: &F, step: &AcceptedStep<f64>, ev: &EventSpec<'_>, h0: f64, h1: f64, tol: f64) -> Result<(f64, Vec<f64>)>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let h = step.t1 - step.t0;
    let eval = |s: f64| -> Vec<f64> {
        if s == 0.0 {
            return step.x0.clone();
        }
        dopri_step(f, step.t0, &step.x0, &step.f0, s).0
    };
    let (mut a, mut fa) = (0.0, h0);
    let (mut b, mut fb) = (h, h1);
    let mut xb = step.x1.clone();
    if fb.abs() <= tol {
        return Ok((b, xb));
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let s = (a * fb - b * fa) / (fb - fa);
        let s = if s.is_finite() && s > a.min(b) && s < a.max(b) { s } else { 0.5 * (a + b) };
        let xs = eval(s);
        let fs = (ev.residual)(&xs);
        if fs.abs() <= tol || (b - a).abs() < 1e-15 * h.abs().max(1e-300) {
            return Ok((s, xs));
        }
        if (fs > 0.0) == (fb > 0.0) {
            b = s;
            fb = fs;
            xb = xs;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = s;
            fa = fs;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    if fb.abs() <= 10.0 * tol {
        return Ok((b, xb));
    }
    Err(Error::Numerical("event localization did not converge".into()))
}

fn model_rhs<'a>(model: &'a HybridModel, phase: usize, feedback: Option<&'a dyn Feedback>) -> impl Fn(f64, &[f64], &mut [f64]) + 'a {
    move |t, x, dx| {
        let u = match feedback {
            Some(k) => k.control(t, x),
            None => Vec::new(),
        };
        let v = model.field(phase, x, &u);
        dx.copy_from_slice(&v);
    }
}

/// Flow of one phase from `x0` for at most `duration`, stopping at the exit surface.
pub fn integrate(
    model: &HybridModel,
    phase: usize,
    x0: &[f64],
    duration: f64,
    feedback: Option<&dyn Feedback>,
    opts: &FlowOptions,
) -> Result<FlowResult> {
    integrate_from(model, phase, 0.0, x0, duration, feedback, opts)
}

fn integrate_from(
    model: &HybridModel,
    phase: usize,
    t0: f64,
    x0: &[f64],
    duration: f64,
    feedback: Option<&dyn Feedback>,
    opts: &FlowOptions,
) -> Result<FlowResult> {
    if x0.len() != model.n() || phase >= model.num_phases() {
        return Err(Error::Dimension(format!("state of length {} / phase {phase}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: t0 });
    }
    if duration <= 0.0 {
        return Err(Error::Config("integration span must be positive".into()));
    }
    let rhs = model_rhs(model, phase, feedback);
    let surface = model.surface(phase);
    let residual = |x: &[f64]| surface.map(|s| s.residual(x)).unwrap_or(1.0);
    let guard = |x: &[f64]| surface.map(|s| s.guard_value(x)).unwrap_or(-1.0);
    let spec = EventSpec { residual: &residual, guard: &guard };
    let raw = run_with_events(&rhs, t0, x0.to_vec(), t0 + duration, surface.map(|_| &spec), opts)?;
    let mut samples = Vec::new();
    if opts.record {
        samples.push(FlowSample { t: t0, x: x0.to_vec(), phase });
        samples.extend(raw.steps.iter().map(|s| FlowSample { t: s.t1, x: s.x1.clone(), phase }));
    }
    Ok(FlowResult { t: raw.t, x: raw.x, phase, event: raw.event.then_some(phase), samples })
}

/// Alternate phase flows and reset maps for `duration`, logging every impact.
pub fn hybrid_flow(
    model: &HybridModel,
    phase0: usize,
    x0: &[f64],
    duration: f64,
    feedback: Option<&dyn Feedback>,
    opts: &FlowOptions,
) -> Result<HybridFlow> {
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut phase = phase0;
    let mut impacts = Vec::new();
    let mut samples = Vec::new();
    while t < duration {
        let r = integrate_from(model, phase, t, &x, duration - t, feedback, opts)?;
        if opts.record {
            let skip = if samples.is_empty() { 0 } else { 1 };
            samples.extend(r.samples.into_iter().skip(skip));
        }
        t = r.t;
        x = r.x;
        if r.event.is_some() {
            if impacts.len() >= opts.max_impacts {
                return Err(Error::TooManyImpacts(impacts.len()));
            }
            let post = model.apply_delta(phase, &x);
            impacts.push(ImpactRecord { t, phase, x_pre: x.clone(), x_post: post.clone() });
            phase = model.next_phase(phase);
            x = post;
            if opts.record {
                samples.push(FlowSample { t, x: x.clone(), phase });
            }
        } else {
            break;
        }
    }
    Ok(HybridFlow { t, x, phase, impacts, samples })
}

/// Trajectory CSV with header `t,x1,...,xn,phase`.
pub fn write_trajectory_csv<W: Write>(mut w: W, samples: &[FlowSample], n: usize) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("phase".into());
    writeln!(w, "{}", header.join(","))?;
    for s in samples {
        let mut row = vec![format!("{}", s.t)];
        row.extend(s.x.iter().map(|v| format!("{v}")));
        row.push(s.phase.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HybridModel;

    fn harmonic() -> HybridModel {
        HybridModel::from_json_str(
            r#"{"n":2,"m":0,"phases":[{"f":[
            {"nvars":2,"terms":[{"c":1.0,"e":[0,1]}]},
            {"nvars":2,"terms":[{"c":-1.0,"e":[1,0]}]}],"surface":null,"delta":null}]}"#,
        )
        .unwrap()
    }

    pub(crate) fn bouncing() -> HybridModel {
        // x' = -1, reset x+ = 1 when x = 0
        HybridModel::from_json_str(
            r#"{"n":1,"m":0,"phases":[{"f":[{"nvars":1,"terms":[{"c":-1.0,"e":[0]}]}],
            "surface":{"c_minus":[1.0],"d_minus":0.0,"guard":{"nvars":1,"terms":[{"c":1.0,"e":[0]}]},
                       "c_plus":[1.0],"d_plus":1.0},
            "delta":[{"nvars":1,"terms":[{"c":1.0,"e":[0]}]}]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn harmonic_full_turn() {
        let m = harmonic();
        let r = integrate(&m, 0, &[1.0, 0.0], 2.0 * std::f64::consts::PI, None, &FlowOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8 && r.x[1].abs() < 1e-8);
        assert!(r.event.is_none());
    }

    #[test]
    fn continuous_hybrid_flow_matches_integrate() {
        let m = harmonic();
        let o = FlowOptions::default();
        let a = integrate(&m, 0, &[1.0, 0.5], 3.0, None, &o).unwrap();
        let b = hybrid_flow(&m, 0, &[1.0, 0.5], 3.0, None, &o).unwrap();
        assert_eq!(a.x, b.x);
        assert!(b.impacts.is_empty());
    }

    #[test]
    fn bouncing_scalar_impacts() {
        let m = bouncing();
        let r = hybrid_flow(&m, 0, &[1.0], 2.5, None, &FlowOptions::default()).unwrap();
        assert_eq!(r.impacts.len(), 2);
        assert!((r.impacts[0].t - 1.0).abs() < 1e-9);
        assert!((r.impacts[1].t - 2.0).abs() < 1e-9);
        assert!(r.impacts.iter().all(|i| i.x_pre[0].abs() <= 1e-10));
        assert!((r.x[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn too_many_impacts() {
        let m = bouncing();
        let o = FlowOptions { max_impacts: 3, record: false, ..FlowOptions::default() };
        assert!(matches!(hybrid_flow(&m, 0, &[1.0], 10.0, None, &o), Err(Error::TooManyImpacts(3))));
    }

    #[test]
    fn feedback_drives_integrator() {
        let m = HybridModel::from_json_str(
            r#"{"n":2,"m":1,"phases":[{"f":[
            {"nvars":3,"terms":[{"c":1.0,"e":[0,1,0]}]},
            {"nvars":3,"terms":[{"c":1.0,"e":[0,0,1]}]}],"surface":null,"delta":null}]}"#,
        )
        .unwrap();
        let k = |_t: f64, _x: &[f64]| vec![1.0];
        let r = integrate(&m, 0, &[0.0, 0.0], 2.0, Some(&k), &FlowOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-9 && (r.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[FlowSample { t: 0.0, x: vec![1.0, 2.0], phase: 0 }], 2).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x1,x2,phase\n0,1,2,0\n");
    }
}
