use nalgebra::{Complex, DMatrix, DVector};

use super::flow::{run_with_events, EventSpec, FlowOptions};
use super::orbit::PeriodicOrbit;
use super::rk::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::eigenvalues_by_modulus;
use crate::model::HybridModel;

pub(crate) struct SensitivityFlow {
    pub t: f64,
    pub x: Vec<f64>,
    pub phi: DMatrix<f64>,
    pub event: bool,
}

/// Integrate the state together with its variational equation `Phi' = (df/dx) Phi`.
pub(crate) fn flow_with_sensitivity(
    model: &HybridModel,
    phase: usize,
    t0: f64,
    x0: &[f64],
    phi0: &DMatrix<f64>,
    t_end: f64,
    stop_at_surface: bool,
    u: &[f64],
    tol: Tolerances,
) -> Result<SensitivityFlow> {
    let n = model.n();
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let x = &y[..n];
        let fx = model.field(phase, x, u);
        dy[..n].copy_from_slice(&fx);
        let (jx, _) = model.field_jacobians(phase, x, u);
        let phi = DMatrix::from_column_slice(n, n, &y[n..]);
        let dphi = jx * phi;
        dy[n..].copy_from_slice(dphi.as_slice());
    };
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(phi0.as_slice());
    let surface = model.surface(phase).filter(|_| stop_at_surface);
    let residual = |y: &[f64]| surface.map(|s| s.residual(&y[..n])).unwrap_or(1.0);
    let guard = |y: &[f64]| surface.map(|s| s.guard_value(&y[..n])).unwrap_or(-1.0);
    let spec = EventSpec { residual: &residual, guard: &guard };
    let opts = FlowOptions { tol, record: false, ..FlowOptions::default() };
    let raw = run_with_events(&rhs, t0, y0, t_end, surface.map(|_| &spec), &opts)?;
    Ok(SensitivityFlow { t: raw.t, x: raw.x[..n].to_vec(), phi: DMatrix::from_column_slice(n, n, &raw.x[n..]), event: raw.event })
}

/// Reset map and saltation matrix at an impact from `phase`:
/// `S = dDelta/dx + (f+ - dDelta/dx f-) c' / (c' f-)`.
pub fn saltation(model: &HybridModel, phase: usize, x_pre: &[f64], u: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let surface = model.surface(phase).ok_or_else(|| Error::Model(format!("phase {phase} has no switching surface")))?;
    let n = model.n();
    let x_post = model.apply_delta(phase, x_pre);
    let jd = model.delta_jacobian(phase, x_pre);
    let f_minus = DVector::from_vec(model.field(phase, x_pre, u));
    let f_plus = DVector::from_vec(model.field(model.next_phase(phase), &x_post, u));
    let c = DVector::from_column_slice(&surface.c_minus);
    let cf = c.dot(&f_minus);
    let fscale = f_minus.norm().max(1e-300);
    if cf.abs() <= 1e-6 * fscale {
        return Err(Error::Grazing(format!("c'f = {cf:e} at impact from phase {phase}")));
    }
    let corr = (&f_plus - &jd * &f_minus) * c.transpose() / cf;
    debug_assert_eq!(corr.nrows(), n);
    Ok((x_post, jd + corr))
}

/// Full-state monodromy matrix over one period, with saltation at every impact.
pub fn monodromy(model: &HybridModel, orbit: &PeriodicOrbit) -> Result<DMatrix<f64>> {
    monodromy_with_tol(model, orbit, Tolerances::tight())
}

pub fn monodromy_with_tol(model: &HybridModel, orbit: &PeriodicOrbit, tol: Tolerances) -> Result<DMatrix<f64>> {
    let n = model.n();
    let mut phi = DMatrix::identity(n, n);
    let mut x = orbit.initial_state();
    let u = orbit.nominal_input();
    let mut t = 0.0;
    for seg in orbit.segments() {
        let (_, t_end) = seg.span();
        let hybrid = model.surface(seg.phase).is_some();
        // Overshoot the horizon a little so the event, not the clock, ends the phase.
        let horizon = if hybrid { t_end + 0.5 * orbit.period() } else { t_end };
        let r = flow_with_sensitivity(model, seg.phase, t, &x, &phi, horizon, hybrid, &u, tol)?;
        t = r.t;
        x = r.x;
        phi = r.phi;
        if hybrid {
            if !r.event {
                return Err(Error::Numerical(format!("no impact found in phase {}", seg.phase)));
            }
            let (xp, s) = saltation(model, seg.phase, &x, &u)?;
            phi = s * phi;
            x = xp;
        }
    }
    Ok(phi)
}

/// Floquet multipliers (eigenvalues of the monodromy), sorted by decreasing modulus.
pub fn floquet(monodromy: &DMatrix<f64>) -> Vec<Complex<f64>> {
    eigenvalues_by_modulus(monodromy)
}
