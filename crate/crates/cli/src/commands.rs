use std::fmt;
use std::fs::File;
use std::io::BufWriter;

use anyhow::{bail, Context, Result};
use nalgebra::{Complex, DMatrix};
use orbitroa::linalg::spectral_radius;
use orbitroa::lyap::{jump_lyapunov, jump_riccati, FeedbackGain, PeriodicQuadratic};
use orbitroa::model::HybridModel;
use orbitroa::ode::{floquet, hybrid_flow, monodromy, write_trajectory_csv, Feedback, FlowOptions, ImpactRecord, PeriodicOrbit};
use orbitroa::sos::{alternate, multiplier_step, seed_level, AlternationOptions, Certificate, VerificationProblem};
use orbitroa::transverse::TransverseSystem;
use orbitroa::validate::{orbit_distance, validate as run_validation, ClosedLoop, ValidationOptions, ValidationReport};
use orbitroa::Error;
use serde::{Deserialize, Serialize};

use crate::setup::{self, rows, write_json, write_text, Setup};
use crate::Common;

/// Search interval for the seed level `rho`.
const RHO_BOUNDS: (f64, f64) = (1e-6, 1e3);
/// Relative change of `r` under tau doubling at which refinement stops.
const REFINE_TOL: f64 = 0.02;

/// A well-defined negative answer (exit code 2).
#[derive(Debug)]
pub struct Rejected(pub String);

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Rejected {}

fn pairs(zs: &[Complex<f64>]) -> Vec<[f64; 2]> {
    zs.iter().map(|z| [z.re, z.im]).collect()
}

#[derive(Serialize)]
struct MonodromyReport {
    period: f64,
    closure: f64,
    monodromy: Vec<Vec<f64>>,
    /// `[re, im]`, by decreasing modulus.
    multipliers: Vec<[f64; 2]>,
    identity_deviation: f64,
}

#[derive(Serialize)]
struct LtvSegmentOut {
    phase: usize,
    tau: Vec<f64>,
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct LtvReport {
    dim: usize,
    inputs: usize,
    segments: Vec<LtvSegmentOut>,
    impacts: Vec<Vec<Vec<f64>>>,
    transverse_monodromy: Vec<Vec<f64>>,
    multipliers: Vec<[f64; 2]>,
    spectral_radius: f64,
    max_abs_a: f64,
}

/// Quadratic seed on file: `V1 = x' P(tau) x / rho`.
#[derive(Serialize, Deserialize)]
struct SeedFile {
    rho: Option<f64>,
    taus: Option<usize>,
    quadratic: PeriodicQuadratic,
}

#[derive(Serialize)]
struct Refinement {
    taus: usize,
    radius: f64,
}

#[derive(Serialize)]
struct StabilizeReport {
    open_loop_radius: f64,
    closed_loop_radius: f64,
    sweeps: usize,
}

#[derive(Serialize)]
struct ClosedLoopModel {
    /// `u = u*(tau) - K(tau) x_perp`, `tau` from the projection onto the surfaces.
    feedback: String,
    model: serde_json::Value,
    surfaces: orbitroa::transverse::SurfaceGrid,
    gain: FeedbackGain,
}

#[derive(Serialize)]
struct SimulationReport {
    t: f64,
    x: Vec<f64>,
    phase: usize,
    impacts: Vec<ImpactRecord>,
    orbit_distance: f64,
}

fn system(s: &Setup) -> Result<TransverseSystem<'_>> {
    Ok(TransverseSystem::new(&s.model, &s.orbit, &s.family)?)
}

fn load_gain(c: &Common) -> Result<Option<FeedbackGain>> {
    c.gain
        .as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading gain {}", p.display()))?;
            Ok(FeedbackGain::from_json_str(&text)?)
        })
        .transpose()
}

fn write_orbit(c: &Common, model: &HybridModel, orbit: &PeriodicOrbit) -> Result<()> {
    let psi = monodromy(model, orbit)?;
    let n = psi.nrows();
    let report = MonodromyReport {
        period: orbit.period(),
        closure: orbit.closure_error(model),
        monodromy: rows(&psi),
        multipliers: pairs(&floquet(&psi)),
        identity_deviation: (&psi - DMatrix::identity(n, n)).amax(),
    };
    write_json(&c.out, "orbit.json", orbit)?;
    write_json(&c.out, "monodromy.json", &report)?;
    println!(
        "orbit: T={:.9} closure={:.3e} impacts={} max|Psi-I|={:.3e}",
        report.period,
        report.closure,
        orbit.impacts().len(),
        report.identity_deviation
    );
    let mods: Vec<String> = report.multipliers.iter().map(|[re, im]| format!("{:.9}", re.hypot(*im))).collect();
    println!("floquet: |lambda|=[{}]", mods.join(", "));
    Ok(())
}

pub fn orbit(c: &Common) -> Result<()> {
    let model = setup::load_model(c)?;
    let orbit = setup::find(c, &model)?;
    write_orbit(c, &model, &orbit)
}

fn ltv_report(sys: &TransverseSystem) -> Result<LtvReport> {
    let ltv = sys.linearization()?;
    let psi = sys.monodromy(None)?;
    let max_abs_a = ltv.segments.iter().flat_map(|s| s.a.iter()).map(|a| a.amax()).fold(0.0, f64::max);
    Ok(LtvReport {
        dim: sys.dim(),
        inputs: sys.model.m(),
        segments: ltv
            .segments
            .iter()
            .map(|s| LtvSegmentOut {
                phase: s.phase,
                tau: s.tau.clone(),
                a: s.a.iter().map(rows).collect(),
                b: s.b.iter().map(rows).collect(),
            })
            .collect(),
        impacts: ltv.impacts.iter().map(rows).collect(),
        multipliers: pairs(&floquet(&psi)),
        spectral_radius: spectral_radius(&psi),
        transverse_monodromy: rows(&psi),
        max_abs_a,
    })
}

fn write_translin(c: &Common, s: &Setup) -> Result<LtvReport> {
    let sys = system(s)?;
    let report = ltv_report(&sys)?;
    write_json(&c.out, "surfaces.json", &s.family)?;
    write_json(&c.out, "ltv.json", &report)?;
    println!(
        "translin: k={} surfaces={} min z'f={:.6e} max|A|={:.3e} impacts={} spectral_radius={:.9}",
        report.dim,
        s.family.kind,
        s.family.min_zf,
        report.max_abs_a,
        report.impacts.len(),
        report.spectral_radius
    );
    Ok(report)
}

pub fn translin(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    write_translin(c, &s).map(|_| ())
}

fn problem(c: &Common, sys: &TransverseSystem, taus: usize, gain: Option<&FeedbackGain>) -> Result<VerificationProblem> {
    Ok(VerificationProblem::from_system(sys, &setup::sample_options(c, taus)?, gain)?)
}

fn write_seed(c: &Common, s: &Setup, gain: Option<&FeedbackGain>) -> Result<PeriodicQuadratic> {
    let sys = system(s)?;
    let pq = match &c.quadratic {
        Some(p) => setup::read_json::<SeedFile>(p)?.quadratic,
        None => jump_lyapunov(&sys, &setup::weights(sys.dim(), sys.model.m()))?,
    };
    let vp = problem(c, &sys, c.taus, gain)?;
    let rho = seed_level(&vp, &pq, RHO_BOUNDS.0, RHO_BOUNDS.1)?;
    write_json(&c.out, "seed.json", &SeedFile { rho: Some(rho), taus: Some(c.taus), quadratic: pq.clone() })?;
    println!("seed: rho={rho:.6e} taus={} min_eig_P={:.6e}", c.taus, pq.min_eigenvalue());
    Ok(pq)
}

pub fn seed(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    let gain = load_gain(c)?;
    write_seed(c, &s, gain.as_ref()).map(|_| ())
}

/// Certificate at `taus` samples; on an infeasible seed, the failing
/// conditions at the smallest level are reported instead.
fn certify_at(
    c: &Common,
    sys: &TransverseSystem,
    pq: &PeriodicQuadratic,
    taus: usize,
    gain: Option<&FeedbackGain>,
) -> Result<std::result::Result<Certificate, Certificate>> {
    let vp = problem(c, sys, taus, gain)?;
    let opts = AlternationOptions { vdeg: c.vdeg, max_iter: c.alt_iter, ..AlternationOptions::default() };
    let rho = match seed_level(&vp, pq, RHO_BOUNDS.0, RHO_BOUNDS.1) {
        Ok(rho) => rho,
        Err(Error::LevelInfeasible(_)) => {
            let vs = vp.quadratic_values(pq, RHO_BOUNDS.0);
            let rep = multiplier_step(&vp, &vs, None);
            return Ok(Err(Certificate::assemble(&vp, &vs, &rep, vp.period, vp.hybrid)));
        }
        Err(e) => return Err(e.into()),
    };
    let mut cert = alternate(&vp, vp.quadratic_values(pq, rho), &opts)?;
    cert.seed_rho = rho;
    Ok(Ok(cert))
}

fn write_verify(c: &Common, s: &Setup, pq: &PeriodicQuadratic, gain: Option<&FeedbackGain>) -> Result<Certificate> {
    let sys = system(s)?;
    let cap = c.max_taus.unwrap_or(4 * c.taus);
    if cap < c.taus {
        bail!("--max-taus {cap} is below --taus {}", c.taus);
    }
    let mut taus = c.taus;
    let mut history: Vec<Refinement> = Vec::new();
    let cert = loop {
        let cert = match certify_at(c, &sys, pq, taus, gain)? {
            Ok(cert) => cert,
            Err(failed) => {
                write_json(&c.out, "certificate.json", &failed)?;
                println!("{}", failed.summary_line());
                for smp in failed.samples.iter().filter(|s| s.status.values().any(|v| *v != orbitroa::sos::ConditionStatus::Pass)) {
                    let bad: Vec<String> = smp
                        .status
                        .iter()
                        .filter(|(_, v)| **v != orbitroa::sos::ConditionStatus::Pass)
                        .map(|(k, v)| format!("{k:?}={v:?}"))
                        .collect();
                    eprintln!("  seg={} tau={:.6} {}", smp.seg, smp.tau, bad.join(" "));
                }
                return Err(Rejected(format!("seed fails at the smallest level {:e}", RHO_BOUNDS.0)).into());
            }
        };
        println!("verify: taus={taus} r={:.6} iterations={}", cert.radius, cert.iterations);
        let prev = history.last().map(|h| h.radius);
        history.push(Refinement { taus, radius: cert.radius });
        let settled = prev.is_some_and(|p| (cert.radius - p).abs() <= REFINE_TOL * p);
        if settled || 2 * taus > cap {
            break cert;
        }
        taus *= 2;
    };
    write_json(&c.out, "certificate.json", &cert)?;
    write_json(&c.out, "refinement.json", &history)?;
    println!("{}", cert.summary_line());
    if !cert.all_pass() {
        return Err(Rejected("certificate has failing conditions".into()).into());
    }
    Ok(cert)
}

pub fn verify(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    let gain = load_gain(c)?;
    let pq = match &c.quadratic {
        Some(p) => setup::read_json::<SeedFile>(p)?.quadratic,
        None => {
            let sys = system(&s)?;
            jump_lyapunov(&sys, &setup::weights(sys.dim(), sys.model.m()))?
        }
    };
    write_verify(c, &s, &pq, gain.as_ref()).map(|_| ())
}

fn write_stabilize(c: &Common, s: &Setup) -> Result<(FeedbackGain, PeriodicQuadratic)> {
    if s.model.m() == 0 {
        return Err(Error::NoInputs.into());
    }
    let sys = system(s)?;
    let open = spectral_radius(&sys.monodromy(None)?);
    let sol = jump_riccati(&sys, &setup::weights(sys.dim(), sys.model.m()))?;
    let report = StabilizeReport { open_loop_radius: open, closed_loop_radius: sol.closed_loop_radius, sweeps: sol.sweeps };
    let model: serde_json::Value = serde_json::from_str(&s.model.to_json_string())?;
    let cl = ClosedLoopModel { feedback: "u = u*(tau) - K(tau) x_perp".into(), model, surfaces: s.family.grid(), gain: sol.gain.clone() };
    write_json(&c.out, "gain.json", &sol.gain)?;
    write_json(&c.out, "closed_loop.json", &cl)?;
    write_json(&c.out, "stabilize.json", &report)?;
    write_json(&c.out, "quadratic.json", &SeedFile { rho: None, taus: None, quadratic: sol.quadratic.clone() })?;
    println!("stabilize: open_loop_radius={open:.9} closed_loop_radius={:.9} sweeps={}", sol.closed_loop_radius, sol.sweeps);
    if sol.closed_loop_radius >= 1.0 {
        return Err(Rejected("closed loop is not orbitally stable".into()).into());
    }
    Ok((sol.gain, sol.quadratic))
}

pub fn stabilize(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    write_stabilize(c, &s).map(|_| ())
}

pub fn optimize_z(c: &Common) -> Result<()> {
    let mut c = c.clone();
    c.z = crate::ZChoice::Optimize;
    let s = setup::setup(&c)?;
    let res = s.surfopt.as_ref().expect("optimize sets the result");
    write_json(&c.out, "surfaces.json", &s.family)?;
    write_json(&c.out, "surfopt.json", res)?;
    println!(
        "optimize-z: p={} cost {:.9} -> {:.9} min_radius {:.9} -> {:.9} iterations={}",
        res.p, res.cost_initial, res.cost_final, res.min_radius_initial, res.min_radius_final, res.iterations
    );
    Ok(())
}

pub fn simulate(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    let gain = load_gain(c)?;
    let x0 = c.x0.clone().unwrap_or_else(|| s.orbit.initial_state());
    if x0.len() != s.model.n() {
        bail!("--x0 has {} entries, the model has n = {}", x0.len(), s.model.n());
    }
    let sys = system(&s)?;
    let cl = gain.as_ref().map(|g| ClosedLoop::new(sys, g));
    let fb = cl.as_ref().map(|c| c as &dyn Feedback);
    let flow = hybrid_flow(&s.model, 0, &x0, c.periods * s.orbit.period(), fb, &FlowOptions::default())?;
    let path = c.out.join("trajectory.csv");
    std::fs::create_dir_all(&c.out)?;
    let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    write_trajectory_csv(BufWriter::new(file), &flow.samples, s.model.n())?;
    let report = SimulationReport {
        t: flow.t,
        orbit_distance: orbit_distance(&s.orbit, flow.phase, &flow.x),
        x: flow.x,
        phase: flow.phase,
        impacts: flow.impacts,
    };
    write_json(&c.out, "simulation.json", &report)?;
    println!(
        "simulate: t={:.6} impacts={} orbit_distance={:.3e} rows={}",
        report.t,
        report.impacts.len(),
        report.orbit_distance,
        flow.samples.len()
    );
    Ok(())
}

fn write_validate(c: &Common, s: &Setup, cert: &Certificate, gain: Option<&FeedbackGain>) -> Result<ValidationReport> {
    let sys = system(s)?;
    let opts = ValidationOptions { samples: c.samples, periods: c.periods, seed: c.seed, record: c.record, ..ValidationOptions::default() };
    let rep = run_validation(&sys, cert, gain, &opts)?;
    write_json(&c.out, "validation.json", &rep)?;
    for (i, traj) in rep.trajectories.iter().enumerate() {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, traj, s.model.n())?;
        write_text(&c.out, &format!("validation_{i:03}.csv"), &String::from_utf8(buf)?)?;
    }
    println!(
        "validate: converged={}/{} fraction={:.3} max_distance={:.3e} impacts_checked={} impact_violations={}",
        rep.converged, rep.samples, rep.fraction, rep.max_final_distance, rep.impacts_checked, rep.impact_violations
    );
    if !rep.passed() {
        return Err(Rejected("validation found trajectories that leave the certified region".into()).into());
    }
    Ok(rep)
}

pub fn validate(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    let gain = load_gain(c)?;
    let Some(path) = &c.certificate else { bail!("validate needs --certificate") };
    let cert = Certificate::load(path).with_context(|| format!("loading certificate {}", path.display()))?;
    write_validate(c, &s, &cert, gain.as_ref()).map(|_| ())
}

pub fn pipeline(c: &Common) -> Result<()> {
    let s = setup::setup(c)?;
    write_orbit(c, &s.model, &s.orbit)?;
    if let Some(res) = &s.surfopt {
        write_json(&c.out, "surfopt.json", res)?;
    }
    let ltv = write_translin(c, &s)?;
    let external = load_gain(c)?;
    let (gain, pq) = match external {
        Some(g) => (Some(g), None),
        None if ltv.spectral_radius >= 1.0 && s.model.m() > 0 => {
            let (g, q) = write_stabilize(c, &s)?;
            (Some(g), Some(q))
        }
        None => (None, None),
    };
    let pq = match pq {
        Some(q) => q,
        None => write_seed(c, &s, gain.as_ref())?,
    };
    let cert = write_verify(c, &s, &pq, gain.as_ref())?;
    write_validate(c, &s, &cert, gain.as_ref())?;
    Ok(())
}
