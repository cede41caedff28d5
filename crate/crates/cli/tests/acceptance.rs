//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use orbitroa::linalg::spectral_radius;
use orbitroa::lyap::{jump_lyapunov, jump_riccati, periodic_lyapunov, residual, Weights};
use orbitroa::model::HybridModel;
use orbitroa::ode::{find_orbit, floquet, monodromy, OrbitGuess, PeriodicOrbit, ShootingOptions};
use orbitroa::sos::{alternate, certify, seed_level, AlternationOptions, Certificate, Margins, SampleOptions, VerificationProblem};
use orbitroa::surfopt::{min_wellposed_radius, optimize_z, SurfaceOptOptions};
use orbitroa::transverse::{make_surfaces, LtvSegment, SurfaceFamily, TransverseLtv, TransverseSample, TransverseSystem, ZSpec};
use orbitroa::validate::{validate, ValidationOptions};
use orbitroa::{Poly, PolyVec};

const SEED_BOUNDS: (f64, f64) = (1e-6, 1e3);

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> (HybridModel, PeriodicOrbit) {
    let dir = models_dir();
    let model = HybridModel::load(dir.join(format!("{name}.json"))).unwrap();
    let text = std::fs::read_to_string(dir.join(format!("{name}.guess.json"))).unwrap();
    let guess: OrbitGuess = serde_json::from_str(&text).unwrap();
    let orbit = find_orbit(&model, &guess, &ShootingOptions::default()).unwrap();
    (model, orbit)
}

fn surfaces(model: &HybridModel, orbit: &PeriodicOrbit) -> SurfaceFamily {
    let spec = if orbit.is_hybrid() { ZSpec::Blended } else { ZSpec::Orthogonal };
    make_surfaces(model, orbit, &spec, 0).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn certificate(sys: &TransverseSystem, vdeg: u32) -> Certificate {
    let w = Weights::identity(sys.dim(), 0);
    let pq = jump_lyapunov(sys, &w).unwrap();
    let vp = VerificationProblem::from_system(sys, &SampleOptions::default(), None).unwrap();
    certify(&vp, &pq, SEED_BOUNDS, &AlternationOptions { vdeg, ..Default::default() }).unwrap()
}

fn c1_monodromy() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["vanderpol", "rimless_wheel"] {
        let (model, orbit) = load(name);
        let psi = monodromy(&model, &orbit).unwrap();
        let unit = floquet(&psi).iter().map(|z| (z - 1.0).norm()).fold(f64::INFINITY, f64::min);
        let f0 = DVector::from_vec(model.eval_field(0, &orbit.initial_state(), &vec![0.0; model.m()]).unwrap());
        let fixed = (&psi * &f0 - &f0).amax();
        worst = worst.max(unit).max(fixed);
        parts.push(format!("{name}: |lambda-1|={unit:.1e} |Psi f-f|={fixed:.1e}"));
    }
    outcome(worst <= 1e-6, parts.join(", "))
}

/// RK4 on the van der Pol field plus the running integral of `1 - x^2`.
fn vdp_trace_integral(x0: &[f64], period: f64, steps: usize) -> f64 {
    let f = |s: [f64; 3]| [s[1], -s[0] + (1.0 - s[0] * s[0]) * s[1], 1.0 - s[0] * s[0]];
    let h = period / steps as f64;
    let mut s = [x0[0], x0[1], 0.0];
    let add = |a: [f64; 3], b: [f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f(add(s, k1, h / 2.0));
        let k3 = f(add(s, k2, h / 2.0));
        let k4 = f(add(s, k3, h));
        s = [0, 1, 2].map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    s[2]
}

fn c2_liouville() -> Outcome {
    let (model, orbit) = load("vanderpol");
    // The shipped file must be the mu = 1 oscillator the oracle integrates.
    let x = [0.7, -1.3];
    let fx = model.eval_field(0, &x, &[]).unwrap();
    let same = (fx[0] - x[1]).abs() + (fx[1] - (-x[0] + (1.0 - x[0] * x[0]) * x[1])).abs() < 1e-14;
    let prod = floquet(&monodromy(&model, &orbit).unwrap()).iter().fold(nalgebra::Complex::new(1.0, 0.0), |a, z| a * z);
    let want = vdp_trace_integral(&orbit.initial_state(), orbit.period(), 200_000).exp();
    let err = (prod.re - want).abs() + prod.im.abs();
    outcome(same && err <= 1e-4, format!("prod={:.9e} exp(int tr)={want:.9e} err={err:.1e}", prod.re))
}

fn c3_harmonic() -> Outcome {
    let (model, orbit) = load("harmonic");
    let fam = surfaces(&model, &orbit);
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let ltv = sys.linearization().unwrap();
    let max = ltv.segments.iter().flat_map(|s| &s.a).map(|a| a.amax()).fold(0.0, f64::max);
    outcome(max <= 1e-9, format!("max|A|={max:.1e}"))
}

fn fd_jacobian(sys: &TransverseSystem, seg: usize, tau: f64) -> DMatrix<f64> {
    let fr = sys.frame(seg, tau).unwrap();
    let k = sys.dim();
    let h = 1e-5;
    let mut j = DMatrix::zeros(k, k);
    for c in 0..k {
        let mut e = DVector::zeros(k);
        e[c] = h;
        let up = sys.rhs(&fr, &e, None).unwrap().xdot;
        let dn = sys.rhs(&fr, &(-&e), None).unwrap().xdot;
        j.set_column(c, &((up - dn) / (2.0 * h)));
    }
    j
}

fn c4_linearization() -> Outcome {
    let mut names: Vec<String> = std::fs::read_dir(models_dir())
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json") && !n.ends_with(".guess.json"))
        .map(|n| n.trim_end_matches(".json").to_string())
        .collect();
    names.sort();
    let mut worst: f64 = 0.0;
    for name in &names {
        let (model, orbit) = load(name);
        let fam = surfaces(&model, &orbit);
        let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
        for (seg, s) in fam.segments.iter().enumerate() {
            for &t in s.tau.iter().step_by(5) {
                let (a, _) = sys.linearize(&sys.frame(seg, t).unwrap());
                worst = worst.max((a - fd_jacobian(&sys, seg, t)).amax());
            }
        }
    }
    outcome(worst <= 1e-5, format!("{} models, max componentwise error {worst:.1e}", names.len()))
}

fn scalar_ltv(a: f64, impacts: Vec<f64>) -> TransverseLtv {
    let nseg = impacts.len().max(1);
    let segments = (0..nseg)
        .map(|s| {
            let tau: Vec<f64> = (0..=40).map(|i| s as f64 + i as f64 / 40.0).collect();
            let n = tau.len();
            LtvSegment { phase: s, tau, a: vec![DMatrix::from_element(1, 1, a); n], b: vec![DMatrix::zeros(1, 0); n] }
        })
        .collect();
    TransverseLtv { segments, impacts: impacts.into_iter().map(|v| DMatrix::from_element(1, 1, v)).collect() }
}

fn scalar_weights(q: f64, qi: f64) -> Weights {
    Weights { q: DMatrix::from_element(1, 1, q), qi: DMatrix::from_element(1, 1, qi), r: DMatrix::zeros(0, 0) }
}

fn c5_lyapunov() -> Outcome {
    let (model, orbit) = load("vanderpol");
    let fam = surfaces(&model, &orbit);
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let w = Weights::identity(1, 0);
    let pq = periodic_lyapunov(&sys, &w).unwrap();
    let res = residual(&sys, &pq, &w, false);
    let last = pq.segments[0].tau.len() - 1;
    let close = (pq.p_grid(0, 0) - pq.p_grid(0, last)).norm();
    let flat = periodic_lyapunov(&scalar_ltv(-1.0, vec![]), &scalar_weights(2.0, 0.0)).unwrap();
    let e1 = flat.segments.iter().flat_map(|s| &s.p).map(|p| (p[0] - 1.0).abs()).fold(0.0, f64::max);
    let (a, q) = (0.6, 0.5);
    let jump = jump_lyapunov(&scalar_ltv(0.0, vec![a]), &scalar_weights(0.0, q)).unwrap();
    let e2 = jump.segments.iter().flat_map(|s| &s.p).map(|p| (p[0] - q / (1.0 - a * a)).abs()).fold(0.0, f64::max);
    outcome(
        res <= 1e-6 && close <= 1e-8 && e1 <= 1e-10 && e2 <= 1e-10,
        format!("residual={res:.1e} |P(0)-P(T)|={close:.1e} P=1 err={e1:.1e} P=q/(1-a^2) err={e2:.1e}"),
    )
}

fn c6_scalar_fixture() -> Outcome {
    let x = Poly::var(1, 0);
    let f = x.pow(2).sub(&x).unwrap();
    let n = 8;
    let dynamics = (0..n)
        .map(|i| TransverseSample {
            tau: i as f64 / n as f64,
            num: Poly::one(1),
            den: Poly::one(1),
            den_xdot: PolyVec::new(1, vec![f.clone()]).unwrap(),
        })
        .collect();
    let vp = VerificationProblem::from_dynamics(1, dynamics, 1.0, Margins::uniform(1e-4));
    let x2 = x.pow(2);
    let seed = |rho: f64| vec![x2.scale(1.0 / rho); n];
    let rho =
        orbitroa::lyap::bisect_level(|rho| orbitroa::sos::multiplier_step(&vp, &seed(rho), None).all_pass(), SEED_BOUNDS.0, SEED_BOUNDS.1)
            .unwrap();
    let cert = alternate(&vp, seed(rho), &AlternationOptions::default()).unwrap();
    outcome(cert.all_pass() && cert.radius >= 0.9, format!("r={:.6} (supremum 1), seed rho={rho:.4}", cert.radius))
}

fn monte_carlo(name: &str, vdeg: u32) -> (Outcome, Option<Certificate>) {
    let (model, orbit) = load(name);
    let fam = surfaces(&model, &orbit);
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let cert = certificate(&sys, vdeg);
    let rep = validate(&sys, &cert, None, &ValidationOptions::default()).unwrap();
    let pass = cert.all_pass() && rep.samples == 500 && rep.passed() && (!orbit.is_hybrid() || rep.impacts_checked > 0);
    let detail = format!(
        "vdeg={vdeg} r={:.6}, {}/{} converged, max dist {:.1e}, impacts checked {} violations {}",
        cert.radius, rep.converged, rep.samples, rep.max_final_distance, rep.impacts_checked, rep.impact_violations
    );
    (outcome(pass, detail), Some(cert))
}

fn c9_alternation(cert: Option<&Certificate>) -> Outcome {
    let Some(cert) = cert else { return outcome(false, "no quartic certificate".into()) };
    let seed_r = cert.history[0];
    let monotone = cert.history.windows(2).all(|w| w[1] > w[0]);
    outcome(
        cert.degree == 4 && cert.radius > seed_r && monotone,
        format!("quadratic seed r={seed_r:.6} -> quartic r={:.6} over {} accepted steps", cert.radius, cert.history.len() - 1),
    )
}

fn c10_stabilization() -> Outcome {
    let (model, orbit) = load("vanderpol_reversed");
    let fam = surfaces(&model, &orbit);
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let open = spectral_radius(&sys.monodromy(None).unwrap());
    let sol = jump_riccati(&sys, &Weights::identity(1, 1)).unwrap();
    let vp = VerificationProblem::from_system(&sys, &SampleOptions::default(), Some(&sol.gain)).unwrap();
    let rho = seed_level(&vp, &sol.quadratic, SEED_BOUNDS.0, SEED_BOUNDS.1).unwrap();
    let cert = alternate(&vp, vp.quadratic_values(&sol.quadratic, rho), &AlternationOptions { vdeg: 2, ..Default::default() }).unwrap();
    outcome(
        open > 1.0 && sol.closed_loop_radius < 1.0 && cert.all_pass() && cert.radius > 0.0,
        format!("open-loop radius {open:.4e}, closed-loop {:.4e}, certified r={:.6}", sol.closed_loop_radius, cert.radius),
    )
}

fn c11_surfaces() -> Outcome {
    let (model, orbit) = load("vanderpol");
    let init = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 0).unwrap();
    let res = optimize_z(&model, &orbit, &init, &SurfaceOptOptions::default()).unwrap();
    let (hm, ho) = load("harmonic");
    let circle = make_surfaces(&hm, &ho, &ZSpec::Orthogonal, 0).unwrap();
    let r = min_wellposed_radius(&hm, &ho, &circle);
    // Radius of curvature of the circle through x0.
    let want = ho.initial_state().iter().map(|v| v * v).sum::<f64>().sqrt();
    outcome(
        res.cost_final < res.cost_initial && res.min_radius_final >= res.min_radius_initial && (r - want).abs() <= 1e-6,
        format!(
            "cost {:.6} -> {:.6}, min radius {:.6} -> {:.6}; circle radius {r:.9} vs {want:.9}",
            res.cost_initial, res.cost_final, res.min_radius_initial, res.min_radius_final
        ),
    )
}

fn c12_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_orbitroa");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let vdp = models_dir().join("vanderpol.json").display().to_string();
    let rev = models_dir().join("vanderpol_reversed.json").display().to_string();
    let mut runs = 0;
    for d in &dirs {
        let out = |sub: &str| d.path().join(sub).display().to_string();
        let steps: Vec<Vec<String>> = vec![
            vec!["orbit".into(), "--model".into(), vdp.clone(), "--out".into(), out("orbit")],
            vec!["translin".into(), "--model".into(), vdp.clone(), "--out".into(), out("translin")],
            vec!["seed".into(), "--model".into(), vdp.clone(), "--out".into(), out("seed")],
            vec![
                "verify".into(),
                "--model".into(),
                vdp.clone(),
                "--vdeg".into(),
                "2".into(),
                "--max-taus".into(),
                "64".into(),
                "--out".into(),
                out("verify"),
            ],
            vec![
                "validate".into(),
                "--model".into(),
                vdp.clone(),
                "--certificate".into(),
                out("verify/certificate.json"),
                "--samples".into(),
                "100".into(),
                "--seed".into(),
                "11".into(),
                "--record".into(),
                "2".into(),
                "--out".into(),
                out("validate"),
            ],
            vec!["optimize-z".into(), "--model".into(), vdp.clone(), "--out".into(), out("optimize")],
            vec!["stabilize".into(), "--model".into(), rev.clone(), "--out".into(), out("stabilize")],
            vec![
                "simulate".into(),
                "--model".into(),
                rev.clone(),
                "--gain".into(),
                out("stabilize/gain.json"),
                "--x0".into(),
                "2.1,0.2".into(),
                "--out".into(),
                out("simulate"),
            ],
        ];
        for args in steps {
            let o = Command::new(bin).args(&args).output().unwrap();
            if !o.status.success() {
                return outcome(false, format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
            }
            runs += 1;
        }
    }
    let mut files = 0;
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for e in std::fs::read_dir(dirs[0].path().join(&rel)).unwrap() {
            let e = e.unwrap();
            let r = rel.join(e.file_name());
            if e.file_type().unwrap().is_dir() {
                stack.push(r);
                continue;
            }
            files += 1;
            let a = std::fs::read(dirs[0].path().join(&r)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&r)).unwrap_or_default();
            if a != b {
                return outcome(false, format!("{} differs", r.display()));
            }
        }
    }
    outcome(files > 0, format!("{runs} command runs, {files} output files byte-identical"))
}

fn main() {
    let mut quartic: Option<Certificate> = None;
    let mut results: Vec<(usize, &str, Duration, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let dt = t0.elapsed();
        let out = if dt > limit { outcome(false, format!("{} (over the {:?} budget)", out.detail, limit)) } else { out };
        println!("[{}] {id:>2} {name}: {} ({:.1} s)", if out.pass { "PASS" } else { "FAIL" }, out.detail, dt.as_secs_f64());
        results.push((id, name, dt, out));
    };
    let s = Duration::from_secs;
    record(1, "monodromy unit multiplier", s(10), &mut c1_monodromy);
    record(2, "Liouville identity", s(10), &mut c2_liouville);
    record(3, "harmonic transverse A = 0", s(1), &mut c3_harmonic);
    record(4, "linearization vs finite differences", s(30), &mut c4_linearization);
    record(5, "periodic Lyapunov correctness", s(10), &mut c5_lyapunov);
    record(6, "SoS sharpness on the scalar fixture", s(60), &mut c6_scalar_fixture);
    record(7, "region soundness, van der Pol", s(300), &mut || {
        let (o, c) = monte_carlo("vanderpol", 4);
        quartic = c;
        o
    });
    record(8, "region soundness, rimless wheel", s(300), &mut || monte_carlo("rimless_wheel", 2).0);
    record(9, "alternation improvement", s(600), &mut || c9_alternation(quartic.as_ref()));
    record(10, "transverse LQR stabilization", s(300), &mut c10_stabilization);
    record(11, "surface optimization", s(120), &mut c11_surfaces);
    record(12, "CLI determinism", s(60), &mut c12_determinism);
    let failed: Vec<usize> = results.iter().filter(|r| !r.3.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
