mod common;

use orbitroa::lyap::{jump_lyapunov, jump_riccati, periodic_lyapunov, Weights};
use orbitroa::sos::{certify, AlternationOptions, Certificate, SampleOptions, VerificationProblem};
use orbitroa::transverse::{make_surfaces, TransverseSystem, ZSpec};
use orbitroa::validate::{boundary_samples, validate, ValidationOptions};

fn certified(sys: &TransverseSystem, hybrid: bool) -> Certificate {
    let w = Weights::identity(sys.dim(), 0);
    let pq = if hybrid { jump_lyapunov(sys, &w).unwrap() } else { periodic_lyapunov(sys, &w).unwrap() };
    let vp = VerificationProblem::from_system(sys, &SampleOptions::default(), None).unwrap();
    certify(&vp, &pq, (1e-6, 1e3), &AlternationOptions { vdeg: 2, ..Default::default() }).unwrap()
}

#[test]
fn van_der_pol_boundary_converges() {
    let (model, orbit) = common::load("vanderpol");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let cert = certified(&sys, false);
    assert!(cert.all_pass());
    let rep = validate(&sys, &cert, None, &ValidationOptions { samples: 200, ..Default::default() }).unwrap();
    assert!(rep.passed(), "{}/{} max {}", rep.converged, rep.samples, rep.max_final_distance);
    assert_eq!(rep.impacts_checked, 0);
}

#[test]
fn rimless_wheel_impacts_do_not_increase_v() {
    let (model, orbit) = common::load("rimless_wheel");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Blended, 1).unwrap();
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let cert = certified(&sys, true);
    let rep = validate(&sys, &cert, None, &ValidationOptions { samples: 200, ..Default::default() }).unwrap();
    assert!(rep.impacts_checked > 0);
    assert!(rep.passed(), "{}/{} violations {}", rep.converged, rep.samples, rep.impact_violations);
}

#[test]
fn samples_lie_on_the_level_set() {
    let (model, orbit) = common::load("vanderpol");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let cert = certified(&sys, false);
    let a = boundary_samples(&cert, &sys, 50, 7).unwrap();
    let b = boundary_samples(&cert, &sys, 50, 7).unwrap();
    assert_eq!(a, b);
    for (seg, tau, xp) in &a {
        assert!((cert.value_at(*seg, *tau, xp.as_slice()) - 1.0).abs() < 1e-9);
    }
    assert!(validate(&sys, &cert, None, &ValidationOptions { samples: 0, ..Default::default() }).is_err());
}

#[test]
fn reversed_van_der_pol_closed_loop() {
    let (model, orbit) = common::load("vanderpol_reversed");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let sol = jump_riccati(&sys, &Weights::identity(1, 1)).unwrap();
    assert!(sol.closed_loop_radius < 1.0);
    let vp = VerificationProblem::from_system(&sys, &SampleOptions::default(), Some(&sol.gain)).unwrap();
    let cert = certify(&vp, &sol.quadratic, (1e-6, 1e3), &AlternationOptions { vdeg: 2, ..Default::default() }).unwrap();
    assert!(cert.all_pass() && cert.radius > 0.0);
    let rep = validate(&sys, &cert, Some(&sol.gain), &ValidationOptions { samples: 100, ..Default::default() }).unwrap();
    assert!(rep.passed(), "{}/{} max {}", rep.converged, rep.samples, rep.max_final_distance);
}
