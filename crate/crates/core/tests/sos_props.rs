mod common;

use orbitroa::lyap::{jump_lyapunov, periodic_lyapunov, Weights};
use orbitroa::poly::Polynomial;
use orbitroa::sos::{certify, check_sos, AlternationOptions, Certificate, SampleOptions, VerificationProblem};
use orbitroa::transverse::{make_surfaces, TransverseSystem, ZSpec};
use orbitroa::Poly;
use proptest::prelude::*;

fn square_sum(nvars: usize) -> impl Strategy<Value = Poly> {
    let poly = prop::collection::vec((prop::collection::vec(0..=2u32, nvars), -2.0..2.0f64), 1..5)
        .prop_map(move |t| Polynomial::from_terms(nvars, t.into_iter().filter(|(e, _)| e.iter().sum::<u32>() <= 2)).unwrap());
    prop::collection::vec(poly, 1..4).prop_map(move |qs| {
        let mut p = Poly::zero(nvars);
        for q in qs {
            p = p.add(&q.mul(&q).unwrap()).unwrap();
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_reconstructs_target(p in square_sum(2)) {
        prop_assume!(p.degree() % 2 == 0 && p.degree() > 0);
        let sol = check_sos(&p).unwrap();
        prop_assert!(sol.feasible);
        for ci in 0..sol.constraints.len() {
            prop_assert!(sol.identity_error(ci) <= 1e-6, "identity error {:e}", sol.identity_error(ci));
            prop_assert!(sol.min_gram_eigenvalue(ci) >= -1e-8);
        }
    }
}

fn certified(name: &str, hybrid: bool) -> Certificate {
    let (model, orbit) = common::load(name);
    let spec = if hybrid { ZSpec::Blended } else { ZSpec::Orthogonal };
    let fam = make_surfaces(&model, &orbit, &spec, 1).unwrap();
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let w = Weights::identity(sys.dim(), 0);
    let pq = if hybrid { jump_lyapunov(&sys, &w).unwrap() } else { periodic_lyapunov(&sys, &w).unwrap() };
    let vp = VerificationProblem::from_system(&sys, &SampleOptions::default(), None).unwrap();
    certify(&vp, &pq, (1e-6, 1e3), &AlternationOptions { vdeg: 2, ..Default::default() }).unwrap()
}

/// Points of `{v <= 1}` on a one-dimensional grid.
fn sublevel_grid(v: &Poly) -> Vec<f64> {
    let edge = |dir: f64| {
        let (mut lo, mut hi) = (0.0, 1.0);
        while v.eval(&[dir * hi]) <= 1.0 {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if v.eval(&[dir * mid]) <= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        dir * lo
    };
    let (a, b) = (edge(-1.0), edge(1.0));
    (0..=400).map(|i| a + (b - a) * i as f64 / 400.0).collect()
}

fn check_multipliers(cert: &Certificate) {
    let sos = |name: &str| !name.ends_with(".l_s");
    let mut checked = 0;
    let mut inspect = |v: &Poly, mults: &std::collections::BTreeMap<String, Poly>, at: String| {
        let grid = sublevel_grid(v);
        for (name, m) in mults.iter().filter(|(n, _)| sos(n)) {
            let floor = -1e-8 * m.max_abs_coeff().max(1.0);
            for x in &grid {
                assert!(m.eval(&[*x]) >= floor, "{name} at {at} x={x}: {}", m.eval(&[*x]));
            }
            checked += 1;
        }
    };
    for (i, s) in cert.samples.iter().enumerate() {
        inspect(&s.v, &s.multipliers, format!("sample {i}"));
    }
    for imp in &cert.impacts {
        inspect(&cert.samples[imp.pre].v, &imp.multipliers, format!("impact {}", imp.index));
    }
    assert!(checked > cert.samples.len());
}

#[test]
fn van_der_pol_multipliers_are_nonnegative() {
    let cert = certified("vanderpol", false);
    assert_eq!(cert.dim, 1);
    check_multipliers(&cert);
}

#[test]
fn rimless_wheel_multipliers_are_nonnegative() {
    let cert = certified("rimless_wheel", true);
    assert!(!cert.impacts.is_empty());
    check_multipliers(&cert);
}

#[test]
fn radius_history_is_monotone() {
    let cert = certified("vanderpol", false);
    for w in cert.history.windows(2) {
        assert!(w[1] >= w[0] * (1.0 - 1e-9), "{:?}", cert.history);
    }
}
