mod common;

use nalgebra::DVector;
use orbitroa::surfopt::{min_wellposed_radius, optimize_z, SurfaceOptOptions, SurfaceOptProblem};
use orbitroa::transverse::{make_surfaces, TransverseSystem, ZSpec};

#[test]
fn unit_circle_radius_is_curvature_radius() {
    let (model, orbit) = common::load("harmonic");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let r = min_wellposed_radius(&model, &orbit, &fam);
    assert!((r - 1.0).abs() <= 1e-6, "{r}");
}

#[test]
fn unit_circle_orthogonal_is_stationary() {
    let (model, orbit) = common::load("harmonic");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let prob = SurfaceOptProblem::new(&model, &orbit, &fam, &SurfaceOptOptions::default()).unwrap();
    let g = prob.projected_gradient(&prob.z0);
    let gmax = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(gmax <= 1e-6, "{gmax:e}");
    let res = optimize_z(&model, &orbit, &fam, &SurfaceOptOptions::default()).unwrap();
    let moved = res
        .grid
        .segments
        .iter()
        .zip(&fam.segments)
        .flat_map(|(a, b)| a.z.iter().zip(&b.z))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert!(moved <= 1e-6, "{moved:e}");
    assert!(res.cost_final <= res.cost_initial);
}

#[test]
fn van_der_pol_radius_matches_min_norm_root() {
    // The phase-rate denominator is affine in x_perp; its nearest root has
    // norm |a| / |b|.
    let (model, orbit) = common::load("vanderpol");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let sys = TransverseSystem::new(&model, &orbit, &fam).unwrap();
    let mut oracle = f64::INFINITY;
    for &t in &fam.segments[0].tau {
        let s = sys.polynomial_sample(&sys.frame(0, t).unwrap(), 1, None).unwrap();
        let a = s.den.eval(&[0.0]);
        let b = s.den.eval(&[1.0]) - a;
        oracle = oracle.min(a.abs() / b.abs());
    }
    let r = min_wellposed_radius(&model, &orbit, &fam);
    assert!((r - oracle).abs() <= 1e-8 * oracle, "{r} vs {oracle}");
}

#[test]
fn van_der_pol_optimization_improves() {
    let (model, orbit) = common::load("vanderpol");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let res = optimize_z(&model, &orbit, &fam, &SurfaceOptOptions::default()).unwrap();
    assert!(res.cost_final < res.cost_initial);
    assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    assert!(res.min_radius_final >= res.min_radius_initial);
    // Round trip through the surface builder.
    let opt = make_surfaces(&model, &orbit, &ZSpec::Explicit(res.grid.clone()), 1).unwrap();
    for seg in &res.grid.segments {
        for z in &seg.z {
            assert!((DVector::from_column_slice(z).norm() - 1.0).abs() <= 1e-12);
        }
    }
    let r = min_wellposed_radius(&model, &orbit, &opt);
    assert!((r - res.min_radius_final).abs() <= 1e-6 * r, "{r} vs {}", res.min_radius_final);
}

#[test]
fn p_norm_approaches_max_from_below() {
    let (model, orbit) = common::load("vanderpol");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    let prob = SurfaceOptProblem::new(&model, &orbit, &fam, &SurfaceOptOptions { p: 100, ..Default::default() }).unwrap();
    let max = 1.0 / prob.min_radius(&prob.z0);
    let c100 = prob.cost(&prob.z0);
    let c10 = SurfaceOptProblem::new(&model, &orbit, &fam, &SurfaceOptOptions { p: 10, ..Default::default() }).unwrap().cost(&prob.z0);
    assert!(c10 <= c100 && c100 <= max, "{c10} {c100} {max}");
    assert!(c100 >= 0.95 * max, "{c100} vs {max}");
}

#[test]
fn rimless_wheel_keeps_impact_alignment() {
    let (model, orbit) = common::load("rimless_wheel");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Blended, 1).unwrap();
    let res = optimize_z(&model, &orbit, &fam, &SurfaceOptOptions { max_iter: 30, ..Default::default() }).unwrap();
    assert!(res.cost_final <= res.cost_initial);
    let seg = &res.grid.segments[0];
    assert_eq!(seg.z[0], fam.segments[0].z[0]);
    assert_eq!(seg.z.last(), fam.segments[0].z.last());
    make_surfaces(&model, &orbit, &ZSpec::Explicit(res.grid.clone()), 1).unwrap();
}

#[test]
fn bad_exponent_rejected() {
    let (model, orbit) = common::load("harmonic");
    let fam = make_surfaces(&model, &orbit, &ZSpec::Orthogonal, 1).unwrap();
    assert!(optimize_z(&model, &orbit, &fam, &SurfaceOptOptions { p: 7, ..Default::default() }).is_err());
}
