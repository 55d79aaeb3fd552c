use std::sync::Arc;

use contraswitch::certify::{
    certify_closed_loop, sample_sigma, split_region, CertifyOptions, Region,
};
use contraswitch::config::Project;
use contraswitch::dynamics::{
    assemble_closed_loop, BimodalSystem, ExprSwitching, JacobianField, SwitchingFunction,
};
use contraswitch::filippov::SimOptions;
use contraswitch::measures::MeasureKind;
use contraswitch::synth::{build_h, gain_search, DesignSpec};
use proptest::prelude::*;

fn small_spec(example: &str, resolution: usize) -> DesignSpec {
    let mut spec = Project::builtin(example).unwrap().design_spec().unwrap();
    let lower_upper = match example {
        "example1" => [(-50.0, 50.0), (-50.0, 7.0)],
        _ => [(-50.0, 50.0), (-50.0, 50.0)],
    };
    spec.region = Region::uniform(&lower_upper, resolution).unwrap();
    spec
}

#[test]
fn design_survives_grid_refinement() {
    for example in ["example1", "example2"] {
        let spec = small_spec(example, 41);
        let res = gain_search(&spec).unwrap();
        assert!(res.certificate.passed());
        let ctl = Arc::new(res.controller(&spec).unwrap());
        let finer = spec.region.refined(2);
        let cert = certify_closed_loop(spec.system.clone(), ctl, &finer, spec.kind, spec.c_bar, spec.c_bar, &spec.certify)
            .unwrap();
        assert!(cert.passed(), "{} fails on the refined grid", example);
        assert_eq!(cert.grid.resolution, vec![82, 82]);
    }
}

#[test]
fn smaller_lattice_neighbour_fails_near_the_boundary() {
    let p = Project::builtin("example1").unwrap();
    let spec = p.design_spec().unwrap();
    let h = Arc::new(build_h(&spec.system, MeasureKind::One, 2.0).unwrap());
    let vars = spec.system.vars();
    let ctl = contraswitch::dynamics::SwitchedController::new(
        contraswitch::expr::VectorExpr::parse(&["-9.5*x2"], vars).unwrap(),
        contraswitch::expr::VectorExpr::zeros(1, 2),
        h,
    );
    let cert = certify_closed_loop(
        spec.system.clone(),
        Arc::new(ctl),
        &spec.region,
        MeasureKind::One,
        2.0,
        2.0,
        &CertifyOptions::default(),
    )
    .unwrap();
    assert!(!cert.passed());
    assert!(!cert.splus.pass);
    let worst = cert.splus.worst_point.unwrap();
    assert!((worst[1] - 7.0).abs() < 1e-9, "worst point {:?}", worst);
    // 2*7 - 6 - 9.5 = -1.5
    assert!((cert.worst_margin_splus.unwrap() + 1.5).abs() < 1e-12);
}

#[test]
fn closed_loop_equals_open_loop_on_minus_side() {
    for example in ["example1", "example2"] {
        let p = Project::builtin(example).unwrap();
        let ctl = p.controller.clone().unwrap();
        assert!(ctl.u_minus.exprs().is_identically_zero());
        let cl = assemble_closed_loop(p.system.clone(), ctl.clone()).unwrap();
        let region = Region::uniform(&[(-5.0, 5.0), (-5.0, 7.0)], 15).unwrap();
        let parts = split_region(ctl.h.as_ref(), &region).unwrap();
        for x in parts.minus.iter().filter(|x| ctl.h.value(x).unwrap() < 0.0) {
            assert_eq!(cl.minus(x).unwrap(), p.system.open_loop().value(x).unwrap());
        }
    }
}

#[test]
fn region_split_matches_the_worked_examples() {
    let p = Project::builtin("example1").unwrap();
    let h = p.controller.as_ref().unwrap().h.clone();
    let parts = split_region(h.as_ref(), p.region.as_ref().unwrap()).unwrap();
    for x in &parts.plus {
        assert!(x[1] >= 2.0 && x[1] <= 7.0);
    }
    assert!(parts.sigma.iter().all(|x| (x[1] - 2.0).abs() < 1e-9));
    assert_eq!(parts.sigma.len(), 200);
}

#[test]
fn simulation_defaults() {
    let opts = SimOptions::default();
    assert_eq!(opts.step, 1e-3);
    assert_eq!(opts.event_tol, 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sigma_samples_lie_on_the_manifold(cx in -1.0..1.0f64, cy in -1.0..1.0f64, r in 0.3..1.5f64) {
        let text = format!("(x1 - {})^2 + (x2 - {})^2 - {}", cx, cy, r * r);
        let h = ExprSwitching::parse(&text, &["x1", "x2"]).unwrap();
        let region = Region::uniform(&[(-3.0, 3.0), (-3.0, 3.0)], 31).unwrap();
        let s = sample_sigma(&h, &region).unwrap();
        prop_assert!(!s.points.is_empty());
        for x in &s.points {
            prop_assert!(h.value(x).unwrap().abs() <= 1e-10);
        }
    }
}
