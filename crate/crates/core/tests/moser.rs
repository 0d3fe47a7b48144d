use lcs_core::chords::ExactLagrangian;
use lcs_core::extension::{build_extension, ExtensionOptions, HSource};
use lcs_core::lagrangian::*;
use lcs_core::moser::*;
use lcs_core::{CotangentLcsStructure, FormExpression, LcsError, ModelManifold, ScalarField};
use std::sync::Arc;

fn structure(n: usize) -> Arc<CotangentLcsStructure> {
    Arc::new(CotangentLcsStructure::canonical(ModelManifold::torus(n).unwrap()).unwrap())
}

#[test]
fn identity_flow_does_not_move() {
    let p = MoserProblem::identity(structure(2));
    let seeds = fiber_seeds(p.structure.total(), 1000, 5.0, 0);
    let r = integrate_flow(&p, &seeds, &FlowOptions::default()).unwrap();
    assert!(r.max_displacement <= 1e-12);
    let rep = verify_conformal_pullback(&p, &r, &seeds[..64]).unwrap();
    assert!(rep.residual <= 1e-10, "{}", rep.residual);
}

#[test]
fn constant_ball_matches_radial_factor() {
    let p = constant_ball(structure(2), 2.0, 1.0, 4.0).unwrap();
    let adm = p.check_admissible(&admissibility_grid(&p)).unwrap();
    assert!(adm.pass, "{adm:?}");
    let inner: Vec<_> = fiber_seeds(p.structure.total(), 400, 0.7, 1);
    let r = integrate_flow(&p, &inner, &FlowOptions::default()).unwrap();
    for s in &r.samples {
        for i in 2..4 {
            assert!((s.image[i] - 0.5 * s.seed[i]).abs() <= 1e-6);
        }
    }
    let all = fiber_seeds(p.structure.total(), 1000, 6.0, 2);
    let r = integrate_flow(&p, &all, &FlowOptions::default()).unwrap();
    assert!(r.max_fiber_drift <= 1e-8);
    for s in &r.samples {
        let r0 = (s.seed[2].powi(2) + s.seed[3].powi(2)).sqrt();
        if r0 >= 4.0 {
            assert!(s.image.iter().zip(&s.seed).all(|(a, b)| (a - b).abs() <= 1e-14));
        }
    }
}

#[test]
fn constant_g_matches_closed_form() {
    let s = structure(1);
    let c = 3.0;
    let p = MoserProblem::new(s.clone(), ScalarField::constant(s.total().clone(), c), 1.0).unwrap();
    for sigma in [0.25, 0.5, 1.0] {
        let r = flow_point(&p, &[0.1, 1.7], 0.0, sigma, &FlowOptions::default()).unwrap();
        let gt = |t: f64| t / c + 1.0 - t;
        let want = gt(1.0).ln() - gt(1.0 - sigma).ln();
        assert!((r.log_factor - want).abs() <= 1e-8, "{sigma}: {} vs {want}", r.log_factor);
    }
}

#[test]
fn radial_g_gives_radial_field() {
    let p = constant_ball(structure(2), 2.0, 1.0, 4.0).unwrap();
    for t in [0.0, 0.3, 1.0] {
        let x = moser_vector_field(&p, t).unwrap();
        let v = x.eval(&[0.2, 1.3, 1.5, -0.7]).unwrap();
        assert_eq!((v[0], v[1]), (0.0, 0.0));
        assert!((v[2] * -0.7 - v[3] * 1.5).abs() < 1e-15);
    }
}

#[test]
fn pullback_of_constant_ball_flow() {
    let p = constant_ball(structure(2), 2.0, 1.0, 4.0).unwrap();
    let samples = fiber_seeds(p.structure.total(), 256, 4.5, 3);
    let r = integrate_flow(&p, &samples, &FlowOptions::default()).unwrap();
    let rep = verify_conformal_pullback(&p, &r, &samples).unwrap();
    assert!(rep.pass, "{rep:?}");
    let bad = FlowOptions { step: 0.5, scheme: Scheme::Euler, adaptive: false, ..Default::default() };
    let r = integrate_flow(&p, &samples, &bad).unwrap();
    let rep = verify_conformal_pullback(&p, &r, &samples).unwrap();
    assert!(!rep.pass, "{}", rep.residual);
}

#[test]
fn flow_composes() {
    let p = constant_ball(structure(2), 2.0, 1.0, 4.0).unwrap();
    let seeds = fiber_seeds(p.structure.total(), 200, 4.5, 4);
    let o = FlowOptions::default();
    let whole = integrate_flow(&p, &seeds, &o).unwrap();
    let half = integrate_flow_between(&p, &seeds, 0.0, 0.5, &o).unwrap();
    let mids: Vec<_> = half.samples.iter().map(|s| s.image.clone()).collect();
    let rest = integrate_flow_between(&p, &mids, 0.5, 1.0, &o).unwrap();
    for (a, b) in whole.samples.iter().zip(&rest.samples) {
        for i in 0..4 {
            assert!((a.image[i] - b.image[i]).abs() <= 1e-7);
        }
    }
}

#[test]
fn liouville_family_stays_nondegenerate() {
    let p = constant_ball(structure(2), 2.0, 1.0, 4.0).unwrap();
    let grid = fiber_seeds(p.structure.total(), 512, 5.0, 5);
    for c in liouville_family_check(&p, &[0.0, 0.25, 0.5, 0.75, 1.0], &grid).unwrap() {
        assert!(c.nondegenerate, "{c:?}");
    }
}

#[test]
fn steep_g_is_refused() {
    let s = structure(1);
    let g = ScalarField::new(s.total().clone(), |x| Ok((x[1] * x[1] * 0.75).exp()));
    let p = MoserProblem::new(s, g, 10.0).unwrap();
    assert!(matches!(flow_point(&p, &[0.0, 1.5], 0.0, 1.0, &FlowOptions::default()), Err(LcsError::Rejected(_))));
}

#[test]
fn projection_degrees() {
    let s2 = structure(2);
    assert_eq!(projection_degree(&zero_section(&s2).unwrap()).unwrap().degree, 1);
    assert_eq!(projection_degree(&example_torus_1().unwrap()).unwrap().degree, 2);
    let f = ScalarField::new(s2.base().clone(), |x| Ok(x[0].sin() * x[1].cos() + 3.0));
    assert_eq!(projection_degree(&beta_graph(&f, &s2).unwrap()).unwrap().degree, 1);
}

#[test]
fn zero_section_is_unchanged() {
    let s = structure(1);
    let popts = PrimitiveOptions { grid: 64, ..Default::default() };
    let e = ExactLagrangian::certify(zero_section(&s).unwrap(), &popts).unwrap();
    let one = ScalarField::constant(s.total().clone(), 1.0);
    let ext = build_extension(&e, &HSource::Field(one), &ExtensionOptions::default()).unwrap();
    let (img, rep) = straighten_lagrangian(&e, &ext, None, 8, &popts).unwrap();
    assert!(rep.pass, "{rep:?}");
    for u in [0.0, 1.0, 4.0] {
        assert_eq!(img.point(&[u]).unwrap(), vec![u, 0.0]);
    }
}

#[test]
fn exact_beta_scene_straightens_to_a_closed_graph() {
    let t1 = ModelManifold::torus(1).unwrap();
    let phase = ScalarField::new(t1.clone(), |x| Ok(x[0].sin() * 0.3));
    let beta = FormExpression::function(&phase).d().unwrap();
    let s = Arc::new(CotangentLcsStructure::new(t1.clone(), beta).unwrap());
    let f = ScalarField::new(t1, |x| Ok(x[0].cos() + 2.0));
    let popts = PrimitiveOptions { grid: 128, ..Default::default() };
    let e = ExactLagrangian::certify(beta_graph(&f, &s).unwrap(), &popts).unwrap();
    let (img, rep, ext) = straighten_pipeline(&e, None, 0.12, &ExtensionOptions::default(), &popts).unwrap();
    assert!(ext.report.pass);
    assert!(rep.pass, "{rep:?}");
    assert!(rep.image.residual_sup <= 1e-8);
    for u in [0.3, 2.0, 5.1] {
        let y = img.point(&[u]).unwrap();
        assert!((y[1] + u.sin() / (u.cos() + 2.0)).abs() < 1e-12, "{y:?}");
    }
}

#[test]
fn translated_example_one_is_not_straightened() {
    let e = example_torus_1().unwrap();
    let beta = e.structure().beta_base().clone();
    let popts = PrimitiveOptions { grid: 64, ..Default::default() };
    let e = ExactLagrangian::certify(translate_by_form(&e, &beta, -2.0).unwrap(), &popts).unwrap();
    let err = straighten_pipeline(&e, None, 0.05, &ExtensionOptions::for_dim(2), &popts).err().unwrap();
    let msg = err.to_string();
    assert!(msg.contains("ratio = 1.0000"), "{msg}");
}
