use lcs_core::chords::ExactLagrangian;
use lcs_core::extension::*;
use lcs_core::lagrangian::*;
use lcs_core::{CotangentLcsStructure, LcsError, ModelManifold, ScalarField};
use std::sync::Arc;

fn graph_scene() -> (ExactLagrangian, ScalarField) {
    let t1 = ModelManifold::torus(1).unwrap();
    let s = Arc::new(CotangentLcsStructure::with_lee_coordinate(t1.clone(), 0).unwrap());
    let e = beta_graph(&ScalarField::constant(t1, -0.3), &s).unwrap();
    let e = ExactLagrangian::certify(e, &PrimitiveOptions { grid: 64, ..Default::default() }).unwrap();
    let h = ScalarField::new(s.total().clone(), |x| Ok(x[0].sin() * 0.2 + 1.0));
    (e, h)
}

#[test]
fn graph_scene_extends_below_slope_one() {
    let (e, h) = graph_scene();
    let r = build_extension(&e, &HSource::Field(h), &ExtensionOptions::default()).unwrap();
    let rep = &r.report;
    println!("{}", serde_json::to_string_pretty(rep).unwrap());
    assert!(rep.bound.max_slope < 1.0);
    assert!(rep.collar_max_deviation <= 1e-6);
    assert!(rep.collar_nodes > 0);
    assert!(rep.bound.outer_shell_ones);
    assert!(rep.pass);
    assert_eq!(rep.branches, 64);
}

#[test]
fn translated_example_one_is_refused_with_its_chord() {
    let e = example_torus_1().unwrap();
    let beta = e.structure().beta_base().clone();
    let e = translate_by_form(&e, &beta, -2.0).unwrap();
    let e = ExactLagrangian::certify(e, &PrimitiveOptions { grid: 64, ..Default::default() }).unwrap();
    let err = build_extension(&e, &HSource::Primitive { width: 0.05 }, &ExtensionOptions::for_dim(2)).err().unwrap();
    let msg = err.to_string();
    assert!(matches!(err, LcsError::Rejected(_)), "{msg}");
    assert!(msg.contains("ratio = 1.0000"), "{msg}");
}

#[test]
fn flatten_reaches_e_squared() {
    let t1 = ModelManifold::torus(1).unwrap();
    let grid = Arc::new(RadialGrid::new(&t1, 4, 2, 401, (-4.0f64).exp(), 4.0f64.exp()).unwrap());
    let f = RadialField::constant(grid.clone(), std::f64::consts::E);
    let r = minimal_outer_radius(&f, 1.0, 0.5);
    assert!((r - std::f64::consts::E.powi(2)).abs() < 1e-9, "{r}");
    let g = outer_flatten(&f, 1.0, r, 0.5).unwrap();
    let rep = verify_radial_bound(&g);
    assert!(rep.outer_shell_ones);
    assert!(rep.max_slope.abs() < 1e-12);
    let steepest = g.log_slopes().into_iter().fold(f64::INFINITY, f64::min);
    assert!((steepest + 0.5).abs() < 1e-9, "{steepest}");
    assert!(outer_flatten(&f, 1.0, 5.0, 0.5).is_err());
}

fn ray_field(slopes: impl Fn(f64) -> f64) -> RadialField {
    let t1 = ModelManifold::torus(1).unwrap();
    let grid = Arc::new(RadialGrid::new(&t1, 8, 2, 64, 0.01, 100.0).unwrap());
    let nr = grid.radii.len();
    let mut values = vec![0.0; grid.len()];
    for ray in 0..grid.rays() {
        let mut lv = 0.0;
        for k in 0..nr {
            if k > 0 {
                let (a, b) = (grid.radii[k - 1].ln(), grid.radii[k].ln());
                lv += slopes(0.5 * (a + b)) * (b - a);
            }
            values[ray * nr + k] = lv.exp();
        }
    }
    RadialField { grid, values }
}

#[test]
fn mollifier_keeps_slopes_in_range() {
    let f = ray_field(|x| if x < 0.0 { 0.0 } else { 0.5 });
    let m = mollify(&f, 2).unwrap();
    for s in m.log_slopes() {
        assert!((-1e-12..=0.5 + 1e-12).contains(&s), "{s}");
    }
    let f = ray_field(|_| 0.9);
    let m = mollify(&f, 3).unwrap();
    assert!(verify_radial_bound(&m).max_slope <= 0.9 + 1e-3);
    assert!(verify_radial_bound(&m).max_slope <= mollification_bound(&f, 3) + 1e-12);
}

#[test]
fn squeeze_admissibility_and_seam_bound() {
    assert!(SqueezeProfile::new(1.0, 1.1, 0.5, 1.0).is_err());
    for eps in [1e-1, 1e-2, 1e-3] {
        let p = SqueezeProfile::new(1.0, 2.0, eps, 1.0).unwrap();
        let k = p.seam_overshoot();
        let c = p.seam_slope();
        let mut lo: f64 = f64::INFINITY;
        let mut hi: f64 = f64::NEG_INFINITY;
        let mut prev = squeeze_profile(&p, 1.0 - eps).unwrap().0;
        for i in 1..=2000 {
            let t = 1.0 - eps + eps * i as f64 / 2000.0;
            let (v, d) = squeeze_profile(&p, t).unwrap();
            assert!(v > prev - 1e-15);
            prev = v;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        assert!(lo >= c - 1e-12, "{lo} {c}");
        assert!(hi <= 1.0 + (1.0 - c) * k + 1e-6, "{hi} {k}");
        let (v, _) = squeeze_profile(&p, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let (v, _) = squeeze_profile(&p, 2.0).unwrap();
        assert!((v - 1.0 - eps).abs() < 1e-12);
    }
}

#[test]
fn near_lagrangian_extension_is_flat_along_z() {
    let t2 = ModelManifold::torus(2).unwrap();
    let s = Arc::new(CotangentLcsStructure::with_lee_coordinate(t2.clone(), 0).unwrap());
    let f = ScalarField::new(t2, |x| Ok(x[0].cos() + 2.0));
    let e = ExactLagrangian::certify(beta_graph(&f, &s).unwrap(), &PrimitiveOptions { grid: 64, ..Default::default() }).unwrap();
    let h = near_lagrangian_extension(&e, 0.05).unwrap();
    let rep = near_lagrangian_report(&e, &h, 0.05, 16).unwrap();
    assert!(rep.pass, "{rep:?}");
    let x = e.embedding.point(&[0.4, 1.1]).unwrap();
    let v = h.value(&x).unwrap();
    assert!((v - (0.4f64.cos() + 2.0)).abs() < 1e-10, "{v} {:?}", e.primitive().value(&[0.4, 1.1]));
}

#[test]
fn near_lagrangian_extension_survives_a_tangency() {
    let t1 = ModelManifold::torus(1).unwrap();
    let s = Arc::new(CotangentLcsStructure::with_lee_coordinate(t1.clone(), 0).unwrap());
    let map = lcs_core::SmoothMap::new(t1, s.total().clone(), |u| {
        let th = u[0];
        Ok(vec![th + th.sin() * 1.5, th.sin() + 2.0])
    });
    let e = ParametricEmbedding::new(s.clone(), map).unwrap();
    let cert = solve_primitive(&e, &[0.0], &PrimitiveOptions { grid: 256, ..Default::default() }).unwrap();
    assert!(cert.valid, "{cert:?}");
    let e = ExactLagrangian::new(e, cert).unwrap();
    let err = near_lagrangian_extension(&e, 0.05);
    let e = match err {
        Ok(_) => e,
        Err(_) => {
            let beta = e.embedding.structure().beta_base().clone();
            let fmin = (0..256)
                .map(|i| e.primitive().value(&[i as f64 / 256.0 * std::f64::consts::TAU]).unwrap())
                .fold(f64::INFINITY, f64::min);
            let moved = translate_by_form(&e.embedding, &beta, fmin - 1.0).unwrap();
            ExactLagrangian::certify(moved, &PrimitiveOptions { grid: 256, ..Default::default() }).unwrap()
        }
    };
    let h = near_lagrangian_extension(&e, 0.05).unwrap();
    let rep = near_lagrangian_report(&e, &h, 0.05, 256).unwrap();
    assert!(rep.pass, "{rep:?}");
}
