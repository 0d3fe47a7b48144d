use lcs_core::chords::{mvt_obstruction_report, reeb_correspondence, scan_chords, ChordOptions, ChordSign, ExactLagrangian};
use lcs_core::lagrangian::*;
use lcs_core::sampling::torus_grid;
use lcs_core::{FormExpression, ModelManifold, ScalarField};

fn translated(e: ParametricEmbedding, c: f64) -> ParametricEmbedding {
    let beta = e.structure().beta_base().clone();
    translate_by_form(&e, &beta, c).unwrap()
}

#[test]
fn examples_are_lagrangian_and_exact() {
    for e in [example_torus_1().unwrap(), example_torus_2().unwrap()] {
        let grid = torus_grid(2, 128);
        let r = verify_lagrangian(&e, &grid).unwrap();
        assert!(r.pass, "{}: {:?}", e.name(), r);
        let cert = solve_primitive(&e, &[0.3, 0.1], &PrimitiveOptions::default()).unwrap();
        assert!(cert.valid, "{}: {:?}", e.name(), cert);
        assert!(cert.declared_mismatch.unwrap() < 1e-8, "{:?}", cert.declared_mismatch);
    }
}

#[test]
fn example_one_holonomy_is_e_to_two_pi() {
    let e = example_torus_1().unwrap();
    let cert = solve_primitive(&e, &[0.0, 0.0], &PrimitiveOptions::default()).unwrap();
    let mu = cert.multiplicative_holonomy[1];
    let want = std::f64::consts::TAU.exp();
    assert!(((mu - want) / want).abs() < 1e-6, "{mu}");
    assert!(cert.unique_primitive);
}

#[test]
fn untranslated_example_one_has_no_chords() {
    let e = ExactLagrangian::certify(example_torus_1().unwrap(), &PrimitiveOptions { grid: 64, ..Default::default() }).unwrap();
    let scan = scan_chords(&e, None, &ChordOptions::default()).unwrap();
    assert!(scan.chords.is_empty(), "{}", scan.chords.len());
    assert!(scan.unresolved.is_empty());
}

#[test]
fn translated_examples_have_ratio_one_chords() {
    for e in [example_torus_1().unwrap(), example_torus_2().unwrap()] {
        let name = e.name().to_string();
        let e = ExactLagrangian::certify(translated(e, -2.0), &PrimitiveOptions { grid: 64, ..Default::default() }).unwrap();
        let scan = scan_chords(&e, None, &ChordOptions::default()).unwrap();
        assert!(!scan.chords.is_empty(), "{name}");
        for c in &scan.chords {
            let t = if c.sign == ChordSign::Positive { c.t } else { 1.0 / c.t };
            assert!((t - 3.0).abs() < 1e-6, "{name} {c:?}");
            assert!((c.mvt_ratio.unwrap() - 1.0).abs() < 1e-6);
            assert!(c.defect.abs() < 1e-6);
            assert!(c.essential && c.mvt_obstructed);
        }
        assert_eq!(scan.families, 2, "{name}");
        let rep = mvt_obstruction_report(&e, 0.0, &ChordOptions::default()).unwrap();
        assert!(rep.obstructed);
    }
}

#[test]
fn lift_chords_of_constant_jets() {
    let t1 = ModelManifold::torus(1).unwrap();
    let dtheta = FormExpression::dx(t1.clone(), 0).unwrap();
    let popts = PrimitiveOptions { grid: 32, ..Default::default() };
    let lift = |c: f64| {
        let l = LegendrianEmbedding::jet_graph(&ScalarField::constant(t1.clone(), c)).unwrap();
        ExactLagrangian::certify(lift_legendrian(&l, &t1, &dtheta).unwrap(), &popts).unwrap()
    };
    let (a, b) = (lift(1.0), lift(2.0));
    let opts = ChordOptions { grid: 32, ..Default::default() };
    let scan = scan_chords(&a, Some(&b), &opts).unwrap();
    assert_eq!(scan.families, 1);
    for c in &scan.chords {
        assert!((c.t - 2.0).abs() < 1e-9);
        assert!(c.defect.abs() < 1e-8 && c.essential);
    }
    let comps: Vec<_> = [1.0, 2.0].iter().map(|&c| LegendrianEmbedding::jet_graph(&ScalarField::constant(t1.clone(), c)).unwrap()).collect();
    let rep = reeb_correspondence(&comps, 0.5, &opts).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert_eq!(rep.reeb_families, 1);
}
