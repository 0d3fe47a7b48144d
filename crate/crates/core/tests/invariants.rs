use lcs_core::chords::classify_values;
use lcs_core::lagrangian::{beta_graph, solve_primitive, PrimitiveOptions};
use lcs_core::{lichnerowicz_d, CotangentLcsStructure, FormExpression, Jet2, ModelManifold, ScalarField};
use proptest::prelude::*;
use std::f64::consts::TAU;
use std::sync::Arc;

fn trig(domain: &ModelManifold, c: [f64; 3], i: usize, j: usize) -> ScalarField {
    ScalarField::new(domain.clone(), move |x| Ok((x[i] * 1.0).sin() * c[0] + (x[j] + x[i] * 2.0).cos() * c[1] + x[j] * x[j] * c[2]))
}

fn closed_beta(base: &ModelManifold, a: f64, b: f64, c: f64) -> FormExpression {
    let phase = ScalarField::new(base.clone(), move |x| Ok(x[0].sin() * x[1].cos() * c));
    let lin = FormExpression::constant(base.clone(), 1, vec![a, b]).unwrap();
    lin.add(&FormExpression::function(&phase).d().unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lichnerowicz_differential_squares_to_zero(
        a in -2.0..2.0f64, b in -2.0..2.0f64, c in -1.0..1.0f64,
        coeffs in prop::collection::vec(-1.0..1.0f64, 12),
        x in prop::collection::vec(-3.0..3.0f64, 4),
    ) {
        let base = ModelManifold::torus(2).unwrap();
        let s = CotangentLcsStructure::new(base.clone(), closed_beta(&base, a, b, c)).unwrap();
        let total = s.total().clone();
        let comps: Vec<ScalarField> = (0..4)
            .map(|k| trig(&total, [coeffs[3 * k], coeffs[3 * k + 1], coeffs[3 * k + 2]], k, (k + 1) % 4))
            .collect();
        let alpha = FormExpression::one_form(total, &comps).unwrap();
        let dd = lichnerowicz_d(&lichnerowicz_d(&alpha, s.beta()).unwrap(), s.beta()).unwrap();
        prop_assert!(dd.evaluate(&x).unwrap().max_abs() <= 1e-9);
    }

    #[test]
    fn jet_arithmetic_matches_finite_differences(x in -1.5..1.5f64, y in -1.5..1.5f64) {
        let f = |v: &[Jet2]| v[0].sin() * v[1].exp() + v[0] * v[1] / (v[1].cos() + 2.0);
        let j = f(&Jet2::seed(&[x, y]));
        let h = 1e-5;
        let val = |a: f64, b: f64| f(&Jet2::seed(&[a, b])).value();
        let gx = (val(x + h, y) - val(x - h, y)) / (2.0 * h);
        let gy = (val(x, y + h) - val(x, y - h)) / (2.0 * h);
        let gxy = (val(x + h, y + h) - val(x + h, y - h) - val(x - h, y + h) + val(x - h, y - h)) / (4.0 * h * h);
        prop_assert!((j.grad(0) - gx).abs() < 1e-8);
        prop_assert!((j.grad(1) - gy).abs() < 1e-8);
        prop_assert!((j.hess(0, 1) - gxy).abs() < 1e-4);
        prop_assert!((j.hess(0, 1) - j.hess(1, 0)).abs() < 1e-14);
    }

    #[test]
    fn jet_chain_rule_composes(x in -1.0..1.0f64) {
        let inner = Jet2::seed(&[x])[0].sin() * 0.5;
        let outer = inner.exp();
        let e = (0.5 * x.sin()).exp();
        prop_assert!((outer.grad(0) - e * 0.5 * x.cos()).abs() < 1e-12);
        let d2 = e * (0.25 * x.cos().powi(2) - 0.5 * x.sin());
        prop_assert!((outer.hess(0, 0) - d2).abs() < 1e-12);
    }

    #[test]
    fn reversed_chord_keeps_ratio_and_essentiality(t in 1.01..20.0f64, fa in 0.1..5.0f64, fb in 0.1..5.0f64) {
        let (d1, s1, e1, r1) = classify_values(t, fa, fb, 0.0);
        let (d2, s2, e2, r2) = classify_values(1.0 / t, fb, fa, 0.0);
        prop_assert_ne!(s1, s2);
        prop_assert_eq!(e1, e2);
        prop_assert!((d2 + d1 / t).abs() < 1e-12);
        prop_assert!((r1.unwrap() - r2.unwrap()).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn multiplicative_holonomy_is_exp_of_the_period(c in -0.8..0.8f64, amp in -0.5..0.5f64) {
        let base = ModelManifold::torus(1).unwrap();
        let beta = FormExpression::constant(base.clone(), 1, vec![c]).unwrap();
        let s = Arc::new(CotangentLcsStructure::new(base.clone(), beta).unwrap());
        let f = ScalarField::new(base, move |x| Ok(x[0].cos() * amp + 2.0));
        let e = beta_graph(&f, &s).unwrap();
        let cert = solve_primitive(&e, &[0.0], &PrimitiveOptions::default()).unwrap();
        let period = TAU * c;
        prop_assert!((cert.beta_periods[0] - period).abs() < 1e-9);
        prop_assert!((cert.multiplicative_holonomy[0] / period.exp() - 1.0).abs() < 1e-6);
        prop_assert_eq!(cert.unique_primitive, c != 0.0);
    }
}
