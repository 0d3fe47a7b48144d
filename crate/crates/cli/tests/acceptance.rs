//! Acceptance suite: one pass/fail line per criterion.

#![allow(clippy::type_complexity)]

use lcs_cli::report::without_timestamp;
use lcs_core::chords::{jet_space_samples, reeb_identity_residuals, scan_chords, ChordOptions, ChordSign, ExactLagrangian};
use lcs_core::extension::{build_extension, ExtensionOptions, HSource};
use lcs_core::lagrangian::*;
use lcs_core::moser::*;
use lcs_core::sampling::{torus_grid, SplitMix};
use lcs_core::{check_nondegenerate, lichnerowicz_d, CotangentLcsStructure, FormExpression, ModelManifold, ScalarField};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn translated(e: ParametricEmbedding, c: f64) -> ParametricEmbedding {
    let beta = e.structure().beta_base().clone();
    translate_by_form(&e, &beta, c).unwrap()
}

fn torus(n: usize) -> ModelManifold {
    ModelManifold::torus(n).unwrap()
}

fn c1_lichnerowicz_squares_to_zero() -> Outcome {
    let base = torus(2);
    let mut rng = SplitMix::new(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, b, c) = (4.0 * rng.next_f64() - 2.0, 4.0 * rng.next_f64() - 2.0, 2.0 * rng.next_f64() - 1.0);
        let phase = ScalarField::new(base.clone(), move |x| Ok(x[0].sin() * x[1].cos() * c));
        let beta = FormExpression::constant(base.clone(), 1, vec![a, b]).unwrap().add(&FormExpression::function(&phase).d().unwrap()).unwrap();
        let s = CotangentLcsStructure::new(base.clone(), beta).unwrap();
        let total = s.total().clone();
        let comps: Vec<ScalarField> = (0..4)
            .map(|k| {
                let w: Vec<f64> = (0..3).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
                let j = (k + 1) % 4;
                ScalarField::new(total.clone(), move |x| Ok(x[k].sin() * w[0] + (x[j] * 2.0).cos() * w[1] + x[j] * x[k] * w[2]))
            })
            .collect();
        let alpha = FormExpression::one_form(total, &comps).unwrap();
        let x: Vec<f64> = (0..4).map(|i| if i < 2 { TAU * rng.next_f64() } else { 8.0 * rng.next_f64() - 4.0 }).collect();
        let dd = lichnerowicz_d(&lichnerowicz_d(&alpha, s.beta()).unwrap(), s.beta()).unwrap();
        worst = worst.max(dd.evaluate(&x).unwrap().max_abs());
    }
    check(worst <= 1e-9, format!("max coefficient of d_β d_β α over 100 triples = {worst:.3e} (≤ 1e-9)"))
}

fn c2_examples_exact() -> Outcome {
    let mut parts = vec![];
    let mut ok = true;
    for e in [example_torus_1().unwrap(), example_torus_2().unwrap()] {
        let lag = verify_lagrangian(&e, &torus_grid(2, 128)).unwrap();
        let cert = solve_primitive(&e, &[0.0, 0.0], &PrimitiveOptions::default()).unwrap();
        ok &= lag.pass && cert.valid && cert.residual_sup <= 1e-8;
        parts.push(format!("{}: Lagrangian {:.1e}, primitive residual {:.3e}", e.name(), lag.residual_sup, cert.residual_sup));
    }
    check(ok, parts.join("; "))
}

fn c3_translated_chords() -> Outcome {
    let popts = PrimitiveOptions { grid: 64, ..Default::default() };
    let opts = ChordOptions::default();
    let e1 = ExactLagrangian::certify(example_torus_1().unwrap(), &popts).unwrap();
    let own = scan_chords(&e1, None, &opts).unwrap().chords.len();
    let mut ok = own == 0;
    let mut parts = vec![format!("Example 1 self-chords: {own}")];
    for e in [example_torus_1().unwrap(), example_torus_2().unwrap()] {
        let name = e.name().to_string();
        let e = ExactLagrangian::certify(translated(e, -2.0), &popts).unwrap();
        let scan = scan_chords(&e, None, &opts).unwrap();
        let (mut dt, mut dr, mut dd) = (0.0f64, 0.0f64, 0.0f64);
        let mut classified = true;
        for c in &scan.chords {
            let t = if c.sign == ChordSign::Positive { c.t } else { 1.0 / c.t };
            dt = dt.max((t - 3.0).abs());
            dr = dr.max(c.mvt_ratio.map_or(f64::INFINITY, |r| (r - 1.0).abs()));
            dd = dd.max(c.defect.abs());
            classified &= c.essential && c.mvt_obstructed;
        }
        ok &= !scan.chords.is_empty() && dt <= 1e-6 && dr <= 1e-6 && dd <= 1e-6 && classified;
        parts.push(format!(
            "{name} translated: {} chords in {} families, |t−3| ≤ {dt:.1e}, |ratio−1| ≤ {dr:.1e}, |defect| ≤ {dd:.1e}, essential+obstructed: {classified}",
            scan.chords.len(),
            scan.families
        ));
    }
    check(ok, parts.join("; "))
}

fn c4_lift_chords() -> Outcome {
    let t1 = torus(1);
    let dtheta = FormExpression::dx(t1.clone(), 0).unwrap();
    let popts = PrimitiveOptions { grid: 32, ..Default::default() };
    let lift = |c: f64| {
        let l = LegendrianEmbedding::jet_graph(&ScalarField::constant(t1.clone(), c)).unwrap();
        ExactLagrangian::certify(lift_legendrian(&l, &t1, &dtheta).unwrap(), &popts).unwrap()
    };
    let (a, b) = (lift(1.0), lift(2.0));
    let scan = scan_chords(&a, Some(&b), &ChordOptions { grid: 32, ..Default::default() }).unwrap();
    let dt = scan.chords.iter().map(|c| (c.t - 2.0).abs()).fold(0.0, f64::max);
    let dd = scan.chords.iter().map(|c| c.defect.abs()).fold(0.0, f64::max);
    check(
        scan.families == 1 && !scan.chords.is_empty() && dt <= 1e-9 && dd <= 1e-8,
        format!("{} chords in {} family, |t−2| ≤ {dt:.1e}, |defect| ≤ {dd:.1e}", scan.chords.len(), scan.families),
    )
}

fn c5_reeb_identities() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for n in [1, 2] {
        let m = torus(n);
        let (a, b) = reeb_identity_residuals(&m, &jet_space_samples(&m, 100, 0.5, 4.0, 5)).unwrap();
        worst = (worst.0.max(a), worst.1.max(b));
    }
    check(worst.0 <= 1e-12 && worst.1 <= 1e-12, format!("|(α/s)(R) − 1| ≤ {:.1e}, |ι_R d(α/s)| ≤ {:.1e}", worst.0, worst.1))
}

fn c6_contact_lift() -> Outcome {
    let t1 = torus(1);
    let t2 = torus(2);
    let r1 = contact_lift_check(&t1, &FormExpression::dx(t1.clone(), 0).unwrap(), 100).unwrap();
    let beta2 = FormExpression::constant(t2.clone(), 1, vec![1.0, 0.5]).unwrap();
    let r2 = contact_lift_check(&t2, &beta2, 100).unwrap();
    let worst = r1.max_difference.max(r2.max_difference);
    check(worst <= 1e-10, format!("max |α′∧(dα′)ⁿ − α∧(dα)ⁿ| = {worst:.3e} on 𝕋¹ and 𝕋²"))
}

fn c7_degeneracy_at_unit_radius() -> Outcome {
    let s = CotangentLcsStructure::canonical(torus(1)).unwrap();
    let g = ScalarField::new(s.total().clone(), |x| Ok((x[1] * x[1] * 0.5).exp()));
    let inv = g.map(|v| Ok(v.recip()));
    let form = s.lambda().scale_by(&inv).unwrap().d().unwrap();
    let cells = 200;
    let cell = 2.0 / cells as f64;
    let pts: Vec<Vec<f64>> = (0..cells).map(|k| vec![0.3, (k as f64 + 0.5) * cell]).collect();
    let rep = check_nondegenerate(&form, &pts, 1e-12).unwrap();
    let radii: Vec<f64> = rep.sign_changes.iter().map(|(i, _)| (*i as f64 + 1.0) * cell).collect();
    let ok = radii.len() == 1 && (radii[0] - 1.0).abs() <= cell;
    check(ok, format!("Pfaffian of d(λ/g) changes sign at r = {radii:?} (cell {cell})"))
}

fn c8_extension() -> Outcome {
    let t1 = torus(1);
    let s = Arc::new(CotangentLcsStructure::with_lee_coordinate(t1.clone(), 0).unwrap());
    let popts = PrimitiveOptions { grid: 64, ..Default::default() };
    let e = ExactLagrangian::certify(beta_graph(&ScalarField::constant(t1, -0.3), &s).unwrap(), &popts).unwrap();
    let p = e.embedding.point(&[1.0]).unwrap();
    let graph_ok = (p[1] - 0.3).abs() < 1e-15;
    let h = ScalarField::new(s.total().clone(), |x| Ok(x[0].sin() * 0.2 + 1.0));
    let ext = build_extension(&e, &HSource::Field(h), &ExtensionOptions::default()).unwrap();
    let r = &ext.report;
    let shell = ext.field.grid.radii.len() - 1;
    let last_ones = (0..ext.field.grid.base_nodes.len())
        .all(|b| (0..ext.field.grid.directions.len()).all(|d| ext.field.at(b, d, shell) == 1.0));
    let e1 = ExactLagrangian::certify(translated(example_torus_1().unwrap(), -2.0), &popts).unwrap();
    let refusal = build_extension(&e1, &HSource::Primitive { width: 0.12 }, &ExtensionOptions::for_dim(2)).err().map(|x| x.to_string());
    let refused = refusal.as_deref().is_some_and(|m| m.contains("ratio = 1.0000"));
    check(
        graph_ok && r.bound.max_slope < 1.0 && r.collar_max_deviation <= 1e-6 && r.bound.outer_shell_ones && last_ones && refused,
        format!(
            "max radial log-slope {:.6}, collar deviation {:.1e} on {} nodes, outer shell ≡ 1: {last_ones}; translated Example 1 refused: {}",
            r.bound.max_slope,
            r.collar_max_deviation,
            r.collar_nodes,
            refusal.unwrap_or_else(|| "NOT REFUSED".into())
        ),
    )
}

fn c9_moser() -> Outcome {
    let s2 = Arc::new(CotangentLcsStructure::canonical(torus(2)).unwrap());
    let opts = FlowOptions::default();
    let id = MoserProblem::identity(s2.clone());
    let seeds = fiber_seeds(s2.total(), 1000, 5.0, 0);
    let idr = integrate_flow(&id, &seeds, &opts).unwrap();
    let p = constant_ball(s2.clone(), 2.0, 1.0, 4.0).unwrap();
    let inner: Vec<_> = fiber_seeds(s2.total(), 400, 1.0, 1).into_iter().filter(|x| x[2].hypot(x[3]) <= 1.0).collect();
    let ir = integrate_flow(&p, &inner, &opts).unwrap();
    let factor = ir.samples.iter().flat_map(|f| (2..4).map(move |i| (f.image[i] - 0.5 * f.seed[i]).abs())).fold(0.0, f64::max);
    let pseeds = fiber_seeds(s2.total(), 256, 4.5, 2);
    let pr = integrate_flow(&p, &pseeds, &opts).unwrap();
    let pb = verify_conformal_pullback(&p, &pr, &pseeds).unwrap();
    let dr = integrate_flow(&p, &seeds, &opts).unwrap();
    check(
        idr.max_displacement <= 1e-12 && factor <= 1e-6 && pb.residual <= 1e-4 && dr.max_fiber_drift <= 1e-8,
        format!(
            "identity displacement {:.1e}; constant ball |p′ − p/2| ≤ {factor:.1e}; pullback residual {:.2e} on 256 samples; fiber drift {:.1e} on 1000 seeds",
            idr.max_displacement, pb.residual, dr.max_fiber_drift
        ),
    )
}

fn c10_degrees() -> Outcome {
    let s2 = Arc::new(CotangentLcsStructure::canonical(torus(2)).unwrap());
    let z = projection_degree(&zero_section(&s2).unwrap()).unwrap().degree;
    let e1 = projection_degree(&example_torus_1().unwrap()).unwrap().degree;
    let f = ScalarField::new(s2.base().clone(), |x| Ok(x[0].sin() * x[1].cos() + 3.0));
    let bg = projection_degree(&beta_graph(&f, &Arc::new(CotangentLcsStructure::with_lee_coordinate(torus(2), 1).unwrap())).unwrap()).unwrap().degree;
    check(z == 1 && e1 == 2 && bg == 1, format!("0-section {z}, Example 1 {e1}, β-graph {bg}"))
}

fn c11_holonomy() -> Outcome {
    let cert = solve_primitive(&example_torus_1().unwrap(), &[0.0, 0.0], &PrimitiveOptions::default()).unwrap();
    let mu = cert.multiplicative_holonomy[1];
    let want = TAU.exp();
    let rel = ((mu - want) / want).abs();
    check(rel <= 1e-6 && cert.unique_primitive, format!("φ-loop holonomy {mu:.9} vs e^2π = {want:.9} (relative {rel:.1e}), unique primitive: {}", cert.unique_primitive))
}

fn scenes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn run_cli(command: &str, scene: &Path, out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_lcslab"))
        .args([command, scene.to_str().unwrap(), "--seed", "0", "--out", out.to_str().unwrap()])
        .output()
        .expect("lcslab runs");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn c12_determinism() -> Outcome {
    let dir = scenes_dir();
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let fixtures = manifest["fixtures"].as_array().unwrap();
    let listed: Vec<&str> = fixtures.iter().map(|f| f["scene"].as_str().unwrap()).collect();
    let mut problems = vec![];
    for entry in std::fs::read_dir(&dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name.ends_with(".json") && name != "manifest.json" && !listed.contains(&name.as_str()) {
            problems.push(format!("{name} missing from manifest"));
        }
    }
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut reports = 0;
    for f in fixtures {
        let scene = dir.join(f["scene"].as_str().unwrap());
        let cmd = f["command"].as_str().unwrap();
        let want = f["exit"].as_i64().unwrap() as i32;
        let ((ca, ea), (cb, eb)) = std::thread::scope(|sc| {
            let first = sc.spawn(|| run_cli(cmd, &scene, a.path()));
            let second = run_cli(cmd, &scene, b.path());
            (first.join().unwrap(), second)
        });
        if ca != want || cb != want {
            problems.push(format!("{} {cmd}: exit {ca}/{cb}, expected {want}", scene.display()));
        }
        if want == 1 {
            if ea != eb || !ea.contains("scene error at /") {
                problems.push(format!("{}: parse errors differ or lack a pointer: {ea}", scene.display()));
            }
            continue;
        }
        let stem = scene.file_stem().unwrap().to_str().unwrap();
        let file = format!("{stem}.{cmd}.json");
        let ra = std::fs::read_to_string(a.path().join(&file)).unwrap_or_default();
        let rb = std::fs::read_to_string(b.path().join(&file)).unwrap_or_default();
        match (without_timestamp(&ra), without_timestamp(&rb)) {
            (Ok(x), Ok(y)) if x == y => {
                let strip = |t: &str| t.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n");
                if strip(&ra) != strip(&rb) {
                    problems.push(format!("{file}: bytes differ outside the timestamp"));
                }
                reports += 1;
            }
            _ => problems.push(format!("{file}: reports differ or are missing")),
        }
    }
    check(problems.is_empty(), format!("{} fixtures, {reports} reports byte-identical modulo timestamp{}", fixtures.len(), if problems.is_empty() { String::new() } else { format!("; problems: {problems:?}") }))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("criterion 1 (d_β² = 0)", c1_lichnerowicz_squares_to_zero),
        ("criterion 2 (examples exact)", c2_examples_exact),
        ("criterion 3 (translated chords)", c3_translated_chords),
        ("criterion 4 (lift chords)", c4_lift_chords),
        ("criterion 5 (Reeb identities)", c5_reeb_identities),
        ("criterion 6 (contact lift)", c6_contact_lift),
        ("criterion 7 (degeneracy at r = 1)", c7_degeneracy_at_unit_radius),
        ("criterion 8 (extension)", c8_extension),
        ("criterion 9 (Moser flow)", c9_moser),
        ("criterion 10 (projection degrees)", c10_degrees),
        ("criterion 11 (holonomy)", c11_holonomy),
        ("criterion 12 (determinism)", c12_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
