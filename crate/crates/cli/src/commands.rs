//! The subcommands. Each fills a [`Report`] with verdicts and results.

use crate::report::{Report, Tolerances, Verdict};
use crate::scene::{certify, lifts, Scene, SceneError};
use lcs_core::chords::{chords_to_csv, mvt_obstruction_report, reeb_correspondence, scan_chords, ChordScan, ChordSign, LiouvilleChord};
use lcs_core::extension::{build_extension, ExtensionResult, HSource};
use lcs_core::lagrangian::{parameter_grid, solve_primitive, verify_lagrangian, ParametricEmbedding};
use lcs_core::lcs::{criterion_radial_log_derivative, verification_grid};
use lcs_core::moser::{
    admissibility_grid, fiber_seeds, integrate_flow, liouville_family_check, projection_degree, straighten_pipeline,
    verify_conformal_pullback, FlowOptions, FlowResult,
};
use lcs_core::sampling::SplitMix;
use lcs_core::{check_nondegenerate, lichnerowicz_d, FormExpression, LcsError, ScalarField, StructureRef};
use serde::Serialize;
use std::f64::consts::TAU;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    ValidateStructure,
    VerifyLagrangian,
    ScanChords,
    MvtReport,
    BuildExtension,
    MoserDeform,
    LiftLegendrian,
    ProjectionDegree,
    FullPipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ValidateStructure => "validate-structure",
            Command::VerifyLagrangian => "verify-lagrangian",
            Command::ScanChords => "scan-chords",
            Command::MvtReport => "mvt-report",
            Command::BuildExtension => "build-extension",
            Command::MoserDeform => "moser-deform",
            Command::LiftLegendrian => "lift-legendrian",
            Command::ProjectionDegree => "projection-degree",
            Command::FullPipeline => "full-pipeline",
        }
    }
}

/// Inputs shared by every subcommand.
pub struct Context<'a> {
    pub scene: &'a Scene,
    pub seed: u64,
    pub tol: &'a Tolerances,
    pub out: &'a Path,
    pub csv: bool,
}

/// Errors that stop a command before a report exists.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Scene(#[from] SceneError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type Run = Result<(), RunError>;

/// Records `r` as a result, or its error as a failed verdict.
fn stage<T>(rep: &mut Report, name: &str, r: lcs_core::Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            rep.failure(name, &e);
            None
        }
    }
}

pub fn run(cmd: Command, cx: &Context, rep: &mut Report) -> Run {
    match cmd {
        Command::ValidateStructure => validate_structure(cx, rep),
        Command::VerifyLagrangian => {
            let built = cx.scene.build()?;
            let e = cx.scene.require_lagrangian(&built)?;
            lagrangian_stage(cx, rep, &e);
            Ok(())
        }
        Command::ScanChords => scan(cx, rep),
        Command::MvtReport => mvt(cx, rep),
        Command::BuildExtension => extension(cx, rep),
        Command::MoserDeform => moser(cx, rep),
        Command::LiftLegendrian => lift(cx, rep),
        Command::ProjectionDegree => {
            let built = cx.scene.build()?;
            let e = cx.scene.require_lagrangian(&built)?;
            degree_stage(cx, rep, &e);
            Ok(())
        }
        Command::FullPipeline => full(cx, rep),
    }
}

fn random_one_form(s: &StructureRef, rng: &mut SplitMix) -> lcs_core::Result<FormExpression> {
    let total = s.total().clone();
    let m = total.dim();
    let comps: Vec<ScalarField> = (0..m)
        .map(|k| {
            let c: Vec<f64> = (0..4).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            let j = (k + 1) % m;
            ScalarField::new(total.clone(), move |x| Ok(x[k].sin() * c[0] + (x[j] + x[k] * 2.0).cos() * c[1] + x[j] * x[k] * c[2] + c[3]))
        })
        .collect();
    FormExpression::one_form(total, &comps)
}

#[derive(Serialize)]
struct RadialScan {
    direction: Vec<f64>,
    base_point: Vec<f64>,
    cell: f64,
    cells: usize,
    min_abs_pfaffian: f64,
    argmin_radius: f64,
    degenerate_radii: Vec<f64>,
    sup_log_slope: f64,
    sup_log_slope_at: Vec<f64>,
}

fn validate_structure(cx: &Context, rep: &mut Report) -> Run {
    if let Some(beta) = cx.scene.lee_form()? {
        if let Some((r, at)) = stage(rep, "lee-form-closed", beta.closedness_residual()) {
            let tol = cx.tol.get("closedness");
            if r > tol {
                rep.verdict(Verdict::at_most("lee-form-closed", r, tol));
                rep.result("lee_form_closedness", serde_json::json!({ "residual": r, "worst_point": at }));
                return Ok(());
            }
        }
    }
    let built = cx.scene.build()?;
    let s = cx.scene.working_structure(&built)?;
    let moser = match &cx.scene.moser {
        Some(_) => Some(cx.scene.moser_problem(&s)?),
        None => None,
    };
    let tol = cx.tol.get("closedness");
    if let Some((r, at)) = stage(rep, "lee-form-closed", s.beta_base().closedness_residual()) {
        rep.verdict(Verdict::at_most("lee-form-closed", r, tol));
        rep.result("lee_form_closedness", serde_json::json!({ "residual": r, "worst_point": at }));
    }
    let vacuous = s.total().dim() < 3;
    let mut rng = SplitMix::new(cx.seed);
    let dd = (|| -> lcs_core::Result<f64> {
        if vacuous {
            return Ok(0.0);
        }
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let a = random_one_form(&s, &mut rng)?;
            let x: Vec<f64> = (0..s.total().dim()).map(|i| if i < s.n() { TAU * rng.next_f64() } else { 8.0 * rng.next_f64() - 4.0 }).collect();
            let dd = lichnerowicz_d(&lichnerowicz_d(&a, s.beta())?, s.beta())?;
            worst = worst.max(dd.evaluate(&x)?.max_abs());
        }
        Ok(worst)
    })();
    if let Some(w) = stage(rep, "lichnerowicz-squares-to-zero", dd) {
        rep.verdict(Verdict::at_most("lichnerowicz-squares-to-zero", w, tol));
    }
    let grid: Vec<_> = verification_grid(&s).into_iter().take(512).collect();
    let omega_closed = (|| -> lcs_core::Result<f64> {
        if vacuous {
            return Ok(0.0);
        }
        let d = lichnerowicz_d(s.omega(), s.beta())?;
        let mut w: f64 = 0.0;
        for x in &grid {
            w = w.max(d.evaluate(x)?.max_abs());
        }
        Ok(w)
    })();
    if let Some(w) = stage(rep, "omega-d-beta-closed", omega_closed) {
        rep.verdict(Verdict::at_most("omega-d-beta-closed", w, tol));
    }
    if let Some(nd) = stage(rep, "omega-nondegenerate", check_nondegenerate(s.omega(), &grid, cx.tol.get("nondegeneracy"))) {
        rep.verdict(Verdict::counted(
            "omega-nondegenerate",
            nd.nondegenerate,
            nd.min_abs_pfaffian,
            format!("min |Pf| = {:.6e} over {} samples", nd.min_abs_pfaffian, grid.len()),
        ));
    }
    if let (Some(p), Some(spec)) = (moser, &cx.scene.moser) {
        let scan = (|| -> lcs_core::Result<RadialScan> {
            let n = s.n();
            let inv = p.g.map(|v| Ok(v.recip()));
            let form = lichnerowicz_d(&s.lambda().scale_by(&inv)?, s.beta())?;
            let dir: Vec<f64> = vec![1.0 / (n as f64).sqrt(); n];
            let base_point = vec![0.3; n];
            let cells = spec.radial_cells.max(2);
            let cell = spec.seed_radius / cells as f64;
            let pts: Vec<Vec<f64>> = (0..cells)
                .map(|k| {
                    let r = (k as f64 + 0.5) * cell;
                    base_point.iter().copied().chain(dir.iter().map(|d| d * r)).collect()
                })
                .collect();
            let nd = check_nondegenerate(&form, &pts, cx.tol.get("nondegeneracy"))?;
            let radius = |i: usize| (i as f64 + 0.5) * cell;
            let crit = criterion_radial_log_derivative(&p.g, &s, &admissibility_grid(&p))?;
            Ok(RadialScan {
                direction: dir,
                base_point: base_point.clone(),
                cell,
                cells,
                min_abs_pfaffian: nd.min_abs_pfaffian,
                argmin_radius: radius(nd.argmin),
                degenerate_radii: nd.sign_changes.iter().map(|(i, j)| 0.5 * (radius(*i) + radius(*j))).collect(),
                sup_log_slope: crit.sup,
                sup_log_slope_at: crit.argmax,
            })
        })();
        if let Some(r) = stage(rep, "rescaled-form-nondegenerate", scan) {
            let ok = r.degenerate_radii.is_empty() && r.min_abs_pfaffian > cx.tol.get("nondegeneracy");
            let detail = if ok {
                format!("no sign change of the Pfaffian along the ray; min |Pf| = {:.3e}", r.min_abs_pfaffian)
            } else {
                format!("degenerate near r = {:?} (cell {:.4})", r.degenerate_radii, r.cell)
            };
            rep.verdict(Verdict::counted("rescaled-form-nondegenerate", ok, r.min_abs_pfaffian, detail));
            rep.verdict(Verdict::below("radial-log-derivative", r.sup_log_slope, 1.0));
            rep.result("radial_scan", r);
        }
    }
    rep.result("structure", serde_json::json!({ "base_dim": s.n(), "total_dim": s.total().dim() }));
    Ok(())
}

/// Lagrangian residual and exactness certificate.
fn lagrangian_stage(cx: &Context, rep: &mut Report, e: &ParametricEmbedding) -> bool {
    let grid = match parameter_grid(e.source(), cx.scene.grids.lagrangian) {
        Ok(g) => g,
        Err(x) => {
            rep.failure("lagrangian", &x);
            return false;
        }
    };
    let mut ok = false;
    if let Some(r) = stage(rep, "lagrangian", verify_lagrangian(e, &grid)) {
        let tol = cx.tol.get("lagrangian");
        rep.verdict(Verdict::at_most("lagrangian-residual", r.residual_sup, tol));
        rep.verdict(Verdict::counted(
            "immersion",
            r.immersion_failure.is_none(),
            r.min_immersion_margin,
            format!("min singular value {:.6e}", r.min_immersion_margin),
        ));
        ok = r.residual_sup <= tol && r.immersion_failure.is_none();
        rep.result("lagrangian", r);
    }
    let base = vec![0.0; e.source().dim()];
    if let Some(c) = stage(rep, "exactness", solve_primitive(e, &base, &cx.scene.primitive_options(cx.tol))) {
        rep.verdict(Verdict::at_most("exactness-residual", c.residual_sup, cx.tol.get("exactness")));
        rep.verdict(Verdict::flag("exactness-certificate", c.valid, format!("holonomy defects {:?}", c.holonomy_defects)));
        ok &= c.valid;
        rep.result("exactness", c);
    } else {
        ok = false;
    }
    ok
}

#[derive(Serialize)]
struct ScanSummary {
    chords: usize,
    families: usize,
    seeds: usize,
    rejected_seeds: usize,
    degenerate_seeds: usize,
    unresolved: usize,
    obstructed: usize,
    representatives: Vec<LiouvilleChord>,
}

fn summary(scan: &ChordScan) -> ScanSummary {
    ScanSummary {
        chords: scan.chords.len(),
        families: scan.families,
        seeds: scan.seeds,
        rejected_seeds: scan.rejected_seeds,
        degenerate_seeds: scan.degenerate_seeds,
        unresolved: scan.unresolved.len(),
        obstructed: scan.chords.iter().filter(|c| c.mvt_obstructed).count(),
        representatives: scan.representatives().cloned().collect(),
    }
}

fn normalized_t(c: &LiouvilleChord) -> f64 {
    if c.sign == ChordSign::Positive {
        c.t
    } else {
        1.0 / c.t
    }
}

fn expectations(cx: &Context, rep: &mut Report, chords: &[LiouvilleChord], families: usize) {
    if let Some(t) = cx.scene.expect.chord_t {
        let dev = chords.iter().map(|c| (normalized_t(c) - t).abs()).fold(0.0, f64::max);
        let ok = !chords.is_empty() && dev <= 1e-6;
        rep.verdict(Verdict::counted("expected-chord-t", ok, dev, format!("max |t − {t}| = {dev:.3e} over {} chords", chords.len())));
    }
    if let Some(k) = cx.scene.expect.chord_families {
        rep.verdict(Verdict::counted("expected-chord-families", families == k, families as f64, format!("{families} families, expected {k}")));
    }
}

fn scan(cx: &Context, rep: &mut Report) -> Run {
    let built = cx.scene.build()?;
    let e = cx.scene.require_lagrangian(&built)?;
    let popts = cx.scene.primitive_options(cx.tol);
    let Some(a) = stage(rep, "certify", certify(&e, &popts)) else { return Ok(()) };
    let b = match &built.second {
        Some(s) => match stage(rep, "certify-second", certify(s, &popts)) {
            Some(b) => Some(b),
            None => return Ok(()),
        },
        None => None,
    };
    let Some(scan) = stage(rep, "scan", scan_chords(&a, b.as_ref(), &cx.scene.chord_options(cx.tol))) else { return Ok(()) };
    let csv = chords_to_csv(&scan.chords).map_err(|e| std::io::Error::other(e.to_string()))?;
    rep.artifact(cx.out, "chords.csv", csv.as_bytes())?;
    let obstructed = scan.chords.iter().filter(|c| c.mvt_obstructed).count();
    rep.verdict(Verdict::counted(
        "mvt-unobstructed",
        obstructed == 0,
        obstructed as f64,
        format!("{obstructed} of {} chords have ratio ≥ 1 (band {:.0e})", scan.chords.len(), cx.tol.get("mvt_band")),
    ));
    rep.verdict(Verdict::counted(
        "no-unresolved-seeds",
        scan.unresolved.is_empty(),
        scan.unresolved.len() as f64,
        format!("{} seeds near a chord did not converge", scan.unresolved.len()),
    ));
    expectations(cx, rep, &scan.chords, scan.families);
    rep.result("scan", summary(&scan));
    Ok(())
}

fn mvt(cx: &Context, rep: &mut Report) -> Run {
    let built = cx.scene.build()?;
    let e = cx.scene.require_lagrangian(&built)?;
    let Some(a) = stage(rep, "certify", certify(&e, &cx.scene.primitive_options(cx.tol))) else { return Ok(()) };
    mvt_stage(cx, rep, &a);
    Ok(())
}

fn mvt_stage(cx: &Context, rep: &mut Report, a: &lcs_core::chords::ExactLagrangian) -> bool {
    let Some(m) = stage(rep, "mvt", mvt_obstruction_report(a, 0.0, &cx.scene.chord_options(cx.tol))) else { return false };
    let detail = match (&m.argmax, m.max_ratio) {
        (Some(c), Some(r)) => format!("max ratio {r:.9} at chord t = {:.9} over base {:?}", c.t, c.base),
        _ => "no chords".into(),
    };
    rep.verdict(Verdict::counted("mvt-unobstructed", !m.obstructed, m.max_ratio.unwrap_or(0.0), detail));
    let ok = !m.obstructed;
    rep.result("mvt", m);
    ok
}

fn extension_artifacts(cx: &Context, rep: &mut Report, ext: &ExtensionResult) -> Run {
    if cx.csv {
        let csv = ext.field.to_csv().map_err(|e| std::io::Error::other(e.to_string()))?;
        rep.artifact(cx.out, "field.csv", csv.as_bytes())?;
    }
    Ok(())
}

fn extension_verdicts(cx: &Context, rep: &mut Report, ext: &ExtensionResult) {
    let r = &ext.report;
    rep.verdict(Verdict::below("radial-log-slope", r.bound.max_slope, 1.0));
    rep.verdict(Verdict::at_most("collar-match", r.collar_max_deviation, cx.tol.get("collar_match")));
    rep.verdict(Verdict::flag("outer-shell-ones", r.bound.outer_shell_ones, format!("r_outer = {:.6}", r.r_outer)));
    rep.verdict(Verdict::counted("field-positive", r.bound.min_value > 0.0, r.bound.min_value, "min of g over the grid"));
}

fn extension(cx: &Context, rep: &mut Report) -> Run {
    let built = cx.scene.build()?;
    let e = cx.scene.require_lagrangian(&built)?;
    let s = e.structure().clone();
    let h = cx.scene.extension_h(&s)?;
    let width = cx.scene.extension.as_ref().map_or(0.12, |x| x.width);
    let src = match h {
        Some(h) => HSource::Field(h),
        None => HSource::Primitive { width },
    };
    let opts = cx.scene.extension_options(s.n(), cx.tol);
    let Some(a) = stage(rep, "certify", certify(&e, &cx.scene.primitive_options(cx.tol))) else { return Ok(()) };
    let Some(ext) = stage(rep, "extension", build_extension(&a, &src, &opts)) else { return Ok(()) };
    extension_verdicts(cx, rep, &ext);
    extension_artifacts(cx, rep, &ext)?;
    rep.result("options", &opts);
    rep.result("extension", &ext.report);
    Ok(())
}

#[derive(Serialize)]
struct FlowSummary {
    seeds: usize,
    seed_radius: f64,
    s_start: f64,
    s_end: f64,
    max_fiber_drift: f64,
    max_displacement: f64,
    max_error_estimate: f64,
    step_used: f64,
}

fn flow_summary(r: &FlowResult, seed_radius: f64) -> FlowSummary {
    FlowSummary {
        seeds: r.samples.len(),
        seed_radius,
        s_start: r.s_start,
        s_end: r.s_end,
        max_fiber_drift: r.max_fiber_drift,
        max_displacement: r.max_displacement,
        max_error_estimate: r.max_error_estimate,
        step_used: r.step_used,
    }
}

fn moser(cx: &Context, rep: &mut Report) -> Run {
    let built = cx.scene.build()?;
    let s = cx.scene.working_structure(&built)?;
    let p = cx.scene.moser_problem(&s)?;
    let spec = cx.scene.moser.as_ref().expect("moser_problem checked the section");
    if let Some(a) = stage(rep, "admissibility", p.check_admissible(&admissibility_grid(&p))) {
        rep.verdict(Verdict::counted("admissible", a.pass, a.min_margin, format!("min of 1 − d ln g(Z) = {:.6}", a.min_margin)));
        rep.result("admissibility", a);
    }
    let seeds = fiber_seeds(s.total(), spec.seeds, spec.seed_radius, cx.seed);
    let opts = FlowOptions::default();
    let Some(flow) = stage(rep, "flow", integrate_flow(&p, &seeds, &opts)) else { return Ok(()) };
    rep.verdict(Verdict::at_most("fiber-drift", flow.max_fiber_drift, cx.tol.get("fiber_drift")));
    if let Some(d) = cx.scene.expect.max_displacement {
        rep.verdict(Verdict::at_most("displacement", flow.max_displacement, d));
    }
    if let Some(b) = cx.scene.moser.as_ref().and_then(|m| m.constant_ball.as_ref()) {
        let n = s.n();
        let mut dev: f64 = 0.0;
        let mut count = 0;
        for f in &flow.samples {
            let r = f.seed[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if r <= b.r_in {
                count += 1;
                for i in n..2 * n {
                    dev = dev.max((f.image[i] - f.seed[i] / b.c).abs());
                }
            }
        }
        rep.verdict(Verdict::counted(
            "radial-factor",
            count > 0 && dev <= cx.tol.get("radial_factor"),
            dev,
            format!("max |p′ − p/{}| = {dev:.3e} over {count} seeds inside r = {}", b.c, b.r_in),
        ));
    }
    let pseeds = fiber_seeds(s.total(), spec.pullback_samples, spec.seed_radius, cx.seed.wrapping_add(1));
    if let Some(pb) = stage(rep, "pullback", verify_conformal_pullback(&p, &flow, &pseeds)) {
        rep.verdict(Verdict::at_most("conformal-pullback", pb.residual, cx.tol.get("pullback_residual")));
        rep.result("pullback", pb);
    }
    let grid: Vec<_> = admissibility_grid(&p).into_iter().take(512).collect();
    if let Some(fam) = stage(rep, "liouville-family", liouville_family_check(&p, &[0.0, 0.25, 0.5, 0.75, 1.0], &grid)) {
        let ok = fam.iter().all(|f| f.nondegenerate);
        let min = fam.iter().map(|f| f.min_abs_pfaffian).fold(f64::INFINITY, f64::min);
        rep.verdict(Verdict::counted("liouville-family", ok, min, "dλ_t nondegenerate for t in {0, .25, .5, .75, 1}"));
        rep.result("liouville_family", fam);
    }
    if cx.csv {
        let csv = flow.to_csv().map_err(|e| std::io::Error::other(e.to_string()))?;
        rep.artifact(cx.out, "flow.csv", csv.as_bytes())?;
    }
    rep.result("flow", flow_summary(&flow, spec.seed_radius));
    Ok(())
}

fn lift(cx: &Context, rep: &mut Report) -> Run {
    let (_, comps, epsilon) = cx.scene.legendrians()?;
    let Some(ls) = stage(rep, "lift", lifts(&comps)) else { return Ok(()) };
    let popts = cx.scene.primitive_options(cx.tol);
    let mut certified = vec![];
    for (i, l) in ls.iter().enumerate() {
        let grid = parameter_grid(l.source(), cx.scene.grids.lagrangian.min(64)).expect("lifts live on tori");
        if let Some(r) = stage(rep, &format!("lift-{i}-lagrangian"), verify_lagrangian(l, &grid)) {
            rep.verdict(Verdict::at_most(&format!("lift-{i}-lagrangian"), r.residual_sup, cx.tol.get("lagrangian")));
        }
        if let Some(a) = stage(rep, &format!("lift-{i}-exact"), certify(l, &popts)) {
            certified.push(a);
        }
    }
    if certified.len() != ls.len() {
        return Ok(());
    }
    let copts = cx.scene.chord_options(cx.tol);
    let mut all = vec![];
    let mut families = 0;
    for i in 0..certified.len() {
        for j in i..certified.len() {
            let other = if i == j { None } else { Some(&certified[j]) };
            if let Some(scan) = stage(rep, &format!("chords-{i}-{j}"), scan_chords(&certified[i], other, &copts)) {
                families += scan.families;
                all.extend(scan.chords);
            }
        }
    }
    let worst = all.iter().map(|c| c.defect.abs()).fold(0.0, f64::max);
    let essential = all.iter().all(|c| c.essential);
    rep.verdict(Verdict::counted(
        "lift-law",
        essential && worst <= cx.tol.get("lift_defect"),
        worst,
        format!("{} chords, all essential: {essential}, max |defect| = {worst:.3e}", all.len()),
    ));
    expectations(cx, rep, &all, families);
    if let Some(r) = stage(rep, "reeb-correspondence", reeb_correspondence(&comps, epsilon, &copts)) {
        rep.verdict(Verdict::flag("reeb-correspondence", r.pass, format!("{} Reeb families", r.reeb_families)));
        rep.result("reeb", r);
    }
    let csv = chords_to_csv(&all).map_err(|e| std::io::Error::other(e.to_string()))?;
    rep.artifact(cx.out, "chords.csv", csv.as_bytes())?;
    rep.result("chords", serde_json::json!({ "count": all.len(), "families": families }));
    Ok(())
}

fn degree_stage(cx: &Context, rep: &mut Report, e: &ParametricEmbedding) {
    let Some(d) = stage(rep, "projection-degree", projection_degree(e)) else { return };
    match cx.scene.expect.degree {
        Some(k) => rep.verdict(Verdict::counted("projection-degree", d.degree == k, d.degree as f64, format!("degree {}, expected {k}", d.degree))),
        None => rep.verdict(Verdict::counted("projection-degree", true, d.degree as f64, format!("degree {} at a regular value", d.degree))),
    }
    rep.result("degree", d);
}

fn full(cx: &Context, rep: &mut Report) -> Run {
    let built = cx.scene.build()?;
    let e = cx.scene.require_lagrangian(&built)?;
    let s = e.structure().clone();
    let eta = cx.scene.eta_prime(&s)?;
    let width = cx.scene.extension.as_ref().map_or(0.12, |x| x.width);
    let opts = cx.scene.extension_options(s.n(), cx.tol);
    let popts = cx.scene.primitive_options(cx.tol);
    if !lagrangian_stage(cx, rep, &e) {
        return Ok(());
    }
    degree_stage(cx, rep, &e);
    let Some(a) = stage(rep, "certify", certify(&e, &popts)) else { return Ok(()) };
    if !mvt_stage(cx, rep, &a) {
        rep.failure(
            "straighten",
            &LcsError::Rejected("not attempted: the primitive has an MVT-obstructed chord (see mvt)".into()),
        );
        return Ok(());
    }
    let Some((_, sr, ext)) = stage(rep, "straighten", straighten_pipeline(&a, eta.as_ref(), width, &opts, &popts)) else { return Ok(()) };
    extension_verdicts(cx, rep, &ext);
    extension_artifacts(cx, rep, &ext)?;
    rep.verdict(Verdict::at_most("straightened-lagrangian", sr.image.residual_sup, cx.tol.get("exactness")));
    rep.verdict(Verdict::at_most("straightened-periods", sr.max_period, 1e-6));
    rep.verdict(Verdict::flag("straightened-exact", sr.certificate.valid, format!("residual {:.3e}", sr.certificate.residual_sup)));
    rep.result("extension", &ext.report);
    rep.result("straighten", sr);
    Ok(())
}
