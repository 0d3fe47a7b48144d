//! Radial Moser deformation of d(λ/g) to dλ, the straightening of an
//! exact Lagrangian into a 0-exact one, and projection degrees.
//!
//! The family is λ_t = g_t λ with g_t = t/g + 1 − t. Its Moser field is
//! radial, so the flow is integrated as a scalar ODE for ln r along each
//! fiber ray and the base point never moves.

use crate::chart::{wrap_diff, ModelManifold, Point, ScalarField, SmoothMap, VectorField};
use crate::chords::{mvt_obstruction_report_with, ExactLagrangian};
use crate::error::{LcsError, Result};
use crate::extension::{build_extension, ExtensionOptions, ExtensionResult, HSource};
use crate::forms::{check_nondegenerate, FormExpression};
use crate::jet::Jet2;
use crate::lagrangian::{
    parameter_grid, solve_primitive, verify_lagrangian, ExactnessCertificate, LagrangianReport, ParametricEmbedding,
    PrimitiveOptions,
};
use crate::lcs::{verification_grid, CotangentLcsStructure, StructureRef};
use crate::sampling::{torus_grid, SplitMix};
use crate::tolerances;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;
use std::sync::Arc;

/// g on T*M, positive and ≡ 1 beyond `radius` in every fiber.
#[derive(Clone)]
pub struct MoserProblem {
    pub structure: StructureRef,
    pub g: ScalarField,
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub samples: usize,
    /// min over samples of 1 − d ln g(Z).
    pub min_margin: f64,
    pub worst_point: Vec<f64>,
    pub min_g: f64,
    pub outside_deviation: f64,
    pub pass: bool,
}

impl MoserProblem {
    pub fn new(structure: StructureRef, g: ScalarField, radius: f64) -> Result<Self> {
        if g.domain() != structure.total() {
            return Err(LcsError::DimensionMismatch("g must live on T*M".into()));
        }
        if !(radius > 0.0) {
            return Err(LcsError::Precondition(format!("radius {radius} must be positive")));
        }
        Ok(MoserProblem { structure, g, radius })
    }

    /// g ≡ 1.
    pub fn identity(structure: StructureRef) -> Self {
        let g = ScalarField::constant(structure.total().clone(), 1.0);
        MoserProblem { structure, g, radius: 1.0 }
    }

    fn n(&self) -> usize {
        self.structure.n()
    }

    /// (g, d ln g(Z)) at x.
    pub fn log_slope(&self, x: &[f64]) -> Result<(f64, f64)> {
        let j = self.g.eval_jet(x)?;
        let n = self.n();
        let dz: f64 = (0..n).map(|i| x[n + i] * j.grad(n + i)).sum();
        if !(j.value() > 0.0) {
            return Err(LcsError::Precondition(format!("g = {} is not positive at {x:?}", j.value())));
        }
        Ok((j.value(), dz / j.value()))
    }

    /// Rate of ln r at time t: (1/g − 1)/((1 − t) + (t/g)(1 − d ln g(Z))).
    pub fn radial_rate(&self, t: f64, x: &[f64]) -> Result<f64> {
        let (g, s) = self.log_slope(x)?;
        let den = (1.0 - t) + t / g * (1.0 - s);
        if !(den > 0.0) {
            return Err(LcsError::Rejected(format!(
                "Moser denominator g_t + Dg_t(Z) = {den:.3e} at t = {t} and {x:?}: d ln g(Z) = {s:.6} violates d ln g(Z) < 1"
            )));
        }
        Ok((1.0 / g - 1.0) / den)
    }

    /// Checks d ln g(Z) < 1 and g ≡ 1 beyond the radius on the sample set.
    pub fn check_admissible(&self, samples: &[Point]) -> Result<AdmissibilityReport> {
        let n = self.n();
        let rows: Vec<(f64, f64, f64)> = samples
            .par_iter()
            .map(|x| {
                let (g, s) = self.log_slope(x)?;
                let r = x[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok((1.0 - s, g, if r > self.radius { (g - 1.0).abs() } else { 0.0 }))
            })
            .collect::<Result<_>>()?;
        let mut worst = 0;
        for (i, r) in rows.iter().enumerate() {
            if r.0 < rows[worst].0 {
                worst = i;
            }
        }
        let min_margin = rows.get(worst).map_or(f64::INFINITY, |r| r.0);
        let min_g = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let outside = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        Ok(AdmissibilityReport {
            samples: samples.len(),
            min_margin,
            worst_point: samples.get(worst).cloned().unwrap_or_default(),
            min_g,
            outside_deviation: outside,
            pass: min_margin > 0.0 && min_g > 0.0 && outside <= 1e-12,
        })
    }

    /// g_t = t/g + 1 − t.
    pub fn g_t(&self, t: f64) -> ScalarField {
        self.g.map(move |g| Ok(g.recip() * t + (1.0 - t)))
    }
}

/// X_t = (1/g − 1)/(g_t + Dg_t(Z))·Z. Values are exact; jets carry no
/// derivative information.
pub fn moser_vector_field(p: &MoserProblem, t: f64) -> Result<VectorField> {
    let q = p.clone();
    let n = p.n();
    Ok(VectorField::new(p.structure.total().clone(), move |x| {
        let xv: Vec<f64> = x.iter().map(|j| j.value()).collect();
        let c = q.radial_rate(t, &xv)?;
        let mut out = vec![Jet2::constant(0.0); 2 * n];
        for i in 0..n {
            out[n + i] = Jet2::constant(c * xv[n + i]).truncate(0);
        }
        Ok(out)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rk4,
    Euler,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowOptions {
    pub step: f64,
    pub scheme: Scheme,
    /// Richardson check against a half-step run; the step is halved until
    /// the estimate is below `tolerance`.
    pub adaptive: bool,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            step: tolerances::MOSER_STEP,
            scheme: Scheme::Rk4,
            adaptive: true,
            tolerance: 1e-12,
            max_halvings: tolerances::MOSER_MAX_HALVINGS,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSample {
    pub seed: Vec<f64>,
    pub image: Vec<f64>,
    pub log_factor: f64,
    pub step: f64,
    pub error_estimate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowResult {
    pub samples: Vec<FlowSample>,
    pub s_start: f64,
    pub s_end: f64,
    pub max_fiber_drift: f64,
    pub max_displacement: f64,
    pub max_error_estimate: f64,
    pub step_used: f64,
    pub options: FlowOptions,
}

impl FlowResult {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        let n = self.samples.first().map_or(0, |s| s.seed.len());
        let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        header.extend((0..n).map(|i| format!("y{i}")));
        header.extend(["log_factor", "step", "error_estimate"].map(String::from));
        w.write_record(&header).map_err(|e| LcsError::Numerical(e.to_string()))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.seed.iter().chain(&s.image).map(|v| format!("{v:.17e}")).collect();
            row.extend([s.log_factor, s.step, s.error_estimate].iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row).map_err(|e| LcsError::Numerical(e.to_string()))?;
        }
        String::from_utf8(w.into_inner().map_err(|e| LcsError::Numerical(e.to_string()))?).map_err(|e| LcsError::Numerical(e.to_string()))
    }
}

/// ln r after flowing on the reversed clock dy/ds = rate(1 − s) from s0 to s1.
fn integrate_ray(p: &MoserProblem, q: &[f64], omega: &[f64], y0: f64, s0: f64, s1: f64, h: f64, scheme: Scheme) -> Result<f64> {
    let steps = (((s1 - s0) / h).round() as usize).max(1);
    let h = (s1 - s0) / steps as f64;
    let n = q.len();
    let rate = |s: f64, y: f64| -> Result<f64> {
        let mut x = q.to_vec();
        let r = y.exp();
        x.extend(omega.iter().map(|w| w * r));
        debug_assert_eq!(x.len(), 2 * n);
        p.radial_rate(1.0 - s, &x)
    };
    let mut y = y0;
    for i in 0..steps {
        let s = s0 + i as f64 * h;
        y += match scheme {
            Scheme::Euler => h * rate(s, y)?,
            Scheme::Rk4 => {
                let k1 = rate(s, y)?;
                let k2 = rate(s + 0.5 * h, y + 0.5 * h * k1)?;
                let k3 = rate(s + 0.5 * h, y + 0.5 * h * k2)?;
                let k4 = rate(s + h, y + h * k3)?;
                h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
    }
    Ok(y)
}

/// Image of one point under the flow from s0 to s1, with the step used and
/// the Richardson estimate.
pub fn flow_point(p: &MoserProblem, x: &[f64], s0: f64, s1: f64, opts: &FlowOptions) -> Result<FlowSample> {
    let n = p.n();
    let q = &x[..n];
    let r = x[n..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 || s1 == s0 {
        return Ok(FlowSample { seed: x.to_vec(), image: x.to_vec(), log_factor: 0.0, step: opts.step, error_estimate: 0.0 });
    }
    let omega: Vec<f64> = x[n..].iter().map(|v| v / r).collect();
    let y0 = r.ln();
    let mut h = opts.step;
    let (y, err) = if opts.adaptive {
        let mut attempt = 0;
        loop {
            let a = integrate_ray(p, q, &omega, y0, s0, s1, h, opts.scheme)?;
            let b = integrate_ray(p, q, &omega, y0, s0, s1, 0.5 * h, opts.scheme)?;
            let order = if opts.scheme == Scheme::Rk4 { 15.0 } else { 1.0 };
            let err = (b - a).abs() / order;
            if err <= opts.tolerance {
                break (b, err);
            }
            attempt += 1;
            if attempt > opts.max_halvings {
                return Err(LcsError::Numerical(format!(
                    "Moser flow diverges from seed {x:?}: Richardson estimate {err:.3e} after {} halvings (step {h:.3e})",
                    opts.max_halvings
                )));
            }
            h *= 0.5;
        }
    } else {
        (integrate_ray(p, q, &omega, y0, s0, s1, h, opts.scheme)?, f64::NAN)
    };
    let mut image = q.to_vec();
    let rr = y.exp();
    image.extend(omega.iter().map(|w| w * rr));
    Ok(FlowSample { seed: x.to_vec(), image, log_factor: y - y0, step: h, error_estimate: err })
}

/// The time-1 map on every seed (s from 0 to 1).
pub fn integrate_flow(p: &MoserProblem, seeds: &[Point], opts: &FlowOptions) -> Result<FlowResult> {
    integrate_flow_between(p, seeds, 0.0, 1.0, opts)
}

pub fn integrate_flow_between(p: &MoserProblem, seeds: &[Point], s0: f64, s1: f64, opts: &FlowOptions) -> Result<FlowResult> {
    let total = p.structure.total();
    for x in seeds {
        if x.len() != total.dim() {
            return Err(LcsError::DimensionMismatch("seed dimension".into()));
        }
    }
    let n = p.n();
    let samples: Vec<FlowSample> = seeds.par_iter().map(|x| flow_point(p, x, s0, s1, opts)).collect::<Result<_>>()?;
    let drift = samples
        .iter()
        .map(|s| (0..n).map(|i| wrap_diff(s.image[i] - s.seed[i]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let disp = samples.iter().map(|s| total.distance(&s.seed, &s.image)).fold(0.0, f64::max);
    let err = samples.iter().map(|s| s.error_estimate).filter(|e| e.is_finite()).fold(0.0, f64::max);
    let step = samples.iter().map(|s| s.step).fold(0.0, f64::max);
    Ok(FlowResult {
        samples,
        s_start: s0,
        s_end: s1,
        max_fiber_drift: drift,
        max_displacement: disp,
        max_error_estimate: err,
        step_used: if seeds.is_empty() { opts.step } else { step },
        options: opts.clone(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PullbackReport {
    pub residual: f64,
    pub worst_point: Vec<f64>,
    pub samples: usize,
    pub fd_step: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// sup over samples of the coefficients of φ₁*(dλ) − d(λ/g), with φ₁'s
/// Jacobian by central differences.
pub fn verify_conformal_pullback(p: &MoserProblem, r: &FlowResult, samples: &[Point]) -> Result<PullbackReport> {
    let n = p.n();
    let m = 2 * n;
    let hstep = tolerances::PULLBACK_FD_STEP;
    let omega = DMatrix::<f64>::from_fn(m, m, |i, j| {
        if j == i + n {
            -1.0
        } else if i == j + n {
            1.0
        } else {
            0.0
        }
    });
    let rows: Vec<f64> = samples
        .par_iter()
        .map(|x| {
            let mut jac = DMatrix::<f64>::zeros(m, m);
            for k in 0..m {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[k] += hstep;
                b[k] -= hstep;
                let fa = flow_point(p, &a, r.s_start, r.s_end, &r.options)?.image;
                let fb = flow_point(p, &b, r.s_start, r.s_end, &r.options)?.image;
                for i in 0..m {
                    let d = if i < n { wrap_diff(fa[i] - fb[i]) } else { fa[i] - fb[i] };
                    jac[(i, k)] = d / (2.0 * hstep);
                }
            }
            let pulled = jac.transpose() * &omega * &jac;
            let j = p.g.eval_jet(x)?;
            let g = j.value();
            let a = DVector::<f64>::from_fn(m, |i, _| -j.grad(i) / (g * g));
            let lam = DVector::<f64>::from_fn(m, |i, _| if i < n { x[n + i] } else { 0.0 });
            let target = &a * lam.transpose() - &lam * a.transpose() + &omega / g;
            Ok((pulled - target).amax())
        })
        .collect::<Result<_>>()?;
    let (mut worst, mut res) = (0, 0.0);
    for (i, v) in rows.iter().enumerate() {
        if *v > res {
            res = *v;
            worst = i;
        }
    }
    Ok(PullbackReport {
        residual: res,
        worst_point: samples.get(worst).cloned().unwrap_or_default(),
        samples: samples.len(),
        fd_step: hstep,
        tolerance: tolerances::PULLBACK_RESIDUAL,
        pass: res <= tolerances::PULLBACK_RESIDUAL,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyCheck {
    pub t: f64,
    pub min_abs_pfaffian: f64,
    pub nondegenerate: bool,
}

/// Nondegeneracy of dλ_t on the grid for each t.
pub fn liouville_family_check(p: &MoserProblem, times: &[f64], samples: &[Point]) -> Result<Vec<FamilyCheck>> {
    let lam = p.structure.lambda().clone();
    times
        .iter()
        .map(|&t| {
            let w = lam.scale_by(&p.g_t(t))?.d()?;
            let rep = check_nondegenerate(&w, samples, 1e-12)?;
            Ok(FamilyCheck { t, min_abs_pfaffian: rep.min_abs_pfaffian, nondegenerate: rep.nondegenerate })
        })
        .collect()
}

fn quintic(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        (
            s * s * s * (10.0 - 15.0 * s + 6.0 * s * s),
            30.0 * s * s * (1.0 - s) * (1.0 - s),
            60.0 * s * (1.0 - s) * (1.0 - 2.0 * s),
        )
    }
}

/// g = c on |p| ≤ r_in, tapering C² in ln|p| to 1 at |p| = r_out.
pub fn constant_ball(structure: StructureRef, c: f64, r_in: f64, r_out: f64) -> Result<MoserProblem> {
    if !(c > 0.0 && r_out > r_in && r_in > 0.0) {
        return Err(LcsError::Precondition("need c > 0 and 0 < r_in < r_out".into()));
    }
    let n = structure.n();
    let (lc, li, lo) = (c.ln(), r_in.ln(), r_out.ln());
    let g = ScalarField::new(structure.total().clone(), move |x| {
        let r2: Jet2 = (0..n).map(|i| x[n + i] * x[n + i]).sum();
        if r2.value() <= r_in * r_in {
            return Ok(Jet2::constant(c));
        }
        if r2.value() >= r_out * r_out {
            return Ok(Jet2::constant(1.0));
        }
        let u = (r2.ln()? * 0.5 - li) * (1.0 / (lo - li));
        let (s, ds, d2s) = quintic(u.value());
        let w = u.chain(s, ds, d2s);
        Ok(((1.0 - w) * lc).exp())
    });
    MoserProblem::new(structure, g, r_out)
}

/// Seeds spread over the fiber cube |p_i| ≤ radius in T*M.
pub fn fiber_seeds(total: &ModelManifold, count: usize, radius: f64, seed: u64) -> Vec<Point> {
    let n = total.base_dim();
    let mut rng = SplitMix::new(seed);
    (0..count)
        .map(|_| {
            let mut x: Vec<f64> = (0..n).map(|_| rng.next_f64() * TAU).collect();
            x.extend((0..n).map(|_| (2.0 * rng.next_f64() - 1.0) * radius));
            x
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct StraightenReport {
    pub extension_pass: bool,
    pub max_radial_slope: f64,
    pub image: LagrangianReport,
    pub certificate: ExactnessCertificate,
    pub max_period: f64,
    pub flow_samples: usize,
    pub flow_agreement: f64,
    pub pass: bool,
}

/// φ₁(L) translated by η′: l ↦ (q(l), p(l)/s(l) + η′(q(l))) in the
/// structure with β = 0, where s is the extension restricted to L (the
/// primitive f for an exact extension). η′ defaults to β.
pub fn straightened_embedding(e: &ExactLagrangian, scale: &ScalarField, eta_prime: Option<&FormExpression>) -> Result<ParametricEmbedding> {
    let emb = &e.embedding;
    let s = emb.structure();
    let n = emb.n();
    if scale.domain() != emb.source() {
        return Err(LcsError::DimensionMismatch("the scale must live on L".into()));
    }
    let eta = eta_prime.cloned().unwrap_or_else(|| s.beta_base().clone());
    if eta.domain() != s.base() || eta.degree() != 1 {
        return Err(LcsError::Degree("η′ must be a 1-form on the base".into()));
    }
    let (closed, _) = eta.closedness_residual()?;
    if closed > tolerances::CLOSEDNESS {
        return Err(LcsError::Precondition(format!("η′ is not closed (residual {closed:.3e})")));
    }
    let f = scale.clone();
    let flat = Arc::new(CotangentLcsStructure::canonical(s.base().clone())?);
    let map0 = emb.map().clone();
    let map = SmoothMap::new(emb.source().clone(), flat.total().clone(), move |u| {
        let x = map0.eval_jets(u)?;
        let fv = f.eval_jets(u)?;
        if fv.value() <= 0.0 {
            return Err(LcsError::Precondition(format!("scale {} is not positive", fv.value())));
        }
        let q: Vec<Jet2> = x[..n].to_vec();
        let qv: Vec<f64> = q.iter().map(|j| j.value()).collect();
        let ev = eta.evaluate(&qv)?;
        let mut y = q.clone();
        for i in 0..n {
            y.push(x[n + i] / fv + ev.jets()[i].compose_jet(&q));
        }
        Ok(y)
    });
    Ok(ParametricEmbedding::new(flat, map)?.named(&format!("{}-straightened", emb.name())))
}

/// Checks the extension, forms the straightened image and certifies it
/// 0-exact; the RK4 flow on `flow_samples` L points is compared with the
/// closed form p ↦ p/f.
pub fn straighten_lagrangian(
    e: &ExactLagrangian,
    ext: &ExtensionResult,
    eta_prime: Option<&FormExpression>,
    flow_samples: usize,
    popts: &PrimitiveOptions,
) -> Result<(ParametricEmbedding, StraightenReport)> {
    if !ext.report.pass {
        return Err(LcsError::Rejected(format!(
            "extension fails its contract (max radial slope {:.6}, collar deviation {:.3e}); see the chord report: max ratio {:?}",
            ext.report.bound.max_slope, ext.report.collar_max_deviation, ext.report.mvt.max_ratio
        )));
    }
    let s = e.embedding.structure().clone();
    let g = ext.field.to_scalar_field(&s)?;
    let f = e.primitive();
    let fvals = parameter_grid(e.embedding.source(), 32)?.iter().map(|u| f.value(u)).collect::<Result<Vec<_>>>()?;
    let scale = if fvals.iter().all(|v| *v > 0.0) {
        f.clone()
    } else if fvals.iter().all(|v| *v == 0.0) {
        g.pullback(e.embedding.map())?
    } else {
        return Err(LcsError::Precondition("the primitive must be positive on L (translate by c·β first)".into()));
    };
    let image = straightened_embedding(e, &scale, eta_prime)?;
    let grid = parameter_grid(image.source(), popts.grid)?;
    let lag = verify_lagrangian(&image, &grid)?;
    let cert = solve_primitive(&image, &vec![0.0; image.n()], popts)?;
    let max_period = cert.holonomy_defects.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let problem = MoserProblem::new(s, g, ext.report.r_outer)?;
    let per = (flow_samples.max(1) as f64).powf(1.0 / e.embedding.n() as f64).ceil() as usize;
    let pts: Vec<Point> = torus_grid(e.embedding.n(), per).into_iter().take(flow_samples.max(1)).collect();
    let n = e.embedding.n();
    let mut agreement: f64 = 0.0;
    for u in &pts {
        let x = e.embedding.point(u)?;
        let fl = flow_point(&problem, &x, 0.0, 1.0, &FlowOptions::default())?;
        let fv = scale.value(u)?;
        for i in 0..n {
            agreement = agreement.max((fl.image[n + i] - x[n + i] / fv).abs());
        }
    }
    let pass = lag.residual_sup <= 1e-8 && max_period <= 1e-6 && cert.residual_sup <= popts.tolerance;
    let report = StraightenReport {
        extension_pass: ext.report.pass,
        max_radial_slope: ext.report.bound.max_slope,
        image: lag,
        certificate: cert,
        max_period,
        flow_samples: pts.len(),
        flow_agreement: agreement,
        pass,
    };
    Ok((image, report))
}

/// MVT check, extension of the primitive, then straightening.
pub fn straighten_pipeline(
    e: &ExactLagrangian,
    eta_prime: Option<&FormExpression>,
    width: f64,
    ext_opts: &ExtensionOptions,
    popts: &PrimitiveOptions,
) -> Result<(ParametricEmbedding, StraightenReport, ExtensionResult)> {
    let f = e.primitive();
    let mvt = mvt_obstruction_report_with(e, &f, 0.0, &ext_opts.chords)?;
    if mvt.obstructed {
        let c = mvt.argmax.as_ref();
        return Err(LcsError::Rejected(format!(
            "refusing to straighten: MVT-obstructed chord with t = {:.9}, ratio = {:.9} over base {:?}",
            c.map_or(f64::NAN, |c| c.t),
            mvt.max_ratio.unwrap_or(f64::NAN),
            c.map(|c| c.base.clone()).unwrap_or_default()
        )));
    }
    let ext = build_extension(e, &HSource::Primitive { width }, ext_opts)?;
    let (image, report) = straighten_lagrangian(e, &ext, eta_prime, 16, popts)?;
    Ok((image, report, ext))
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeReport {
    pub degree: i64,
    pub regular_value: Vec<f64>,
    pub preimages: Vec<(Vec<f64>, i8)>,
    pub min_abs_det: f64,
    pub attempts: usize,
}

/// Degree of π∘i by signed preimage count of a regular value drawn from a
/// fixed SplitMix sequence.
pub fn projection_degree(e: &ParametricEmbedding) -> Result<DegreeReport> {
    let n = e.n();
    let src = e.source();
    if !src.is_torus() || !e.structure().base().is_torus() {
        return Err(LcsError::Precondition("projection degree needs closed torus source and base".into()));
    }
    let per = match n {
        1 => 512,
        2 => 64,
        _ => 16,
    };
    let seeds = torus_grid(n, per);
    let map = e.map();
    let mut rng = SplitMix::new(0);
    for attempt in 1..=100 {
        let v: Vec<f64> = (0..n).map(|_| rng.next_f64() * TAU).collect();
        let found: Vec<Option<(Vec<f64>, f64)>> = seeds
            .par_iter()
            .map(|u0| {
                let mut u = u0.clone();
                for _ in 0..60 {
                    let x = map.eval(&u)?;
                    let r: Vec<f64> = (0..n).map(|a| wrap_diff(x[a] - v[a])).collect();
                    let j = map.jacobian(&u)?.view((0, 0), (n, n)).into_owned();
                    if r.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-13 {
                        return Ok(Some((src.normalized(&u), j.determinant())));
                    }
                    let step = match j.lu().solve(&DVector::from_column_slice(&r)) {
                        Some(s) => s,
                        None => return Ok(None),
                    };
                    let size = step.amax();
                    let damp = if size > 0.5 { 0.5 / size } else { 1.0 };
                    for a in 0..n {
                        u[a] -= damp * step[a];
                    }
                }
                Ok(None)
            })
            .collect::<Result<_>>()?;
        let mut pre: Vec<(Vec<f64>, f64)> = vec![];
        for (u, d) in found.into_iter().flatten() {
            if !pre.iter().any(|(w, _)| src.distance(w, &u) < 1e-6) {
                pre.push((u, d));
            }
        }
        let min_det = pre.iter().map(|p| p.1.abs()).fold(f64::INFINITY, f64::min);
        if min_det < 1e-6 {
            continue;
        }
        pre.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let preimages: Vec<(Vec<f64>, i8)> = pre.iter().map(|(u, d)| (u.clone(), if *d > 0.0 { 1 } else { -1 })).collect();
        return Ok(DegreeReport {
            degree: preimages.iter().map(|p| p.1 as i64).sum(),
            regular_value: v,
            preimages,
            min_abs_det: min_det,
            attempts: attempt,
        });
    }
    Err(LcsError::Numerical("no regular value of π∘i found after 100 attempts".into()))
}

/// Verification grid for admissibility checks.
pub fn admissibility_grid(p: &MoserProblem) -> Vec<Point> {
    verification_grid(&p.structure)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rate_integrates_to_log_c() {
        let t1 = ModelManifold::torus(1).unwrap();
        let s = Arc::new(CotangentLcsStructure::canonical(t1).unwrap());
        let p = constant_ball(s, 2.0, 1.0, 4.0).unwrap();
        let r = flow_point(&p, &[0.3, 0.8], 0.0, 1.0, &FlowOptions::default()).unwrap();
        assert!((r.image[1] - 0.4).abs() < 1e-10, "{:?}", r.image);
        assert_eq!(r.image[0], 0.3);
    }
}
