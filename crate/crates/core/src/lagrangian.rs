//! Exact Lagrangians in (T*M, λ, β): parametric embeddings, the Lagrangian
//! and β-exactness checks, primitive solving by path integration, the
//! example library, Legendrian lifts and generating-function lifts.

use crate::chart::{wrap_angle, ModelManifold, Point, ScalarField, SmoothMap};
use crate::error::{LcsError, Result};
use crate::forms::{pullback, FormExpression};
use crate::jet::Jet2;
use crate::lcs::{CotangentLcsStructure, StructureRef};
use crate::sampling::{halton_points, torus_grid};
use crate::tolerances;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

/// A candidate Lagrangian i: L → T*M.
#[derive(Clone)]
pub struct ParametricEmbedding {
    source: ModelManifold,
    structure: StructureRef,
    map: SmoothMap,
    declared_primitive: Option<ScalarField>,
    name: String,
}

impl fmt::Debug for ParametricEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParametricEmbedding {} : {} -> {}", self.name, self.source, self.structure.total())
    }
}

impl ParametricEmbedding {
    pub fn new(structure: StructureRef, map: SmoothMap) -> Result<Self> {
        if map.target() != structure.total() {
            return Err(LcsError::DimensionMismatch(format!(
                "embedding lands in {} but the structure lives on {}",
                map.target(),
                structure.total()
            )));
        }
        if map.source().dim() != structure.n() {
            return Err(LcsError::DimensionMismatch(format!(
                "dim L = {} but dim M = {}",
                map.source().dim(),
                structure.n()
            )));
        }
        Ok(ParametricEmbedding {
            source: map.source().clone(),
            structure,
            map,
            declared_primitive: None,
            name: "embedding".into(),
        })
    }

    pub fn with_primitive(mut self, f: ScalarField) -> Result<Self> {
        if f.domain() != &self.source {
            return Err(LcsError::DimensionMismatch("primitive must live on L".into()));
        }
        self.declared_primitive = Some(f);
        Ok(self)
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &ModelManifold {
        &self.source
    }

    pub fn structure(&self) -> &StructureRef {
        &self.structure
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn declared_primitive(&self) -> Option<&ScalarField> {
        self.declared_primitive.as_ref()
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    pub fn point(&self, u: &[f64]) -> Result<Point> {
        self.map.eval(u)
    }

    /// Base point and fiber covector of i(u).
    pub fn split(&self, u: &[f64]) -> Result<(Point, Vec<f64>)> {
        let x = self.point(u)?;
        let n = self.n();
        Ok((x[..n].to_vec(), x[n..].to_vec()))
    }

    /// Coefficient jets of A = i*λ and B = i*β in the coordinates of `u`.
    pub fn pulled_back_forms(&self, u: &[f64]) -> Result<(Vec<Jet2>, Vec<Jet2>)> {
        let n = self.n();
        let y = self.map.eval_jet(u)?;
        let beta = self.structure.beta_jets(&y[..n])?;
        let mut a = vec![Jet2::constant(0.0); n];
        let mut b = vec![Jet2::constant(0.0); n];
        for i in 0..n {
            for j in 0..n {
                let dq = y[j].partial(i)?;
                a[i] += y[n + j] * dq;
                b[i] += beta[j] * dq;
            }
        }
        Ok((a, b))
    }

    fn ab_values(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = self.pulled_back_forms(u)?;
        Ok((a.iter().map(|j| j.value()).collect(), b.iter().map(|j| j.value()).collect()))
    }

    /// Smallest singular value of the Jacobian at `u`.
    pub fn immersion_margin(&self, u: &[f64]) -> Result<f64> {
        let j = self.map.jacobian(u)?;
        Ok(j.singular_values().min())
    }
}

/// Uniform parameter grid with `per_axis` nodes on each circle of L.
pub fn parameter_grid(source: &ModelManifold, per_axis: usize) -> Result<Vec<Point>> {
    if !source.is_torus() {
        return Err(LcsError::Precondition("parameter grids need a torus L".into()));
    }
    Ok(torus_grid(source.dim(), per_axis))
}

#[derive(Clone, Debug, Serialize)]
pub struct LagrangianReport {
    pub residual_sup: f64,
    pub worst_point: Vec<f64>,
    pub samples: usize,
    pub tolerance: f64,
    pub min_immersion_margin: f64,
    pub immersion_failure: Option<Vec<f64>>,
    pub pass: bool,
}

/// sup |i*(d_β λ)| over samples, with an immersion check.
pub fn verify_lagrangian(e: &ParametricEmbedding, samples: &[Point]) -> Result<LagrangianReport> {
    let form = if e.n() >= 2 { Some(pullback(&e.map, e.structure.omega())?) } else { None };
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|u| {
            let r = match &form {
                Some(w) => w.evaluate(u)?.max_abs(),
                None => 0.0,
            };
            Ok((r, e.immersion_margin(u)?))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0;
    let mut min_sv = (f64::INFINITY, 0);
    for (i, (r, sv)) in rows.iter().enumerate() {
        if *r > rows[worst].0 {
            worst = i;
        }
        if *sv < min_sv.0 {
            min_sv = (*sv, i);
        }
    }
    let immersion_failure = (min_sv.0 <= tolerances::IMMERSION).then(|| samples[min_sv.1].clone());
    let residual_sup = rows.get(worst).map(|r| r.0).unwrap_or(0.0);
    Ok(LagrangianReport {
        residual_sup,
        worst_point: samples.get(worst).cloned().unwrap_or_default(),
        samples: samples.len(),
        tolerance: tolerances::LAGRANGIAN,
        min_immersion_margin: min_sv.0,
        pass: immersion_failure.is_none() && residual_sup <= tolerances::LAGRANGIAN,
        immersion_failure,
    })
}

#[derive(Clone, Debug)]
pub struct PrimitiveOptions {
    pub grid: usize,
    pub steps_per_loop: usize,
    pub tolerance: f64,
    /// Value pinned at the base point when the primitive is not unique.
    pub base_value: Option<f64>,
}

impl Default for PrimitiveOptions {
    fn default() -> Self {
        PrimitiveOptions {
            grid: tolerances::PRIMITIVE_GRID,
            steps_per_loop: tolerances::PRIMITIVE_STEPS_PER_LOOP,
            tolerance: tolerances::EXACTNESS,
            base_value: None,
        }
    }
}

#[derive(Clone, Serialize)]
pub struct ExactnessCertificate {
    /// sup of the discrete residual of d_β f = i*λ per unit length.
    pub residual_sup: f64,
    pub holonomy_defects: Vec<f64>,
    /// e^{∮ i*β} measured through the homogeneous equation, per generator loop.
    pub multiplicative_holonomy: Vec<f64>,
    /// ∮ i*β per generator loop, by separate quadrature.
    pub beta_periods: Vec<f64>,
    pub unique_primitive: bool,
    pub base_point: Vec<f64>,
    pub base_value: f64,
    pub worst_loop: Option<usize>,
    /// sup |i*λ − d_β f| for the declared primitive, if any.
    pub declared_residual: Option<f64>,
    /// sup |f_solved − f_declared| over grid nodes.
    pub declared_mismatch: Option<f64>,
    pub tolerance: f64,
    pub valid: bool,
    #[serde(skip)]
    pub solved_primitive: Option<ScalarField>,
}

impl fmt::Debug for ExactnessCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactnessCertificate")
            .field("residual_sup", &self.residual_sup)
            .field("holonomy_defects", &self.holonomy_defects)
            .field("multiplicative_holonomy", &self.multiplicative_holonomy)
            .field("unique_primitive", &self.unique_primitive)
            .field("valid", &self.valid)
            .finish()
    }
}

struct PrimitiveTable {
    emb: ParametricEmbedding,
    base: Vec<f64>,
    n: usize,
    h: f64,
    substeps: usize,
    values: Vec<f64>,
}

impl PrimitiveTable {
    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.n + i)
    }

    fn node(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.base).map(|(&i, &b)| b + i as f64 * self.h).collect()
    }

    fn value_at(&self, u: &[f64]) -> Result<f64> {
        let k = u.len();
        let mut idx = vec![0; k];
        let mut delta = vec![0.0; k];
        for d in 0..k {
            let r = wrap_angle(u[d] - self.base[d]);
            let i = ((r / self.h).floor() as usize).min(self.n - 1);
            idx[d] = i;
            delta[d] = r - i as f64 * self.h;
        }
        let mut x = self.node(&idx);
        let mut f = self.values[self.index(&idx)];
        for d in 0..k {
            if delta[d] > 0.0 {
                let steps = ((delta[d] / self.h * self.substeps as f64).ceil() as usize).max(1);
                f = integrate_axis(&self.emb, &x, d, delta[d], f, steps)?;
                x[d] += delta[d];
            }
        }
        Ok(f)
    }

    /// Value from the table, derivatives from df = A + fB.
    fn jet_at(&self, x: &[Jet2]) -> Result<Jet2> {
        let u: Vec<f64> = x.iter().map(|j| j.value()).collect();
        let f = self.value_at(&u)?;
        let (a, b) = self.emb.pulled_back_forms(&u)?;
        let k = u.len();
        let grad: Vec<f64> = (0..k).map(|i| a[i].value() + f * b[i].value()).collect();
        let order = Jet2::min_order(&a).min(Jet2::min_order(&b));
        let hess = (order >= 1).then(|| {
            let mut h = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in 0..k {
                    h[i][j] = a[i].grad(j) + grad[j] * b[i].value() + f * b[i].grad(j);
                }
            }
            for i in 0..k {
                for j in 0..i {
                    let m = 0.5 * (h[i][j] + h[j][i]);
                    h[i][j] = m;
                    h[j][i] = m;
                }
            }
            h
        });
        let local = Jet2::from_parts(f, &grad, hess.as_deref(), 2);
        Ok(local.compose_jet(x))
    }
}

/// RK4 for f′ = A(e_axis) + f·B(e_axis) along a coordinate segment.
fn integrate_axis(e: &ParametricEmbedding, start: &[f64], axis: usize, len: f64, f0: f64, steps: usize) -> Result<f64> {
    let h = len / steps as f64;
    let mut x = start.to_vec();
    let mut f = f0;
    let coef = |x: &[f64], s: f64| -> Result<(f64, f64)> {
        let mut y = x.to_vec();
        y[axis] += s;
        let (a, b) = e.ab_values(&y)?;
        Ok((a[axis], b[axis]))
    };
    for _ in 0..steps {
        let (a0, b0) = coef(&x, 0.0)?;
        let (a1, b1) = coef(&x, 0.5 * h)?;
        let (a2, b2) = coef(&x, h)?;
        let k1 = a0 + b0 * f;
        let k2 = a1 + b1 * (f + 0.5 * h * k1);
        let k3 = a1 + b1 * (f + 0.5 * h * k2);
        let k4 = a2 + b2 * (f + h * k3);
        f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        x[axis] += h;
    }
    Ok(f)
}

/// (μ, P, ∮B) with f(2π) = μ f(0) + P along the loop in direction `axis`.
fn loop_holonomy(e: &ParametricEmbedding, base: &[f64], axis: usize, steps: usize) -> Result<(f64, f64, f64)> {
    let h = TAU / steps as f64;
    let mut x = base.to_vec();
    let (mut p, mut m, mut s) = (0.0, 1.0, 0.0);
    let coef = |x: &[f64], t: f64| -> Result<(f64, f64)> {
        let mut y = x.to_vec();
        y[axis] += t;
        let (a, b) = e.ab_values(&y)?;
        Ok((a[axis], b[axis]))
    };
    for _ in 0..steps {
        let (a0, b0) = coef(&x, 0.0)?;
        let (a1, b1) = coef(&x, 0.5 * h)?;
        let (a2, b2) = coef(&x, h)?;
        let rk = |f: f64, with_a: f64| {
            let k1 = with_a * a0 + b0 * f;
            let k2 = with_a * a1 + b1 * (f + 0.5 * h * k1);
            let k3 = with_a * a1 + b1 * (f + 0.5 * h * k2);
            let k4 = with_a * a2 + b2 * (f + h * k3);
            f + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        };
        p = rk(p, 1.0);
        m = rk(m, 0.0);
        s += h / 6.0 * (b0 + 4.0 * b1 + b2);
        x[axis] += h;
    }
    Ok((m, p, s))
}

/// Solves d_β f = i*λ by integrating f′ = A(γ′) + f·B(γ′) along coordinate
/// paths of the torus L from `base_point`.
pub fn solve_primitive(e: &ParametricEmbedding, base_point: &[f64], opts: &PrimitiveOptions) -> Result<ExactnessCertificate> {
    let src = e.source();
    if !src.is_torus() {
        return Err(LcsError::Precondition("primitive solving needs L to be a torus".into()));
    }
    let k = src.dim();
    let base = src.normalized(base_point);
    let loops: Vec<(f64, f64, f64)> =
        (0..k).into_par_iter().map(|d| loop_holonomy(e, &base, d, opts.steps_per_loop)).collect::<Result<_>>()?;

    let pick = (0..k).max_by(|&a, &b| (1.0 - loops[a].0).abs().total_cmp(&(1.0 - loops[b].0).abs()));
    let unique = pick.map(|d| (1.0 - loops[d].0).abs() > tolerances::HOLONOMY_TRIVIAL).unwrap_or(false);
    let base_value = if unique {
        let (m, p, _) = loops[pick.unwrap()];
        p / (1.0 - m)
    } else {
        opts.base_value
            .or_else(|| e.declared_primitive().and_then(|f| f.value(&base).ok()))
            .unwrap_or(0.0)
    };
    let defects: Vec<f64> = loops.iter().map(|(m, p, _)| (m * base_value + p - base_value).abs()).collect();

    let n = opts.grid;
    let substeps = (opts.steps_per_loop / n).max(1);
    let h = TAU / n as f64;
    let total = n.pow(k as u32);
    let mut table = PrimitiveTable { emb: e.clone(), base: base.clone(), n, h, substeps, values: vec![f64::NAN; total] };
    table.values[0] = base_value;
    for d in 0..k {
        let starts: Vec<Vec<usize>> = (0..n.pow(d as u32))
            .map(|mut i| {
                let mut idx = vec![0; k];
                for v in idx.iter_mut().take(d) {
                    *v = i % n;
                    i /= n;
                }
                idx
            })
            .collect();
        let lines: Vec<Vec<(usize, f64)>> = starts
            .par_iter()
            .map(|idx| {
                let mut idx = idx.clone();
                let mut f = table.values[table.index(&idx)];
                if (1.0 - loops[d].0).abs() > 1e-3 {
                    let (m, p, _) = loop_holonomy(e, &table.node(&idx), d, opts.steps_per_loop)?;
                    f = p / (1.0 - m);
                }
                let mut out = Vec::with_capacity(n);
                for i in 1..n {
                    let x = table.node(&idx);
                    f = integrate_axis(e, &x, d, h, f, substeps)?;
                    idx[d] = i;
                    out.push((table.index(&idx), f));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for line in lines {
            for (i, v) in line {
                table.values[i] = v;
            }
        }
    }

    let residual_sup = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0; k];
            let mut r = flat;
            for v in idx.iter_mut() {
                *v = r % n;
                r /= n;
            }
            let x = table.node(&idx);
            let mut worst: f64 = 0.0;
            for d in 0..k {
                let pred = integrate_axis(e, &x, d, h, table.values[flat], substeps)?;
                let mut j = idx.clone();
                j[d] = (j[d] + 1) % n;
                worst = worst.max((pred - table.values[table.index(&j)]).abs() / h);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let table = Arc::new(table);
    let t2 = table.clone();
    let solved = ScalarField::new(src.clone(), move |x| t2.jet_at(x));

    let (declared_residual, declared_mismatch) = match e.declared_primitive() {
        Some(f) => {
            let grid = torus_grid(k, n);
            let rows: Vec<(f64, f64)> = grid
                .par_iter()
                .map(|u| {
                    let fj = f.eval_jet(u)?;
                    let (a, b) = e.ab_values(u)?;
                    let r = (0..k)
                        .map(|i| (a[i] - (fj.grad(i) - fj.value() * b[i])).abs())
                        .fold(0.0, f64::max);
                    let mut idx = vec![0; k];
                    for d in 0..k {
                        idx[d] = ((wrap_angle(u[d] - base[d]) / h).round() as usize) % n;
                    }
                    let node = table.node(&idx);
                    let m = (table.values[table.index(&idx)] - f.value(&node)?).abs();
                    Ok((r, m))
                })
                .collect::<Result<_>>()?;
            (
                Some(rows.iter().map(|r| r.0).fold(0.0, f64::max)),
                Some(rows.iter().map(|r| r.1).fold(0.0, f64::max)),
            )
        }
        None => (None, None),
    };

    let worst_loop = (0..k).max_by(|&a, &b| defects[a].total_cmp(&defects[b]));
    let tol = opts.tolerance;
    let valid = residual_sup <= tol
        && defects.iter().all(|d| *d <= tol)
        && declared_residual.map(|r| r <= tol).unwrap_or(true);
    Ok(ExactnessCertificate {
        residual_sup,
        holonomy_defects: defects,
        multiplicative_holonomy: loops.iter().map(|l| l.0).collect(),
        beta_periods: loops.iter().map(|l| l.2).collect(),
        unique_primitive: unique,
        base_point: base,
        base_value,
        worst_loop,
        declared_residual,
        declared_mismatch,
        tolerance: tol,
        valid,
        solved_primitive: Some(solved),
    })
}

/// Whether two 1-forms on the same manifold agree on a Halton sample set.
fn forms_agree(a: &FormExpression, b: &FormExpression) -> Result<bool> {
    for x in halton_points(a.domain(), 64, tolerances::VERIFICATION_RADIUS) {
        if a.evaluate(&x)?.max_abs_diff(&b.evaluate(&x)?) > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fiber translation p ↦ p + c·η(q). When η is the Lee form, a declared
/// primitive f becomes f − c.
pub fn translate_by_form(e: &ParametricEmbedding, eta: &FormExpression, c: f64) -> Result<ParametricEmbedding> {
    let s = e.structure().clone();
    if eta.domain() != s.base() || eta.degree() != 1 {
        return Err(LcsError::Degree("translation needs a 1-form on the base".into()));
    }
    let n = s.n();
    let inner = e.map.clone();
    let eta2 = eta.clone();
    let map = SmoothMap::new(e.source.clone(), s.total().clone(), move |u| {
        let mut y = inner.eval_jets(u)?;
        let qv: Vec<f64> = y[..n].iter().map(|j| j.value()).collect();
        let coeffs = eta2.evaluate(&qv)?;
        let q: Vec<Jet2> = y[..n].to_vec();
        for i in 0..n {
            y[n + i] += coeffs.jets()[i].compose_jet(&q) * c;
        }
        Ok(y)
    });
    let mut out = ParametricEmbedding::new(s.clone(), map)?.named(&format!("{}+{}eta", e.name, c));
    if let Some(f) = e.declared_primitive() {
        if c == 0.0 {
            out.declared_primitive = Some(f.clone());
        } else if forms_agree(eta, s.beta_base())? {
            out.declared_primitive = Some(f.shift(-c));
        }
    }
    Ok(out)
}

/// f and its partials as jets in whatever variables the inputs carry.
/// The partials lose one order.
pub(crate) fn differential_jets(f: &ScalarField, x: &[Jet2]) -> Result<(Jet2, Vec<Jet2>)> {
    let xv: Vec<f64> = x.iter().map(|j| j.value()).collect();
    let fj = f.eval_jet(&xv)?;
    let n = xv.len();
    let df = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|k| fj.hess(i, k)).collect();
            Jet2::compose(fj.grad(i), &row, None, x).truncate(fj.order().saturating_sub(1))
        })
        .collect();
    Ok((fj.compose_jet(x), df))
}

/// Γ_β(f): x ↦ (x, df_x − f(x)β_x), with primitive f.
pub fn beta_graph(f: &ScalarField, s: &StructureRef) -> Result<ParametricEmbedding> {
    if f.domain() != s.base() {
        return Err(LcsError::DimensionMismatch("f must live on the base".into()));
    }
    let n = s.n();
    let g = f.clone();
    let s2 = s.clone();
    let map = SmoothMap::new(s.base().clone(), s.total().clone(), move |x| {
        let (fj, df) = differential_jets(&g, x)?;
        let beta = s2.beta_jets(x)?;
        let mut y = x.to_vec();
        for i in 0..n {
            y.push(df[i] - fj * beta[i]);
        }
        Ok(y)
    });
    Ok(ParametricEmbedding::new(s.clone(), map)?.with_primitive(f.clone())?.named("beta-graph"))
}

/// The 0-section, primitive 0.
pub fn zero_section(s: &StructureRef) -> Result<ParametricEmbedding> {
    beta_graph(&ScalarField::constant(s.base().clone(), 0.0), s).map(|e| e.named("zero-section"))
}

/// i(θ, φ) = (2θ, φ, ½cos θ, −sin θ) in (T*𝕋², λ, dq₂), primitive sin θ.
pub fn example_torus_1() -> Result<ParametricEmbedding> {
    let t2 = ModelManifold::torus(2)?;
    let s = Arc::new(CotangentLcsStructure::with_lee_coordinate(t2.clone(), 1)?);
    let map = SmoothMap::new(t2.clone(), s.total().clone(), |x| {
        Ok(vec![x[0] * 2.0, x[1], x[0].cos() * 0.5, -x[0].sin()])
    });
    let f = ScalarField::new(t2, |x| Ok(x[0].sin()));
    Ok(ParametricEmbedding::new(s, map)?.with_primitive(f)?.named("example-torus-1"))
}

/// j(θ, φ) = (cos θ, φ, 3 sin θ cos θ, sin³θ) in (T*𝕋², λ, dq₂), primitive −sin³θ.
pub fn example_torus_2() -> Result<ParametricEmbedding> {
    let t2 = ModelManifold::torus(2)?;
    let s = Arc::new(CotangentLcsStructure::with_lee_coordinate(t2.clone(), 1)?);
    let map = SmoothMap::new(t2.clone(), s.total().clone(), |x| {
        let (s, c) = (x[0].sin(), x[0].cos());
        Ok(vec![c, x[1], s * c * 3.0, s.powi(3)])
    });
    let f = ScalarField::new(t2, |x| Ok(-x[0].sin().powi(3)));
    Ok(ParametricEmbedding::new(s, map)?.with_primitive(f)?.named("example-torus-2"))
}

/// A parametrized submanifold of J¹M = T*M × ℝ_z.
#[derive(Clone, Debug)]
pub struct LegendrianEmbedding {
    pub base: ModelManifold,
    pub map: SmoothMap,
}

impl LegendrianEmbedding {
    pub fn new(base: ModelManifold, map: SmoothMap) -> Result<Self> {
        if map.target() != &base.jet1() {
            return Err(LcsError::DimensionMismatch("Legendrian must land in J¹M".into()));
        }
        Ok(LegendrianEmbedding { base, map })
    }

    /// j¹f = {(x, df_x, f(x))}.
    pub fn jet_graph(f: &ScalarField) -> Result<Self> {
        let m = f.domain().clone();
        let g = f.clone();
        let map = SmoothMap::new(m.clone(), m.jet1(), move |x| {
            let (fj, df) = differential_jets(&g, x)?;
            let mut y = x.to_vec();
            y.extend(df);
            y.push(fj);
            Ok(y)
        });
        Self::new(m, map)
    }

    /// sup |i*(dz − λ_M)| over samples, with the worst sample.
    pub fn legendrian_residual(&self, samples: &[Point]) -> Result<(f64, Point)> {
        let j1 = self.base.jet1();
        let n = self.base.dim();
        let mut alpha = FormExpression::dx(j1.clone(), 2 * n)?;
        for i in 0..n {
            alpha = alpha.sub(&FormExpression::dx(j1.clone(), i)?.scale_by(&ScalarField::coordinate(j1.clone(), n + i))?)?;
        }
        let form = pullback(&self.map, &alpha)?;
        let mut worst = (0.0, vec![]);
        for u in samples {
            let r = form.evaluate(u)?.max_abs();
            if r >= worst.0 {
                worst = (r, u.clone());
            }
        }
        Ok(worst)
    }
}

/// (l, q) ↦ (i_M(l), q, −f(l)β_q) in (T*(M×Q), λ, β), primitive f = z.
pub fn lift_legendrian(lambda: &LegendrianEmbedding, q: &ModelManifold, beta_q: &FormExpression) -> Result<ParametricEmbedding> {
    let src = lambda.map.source().clone();
    let samples = if src.is_torus() { torus_grid(src.dim(), 32) } else { halton_points(&src, 256, 4.0) };
    let (r, worst) = lambda.legendrian_residual(&samples)?;
    if r > tolerances::LAGRANGIAN {
        return Err(LcsError::Rejected(format!("not Legendrian: residual {r:e} at {worst:?}")));
    }
    if beta_q.domain() != q || beta_q.degree() != 1 {
        return Err(LcsError::Degree("β must be a 1-form on Q".into()));
    }
    for x in halton_points(q, 256, 4.0) {
        if beta_q.evaluate(&x)?.max_abs() < 1e-12 {
            return Err(LcsError::Precondition(format!("β vanishes at {x:?}")));
        }
    }
    let m = lambda.base.clone();
    let (nm, nq) = (m.dim(), q.dim());
    let base = m.product(q);
    let beta_full = pullback(
        &SmoothMap::new(base.clone(), q.clone(), move |x| Ok(x[nm..].to_vec())),
        beta_q,
    )?;
    let s = Arc::new(CotangentLcsStructure::new(base.clone(), beta_full)?);
    let source = src.product(q);
    let nl = src.dim();
    let inner = lambda.map.clone();
    let bq = beta_q.clone();
    let map = SmoothMap::new(source.clone(), s.total().clone(), move |u| {
        let y = inner.eval_jets(&u[..nl])?;
        let qj = &u[nl..];
        let qv: Vec<f64> = qj.iter().map(|j| j.value()).collect();
        let b = bq.evaluate(&qv)?;
        let z = y[2 * nm];
        let mut out: Vec<Jet2> = y[..nm].to_vec();
        out.extend_from_slice(qj);
        out.extend_from_slice(&y[nm..2 * nm]);
        for i in 0..nq {
            out.push(-(z * b.jets()[i].compose_jet(qj)));
        }
        Ok(out)
    });
    let inner = lambda.map.clone();
    let f = ScalarField::new(source, move |u| Ok(inner.eval_jets(&u[..nl])?[2 * nm]));
    Ok(ParametricEmbedding::new(s, map)?.with_primitive(f)?.named("legendrian-lift"))
}

/// l ↦ (i₁(l), i₂(l) + f(l)β): a 0-exact Lagrangian immersion with primitive f.
pub fn symplectization_immersion(e: &ParametricEmbedding, f: &ScalarField) -> Result<SmoothMap> {
    let s = e.structure().clone();
    let n = s.n();
    let inner = e.map.clone();
    let f = f.clone();
    Ok(SmoothMap::new(e.source.clone(), s.total().clone(), move |u| {
        let mut y = inner.eval_jets(u)?;
        let fv = f.eval_jets(u)?;
        let beta = s.beta_jets(&y[..n])?;
        for i in 0..n {
            y[n + i] += fv * beta[i];
        }
        Ok(y)
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct ContactLiftReport {
    pub n: usize,
    pub max_difference: f64,
    pub min_abs_volume: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Compares α′∧(dα′)ⁿ with α∧(dα)ⁿ on J¹M, α = dz − λ_M, α′ = α + zβ.
pub fn contact_lift_check(m: &ModelManifold, beta: &FormExpression, samples: usize) -> Result<ContactLiftReport> {
    let j1 = m.jet1();
    let n = m.dim();
    let mut alpha = FormExpression::dx(j1.clone(), 2 * n)?;
    for i in 0..n {
        alpha = alpha.sub(&FormExpression::dx(j1.clone(), i)?.scale_by(&ScalarField::coordinate(j1.clone(), n + i))?)?;
    }
    let proj = SmoothMap::new(j1.clone(), m.clone(), move |x| Ok(x[..n].to_vec()));
    let beta_j = pullback(&proj, beta)?;
    let alpha2 = alpha.add(&beta_j.scale_by(&ScalarField::coordinate(j1.clone(), 2 * n))?)?;
    let vol = alpha.wedge(&alpha.d()?.power(n)?)?;
    let vol2 = alpha2.wedge(&alpha2.d()?.power(n)?)?;
    let pts = halton_points(&j1, samples, 4.0);
    let rows: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|x| {
            let a = vol.evaluate(x)?;
            let b = vol2.evaluate(x)?;
            Ok((a.max_abs_diff(&b), a.values()[0].abs()))
        })
        .collect::<Result<_>>()?;
    let max_difference = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let min_abs_volume = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(ContactLiftReport { n, max_difference, min_abs_volume, samples, pass: max_difference <= 1e-9 && min_abs_volume > 0.0 })
}

/// The constant c with f₀ + c = e^{t₀}(f_{t₀} + c).
pub fn cobordism_gluing_constant(f0: f64, ft0: f64, t0: f64) -> Result<Option<f64>> {
    if !(t0 > 0.0) {
        return Err(LcsError::Precondition(format!("gluing time t0 = {t0} must be positive")));
    }
    let e = t0.exp();
    if e == 1.0 {
        return Ok(None);
    }
    Ok(Some((e * ft0 - f0) / (1.0 - e)))
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadraticCheck {
    pub radius: f64,
    pub max_hessian_variation: f64,
    pub pass: bool,
}

/// G(q, θ, ξ) = F(q, ξ) on M × 𝕊¹ × ℝᵏ.
#[derive(Clone, Debug)]
pub struct GeneratingLift {
    pub m: ModelManifold,
    pub k: usize,
    pub g: ScalarField,
    pub quadratic: Option<QuadraticCheck>,
}

/// Lifts F on M × ℝᵏ to M × 𝕊¹ × ℝᵏ. With `compact_radius` set, F must have
/// constant fiber Hessian outside that radius, checked on a shell of samples.
pub fn lift_generating_function(f: &ScalarField, m: &ModelManifold, compact_radius: Option<f64>) -> Result<GeneratingLift> {
    let nm = m.dim();
    let dom = f.domain().clone();
    if dom.dim() <= nm || (0..nm).any(|i| dom.is_circle(i) != m.is_circle(i)) {
        return Err(LcsError::DimensionMismatch("F must live on M × R^k".into()));
    }
    let k = dom.dim() - nm;
    let quadratic = match compact_radius {
        Some(r) => {
            let mut ref_h: Option<Vec<Vec<f64>>> = None;
            let mut var: f64 = 0.0;
            for x in halton_points(&dom, 512, 1.0) {
                let mut y = x.clone();
                let norm = x[nm..].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                let scale = r * (1.0 + norm) / norm;
                for v in y[nm..].iter_mut() {
                    *v *= scale;
                }
                let h = f.eval_jet(&y)?.hessian(dom.dim());
                let block: Vec<Vec<f64>> = (nm..dom.dim()).map(|i| h[i][nm..].to_vec()).collect();
                match &ref_h {
                    None => ref_h = Some(block),
                    Some(h0) => {
                        for (a, b) in h0.iter().flatten().zip(block.iter().flatten()) {
                            var = var.max((a - b).abs());
                        }
                    }
                }
            }
            let check = QuadraticCheck { radius: r, max_hessian_variation: var, pass: var <= 1e-6 };
            if !check.pass {
                return Err(LcsError::Rejected(format!(
                    "not quadratic outside radius {r}: fiber Hessian varies by {var:e}"
                )));
            }
            Some(check)
        }
        None => None,
    };
    let mut circles: Vec<bool> = (0..nm).map(|i| m.is_circle(i)).collect();
    circles.push(true);
    circles.extend(std::iter::repeat_n(false, k));
    let total = m.product(&ModelManifold::torus(1)?).product(&ModelManifold::new(0, k)?);
    let f2 = f.clone();
    let g = ScalarField::new(total, move |x| {
        let mut y: Vec<Jet2> = x[..nm].to_vec();
        y.extend_from_slice(&x[nm + 1..]);
        f2.eval_jets(&y)
    });
    Ok(GeneratingLift { m: m.clone(), k, g, quadratic })
}

/// Points of the Lagrangian generated by G with Lee form dθ:
/// fiber-critical (q, θ, ξ) ↦ (q, θ, ∂_q G, ∂_θ G − G).
pub fn generated_points(lift: &GeneratingLift, q_grid: &[Point], theta: &[f64], xi_range: f64, xi_cells: usize) -> Result<Vec<Point>> {
    if lift.k != 1 {
        return Err(LcsError::Precondition("critical-point enumeration implemented for k = 1".into()));
    }
    let nm = lift.m.dim();
    let mut out = vec![];
    for q in q_grid {
        for &th in theta {
            let at = |xi: f64| -> Result<Jet2> {
                let mut x = q.clone();
                x.push(th);
                x.push(xi);
                lift.g.eval_jet(&x)
            };
            let dxi = |xi: f64| -> Result<f64> { Ok(at(xi)?.grad(nm + 1)) };
            let h = 2.0 * xi_range / xi_cells as f64;
            let mut roots: Vec<f64> = vec![];
            let mut prev = dxi(-xi_range)?;
            for c in 1..=xi_cells {
                let b = -xi_range + c as f64 * h;
                let vb = dxi(b)?;
                if prev == 0.0 || prev * vb < 0.0 {
                    let (mut lo, mut hi) = (b - h, b);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if dxi(lo)? * dxi(mid)? <= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let r = 0.5 * (lo + hi);
                    if roots.last().map(|l| (r - l).abs() > 1e-9).unwrap_or(true) {
                        roots.push(r);
                    }
                }
                prev = vb;
            }
            for xi in roots {
                let j = at(xi)?;
                let mut p = q.clone();
                p.push(th);
                for i in 0..nm {
                    p.push(j.grad(i));
                }
                p.push(j.grad(nm) - j.value());
                out.push(p);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct GenericityReport {
    /// Parameters of isolated transverse intersections with the 0-section.
    pub intersections: Vec<Vec<f64>>,
    pub min_transversality: Option<f64>,
    /// True if the embedding meets the 0-section in a non-isolated set.
    pub degenerate_intersection: bool,
    /// Sampled parameters where the base block of the Jacobian drops rank.
    pub vertical_tangency: Vec<Vec<f64>>,
    /// min |∇ det ∂q/∂u| over the tangency samples.
    pub tangency_margin: Option<f64>,
    /// min fiber norm over the tangency samples.
    pub tangency_to_zero_section: Option<f64>,
    pub generic: bool,
}

fn solve_square(j: &DMatrix<f64>, r: &[f64]) -> Option<Vec<f64>> {
    let rhs = nalgebra::DVector::from_column_slice(r);
    j.clone().lu().solve(&rhs).map(|v| v.iter().copied().collect())
}

/// Sampled transversality checks: intersections with the 0-section, the
/// vertical-tangency locus and its distance to the 0-section.
pub fn genericity_check(e: &ParametricEmbedding, per_axis: usize, tol: f64) -> Result<GenericityReport> {
    let n = e.n();
    let src = e.source().clone();
    let grid = parameter_grid(&src, per_axis)?;
    let h = TAU / per_axis as f64;

    let mut zero_hits = 0usize;
    let mut seeds = vec![];
    for u in &grid {
        let (_, p) = e.split(u)?;
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            zero_hits += 1;
        }
        if norm < 2.0 * h * 4.0 {
            seeds.push(u.clone());
        }
    }
    let degenerate = zero_hits * 4 > grid.len() || zero_hits > per_axis;
    let mut intersections: Vec<Vec<f64>> = vec![];
    let mut min_angle: Option<f64> = None;
    if !degenerate {
        for s in seeds {
            let mut u = s.clone();
            let mut ok = false;
            for _ in 0..50 {
                let jac = e.map.jacobian(&u)?;
                let (_, p) = e.split(&u)?;
                let jp = jac.rows(n, n).into_owned();
                let step = match solve_square(&jp, &p) {
                    Some(s) => s,
                    None => break,
                };
                for (a, b) in u.iter_mut().zip(&step) {
                    *a -= b;
                }
                if step.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-13 {
                    ok = true;
                    break;
                }
            }
            let u = src.normalized(&u);
            let (_, p) = e.split(&u)?;
            if !ok || p.iter().map(|v| v.abs()).fold(0.0, f64::max) > 1e-10 {
                continue;
            }
            if intersections.iter().any(|v| src.distance(v, &u) < tolerances::CHORD_DEDUP) {
                continue;
            }
            let jac = e.map.jacobian(&u)?;
            let q = jac.clone().qr().q();
            let vertical = q.rows(n, n).into_owned();
            let angle = vertical.singular_values().min();
            min_angle = Some(min_angle.map_or(angle, |m: f64| m.min(angle)));
            intersections.push(u);
        }
    }

    let det_at = |u: &[f64]| -> Result<f64> {
        let jac = e.map.jacobian(u)?;
        Ok(jac.view((0, 0), (n, n)).into_owned().determinant())
    };
    let mut tangency = vec![];
    let mut margin: Option<f64> = None;
    let mut dist: Option<f64> = None;
    for u in &grid {
        for d in 0..src.dim() {
            let mut v = u.clone();
            v[d] += h;
            let (a, b) = (det_at(u)?, det_at(&v)?);
            if a == 0.0 || a * b < 0.0 {
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let mut w = u.clone();
                    w[d] += mid;
                    if a * det_at(&w)? <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mut w = u.clone();
                w[d] += 0.5 * (lo + hi);
                let w = src.normalized(&w);
                let sv = e.map.jacobian(&w)?.view((0, 0), (n, n)).into_owned().singular_values().min();
                if sv > tol.max(1e-6) {
                    continue;
                }
                let eps = 1e-6;
                let g: f64 = (0..src.dim())
                    .map(|i| {
                        let mut a = w.clone();
                        let mut b = w.clone();
                        a[i] += eps;
                        b[i] -= eps;
                        Ok(((det_at(&a)? - det_at(&b)?) / (2.0 * eps)).powi(2))
                    })
                    .sum::<Result<f64>>()?
                    .sqrt();
                margin = Some(margin.map_or(g, |m: f64| m.min(g)));
                let (_, p) = e.split(&w)?;
                let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                dist = Some(dist.map_or(pn, |m: f64| m.min(pn)));
                tangency.push(w);
            }
        }
    }
    let generic = !degenerate
        && min_angle.map(|a| a > tol).unwrap_or(true)
        && margin.map(|m| m > tol).unwrap_or(true)
        && dist.map(|d| d > tol).unwrap_or(true);
    Ok(GenericityReport {
        intersections,
        min_transversality: min_angle,
        degenerate_intersection: degenerate,
        vertical_tangency: tangency,
        tangency_margin: margin,
        tangency_to_zero_section: dist,
        generic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_pullback_at_quarter_turn() {
        let e = example_torus_1().unwrap();
        let a = pullback(e.map(), e.structure().lambda()).unwrap();
        let v = a.coefficients(&[std::f64::consts::FRAC_PI_4, 0.0]).unwrap();
        let c = std::f64::consts::FRAC_PI_4.cos();
        assert!((v[0] - c).abs() < 1e-15);
        assert!((v[1] + c).abs() < 1e-15);
    }

    #[test]
    fn gluing_constant_oracle() {
        assert_eq!(cobordism_gluing_constant(0.0, 0.0, 1.0).unwrap(), Some(0.0));
        let c = cobordism_gluing_constant(1.0f64.exp() * 0.7, 0.7, 1.0).unwrap().unwrap();
        assert!(c.abs() < 1e-15);
        let c = cobordism_gluing_constant(1.0, 0.0, 2f64.ln()).unwrap().unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!((1.0 + c - 2.0 * (0.0 + c)).abs() < 1e-12);
        assert!(cobordism_gluing_constant(1.0, 0.0, 0.0).is_err());
    }
}
