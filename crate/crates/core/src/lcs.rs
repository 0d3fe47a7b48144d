//! The canonical exact lcs structure on a cotangent bundle: Liouville form,
//! Lee form pulled back from the base, the Liouville field and flow, fiber
//! rescalings and gauge transformations.

use crate::chart::{ModelManifold, Point, ScalarField, SmoothMap, VectorField};
use crate::error::{LcsError, Result};
use crate::forms::{lichnerowicz_d, pullback, FormExpression};
use crate::jet::Jet2;
use crate::sampling::halton_ball_points;
use crate::tolerances;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// (T*M, λ = Σ pᵢ dqᵢ, β = π*β_M, ω = d_β λ).
#[derive(Clone, Debug)]
pub struct CotangentLcsStructure {
    base: ModelManifold,
    total: ModelManifold,
    lambda: FormExpression,
    beta_base: FormExpression,
    beta: FormExpression,
    omega: FormExpression,
}

/// Canonical Liouville form on T*M.
pub fn liouville_form(total: &ModelManifold) -> Result<FormExpression> {
    let n = total.base_dim();
    let mut acc = FormExpression::zero(total.clone(), 1)?;
    for i in 0..n {
        let p = ScalarField::coordinate(total.clone(), n + i);
        acc = acc.add(&FormExpression::dx(total.clone(), i)?.scale_by(&p)?)?;
    }
    Ok(acc)
}

/// The bundle projection T*M → M.
pub fn projection(total: &ModelManifold) -> Result<SmoothMap> {
    let base = total
        .base()
        .ok_or_else(|| LcsError::DimensionMismatch("projection needs a bundle".into()))?
        .clone();
    let n = base.dim();
    Ok(SmoothMap::new(total.clone(), base, move |x| Ok(x[..n].to_vec())))
}

impl CotangentLcsStructure {
    /// Lee form given on the base; it must be closed.
    pub fn new(base: ModelManifold, beta_base: FormExpression) -> Result<Self> {
        if beta_base.domain() != &base || beta_base.degree() != 1 {
            return Err(LcsError::Degree("Lee form must be a 1-form on the base".into()));
        }
        let total = base.cotangent();
        let lambda = liouville_form(&total)?;
        let beta = pullback(&projection(&total)?, &beta_base)?;
        let omega = lichnerowicz_d(&lambda, &beta)?;
        Ok(CotangentLcsStructure { base, total, lambda, beta_base, beta, omega })
    }

    /// β = 0: the symplectic cotangent bundle.
    pub fn canonical(base: ModelManifold) -> Result<Self> {
        let z = FormExpression::zero(base.clone(), 1)?;
        Self::new(base, z)
    }

    /// β = dqᵢ.
    pub fn with_lee_coordinate(base: ModelManifold, i: usize) -> Result<Self> {
        let b = FormExpression::dx(base.clone(), i)?;
        Self::new(base, b)
    }

    pub fn base(&self) -> &ModelManifold {
        &self.base
    }

    pub fn total(&self) -> &ModelManifold {
        &self.total
    }

    pub fn n(&self) -> usize {
        self.base.dim()
    }

    pub fn lambda(&self) -> &FormExpression {
        &self.lambda
    }

    pub fn beta(&self) -> &FormExpression {
        &self.beta
    }

    pub fn beta_base(&self) -> &FormExpression {
        &self.beta_base
    }

    pub fn omega(&self) -> &FormExpression {
        &self.omega
    }

    /// Coefficients of β_M at a base point.
    pub fn beta_at(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.beta_base.coefficients(q)
    }

    /// Coefficient jets of β_M on arbitrary input jets of the base point.
    pub fn beta_jets(&self, q: &[Jet2]) -> Result<Vec<Jet2>> {
        let qv: Vec<f64> = q.iter().map(|j| j.value()).collect();
        let v = self.beta_base.evaluate(&qv)?;
        Ok(v.jets().iter().map(|c| c.compose_jet(q)).collect())
    }
}

/// Z_λ = Σ pᵢ ∂_{pᵢ}.
pub fn liouville_vector_field(s: &CotangentLcsStructure) -> VectorField {
    let n = s.n();
    VectorField::new(s.total.clone(), move |x| {
        let mut v = vec![Jet2::constant(0.0); 2 * n];
        v[n..].copy_from_slice(&x[n..2 * n]);
        Ok(v)
    })
}

/// Φ_t(q, p) = (q, eᵗp).
pub fn liouville_flow(s: &CotangentLcsStructure, x: &[f64], t: f64) -> Point {
    let n = s.n();
    let e = t.exp();
    let mut y = x.to_vec();
    for v in y[n..2 * n].iter_mut() {
        *v *= e;
    }
    y
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialCriterionReport {
    /// sup of the sampled quantity.
    pub sup: f64,
    pub argmax: Vec<f64>,
    pub samples: usize,
    pub bound: f64,
    pub pass: bool,
}

/// dg(Z_λ) at a point.
pub fn radial_derivative(g: &ScalarField, n: usize, x: &[f64]) -> Result<f64> {
    let j = g.eval_jet(x)?;
    Ok((0..n).map(|i| x[n + i] * j.grad(n + i)).sum())
}

fn sup_over(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> Result<f64> + Sync) -> Result<(f64, Vec<f64>)> {
    let vals: Vec<f64> = samples.par_iter().map(|x| f(x)).collect::<Result<_>>()?;
    let mut best = (f64::NEG_INFINITY, vec![]);
    for (v, x) in vals.into_iter().zip(samples) {
        if v > best.0 {
            best = (v, x.clone());
        }
    }
    Ok(best)
}

/// sup of d ln g(Z_λ) over samples, against the bound 1.
pub fn criterion_radial_log_derivative(
    g: &ScalarField,
    s: &CotangentLcsStructure,
    samples: &[Vec<f64>],
) -> Result<RadialCriterionReport> {
    let n = s.n();
    let (sup, argmax) = sup_over(samples, |x| {
        let j = g.eval_jet(x)?;
        if !(j.value() > 0.0) {
            return Err(LcsError::Domain { op: "ln g", arg: j.value(), point: Some(x.to_vec()) });
        }
        Ok((0..n).map(|i| x[n + i] * j.grad(n + i)).sum::<f64>() / j.value())
    })?;
    Ok(RadialCriterionReport { sup, argmax, samples: samples.len(), bound: 1.0, pass: sup < 1.0 })
}

/// The default verification grid for radial criteria.
pub fn verification_grid(s: &CotangentLcsStructure) -> Vec<Point> {
    halton_ball_points(&s.total, tolerances::VERIFICATION_POINTS, tolerances::VERIFICATION_RADIUS)
}

/// φ(q, p) = (q, e^{−g(q,p)} p), after checking dg(Z_λ) < 1 on the grid.
pub fn rescaling_diffeo(s: &CotangentLcsStructure, g: &ScalarField) -> Result<SmoothMap> {
    rescaling_diffeo_on(s, g, &verification_grid(s))
}

pub fn rescaling_diffeo_on(s: &CotangentLcsStructure, g: &ScalarField, grid: &[Vec<f64>]) -> Result<SmoothMap> {
    let n = s.n();
    let (sup, x) = sup_over(grid, |x| radial_derivative(g, n, x))?;
    if sup >= 1.0 {
        return Err(LcsError::Precondition(format!("dg(Z) = {sup} >= 1 at {x:?}")));
    }
    let g = g.clone();
    Ok(SmoothMap::new(s.total.clone(), s.total.clone(), move |x| {
        let e = (-g.eval_jets(x)?).exp();
        let mut y = x.to_vec();
        for v in y[n..2 * n].iter_mut() {
            *v *= e;
        }
        Ok(y)
    }))
}

/// sup over samples of |φ*λ − e^{−g}λ| and |φ*β − β|.
pub fn rescaling_residual(
    s: &CotangentLcsStructure,
    g: &ScalarField,
    phi: &SmoothMap,
    samples: &[Vec<f64>],
) -> Result<f64> {
    let pl = pullback(phi, &s.lambda)?;
    let pb = pullback(phi, &s.beta)?;
    let scaled = s.lambda.scale_by(&g.map(|v| Ok((-v).exp())))?;
    let res: Vec<f64> = samples
        .par_iter()
        .map(|x| {
            let a = pl.evaluate(x)?.max_abs_diff(&scaled.evaluate(x)?);
            let b = pb.evaluate(x)?.max_abs_diff(&s.beta.evaluate(x)?);
            Ok(a.max(b))
        })
        .collect::<Result<_>>()?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// (λ, β) ↦ (e^g(λ + d_β f), β + dg).
#[derive(Clone, Debug)]
pub struct GaugeTransform {
    pub g: ScalarField,
    pub f_shift: Option<ScalarField>,
}

/// A general exact lcs pair on the total space.
#[derive(Clone, Debug)]
pub struct LcsPair {
    pub lambda: FormExpression,
    pub beta: FormExpression,
    pub omega: FormExpression,
    pub conformal_factor: ScalarField,
}

pub fn gauge_apply(t: &GaugeTransform, s: &CotangentLcsStructure) -> Result<LcsPair> {
    let mut lam = s.lambda.clone();
    if let Some(f) = &t.f_shift {
        lam = lam.add(&lichnerowicz_d(&FormExpression::function(f), &s.beta)?)?;
    }
    let eg = t.g.map(|v| Ok(v.exp()));
    let lambda = lam.scale_by(&eg)?;
    let beta = s.beta.add(&FormExpression::function(&t.g).d()?)?;
    let omega = lichnerowicz_d(&lambda, &beta)?;
    Ok(LcsPair { lambda, beta, omega, conformal_factor: eg })
}

/// sup over samples of |ω' − e^g ω|.
pub fn gauge_covariance_residual(t: &GaugeTransform, s: &CotangentLcsStructure, samples: &[Vec<f64>]) -> Result<f64> {
    let pair = gauge_apply(t, s)?;
    let rhs = s.omega.scale_by(&pair.conformal_factor)?;
    let res: Vec<f64> = samples
        .par_iter()
        .map(|x| Ok(pair.omega.evaluate(x)?.max_abs_diff(&rhs.evaluate(x)?)))
        .collect::<Result<_>>()?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// Shared handle used by embeddings.
pub type StructureRef = Arc<CotangentLcsStructure>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::interior_product;
    use crate::sampling::halton_points;

    fn t2() -> CotangentLcsStructure {
        CotangentLcsStructure::with_lee_coordinate(ModelManifold::torus(2).unwrap(), 1).unwrap()
    }

    #[test]
    fn liouville_field_components() {
        let s = t2();
        let z = liouville_vector_field(&s);
        assert_eq!(z.eval(&[0.0, 0.0, 1.0, 2.0]).unwrap(), vec![0.0, 0.0, 1.0, 2.0]);
        assert_eq!(z.eval(&[1.0, 2.0, 0.0, 0.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn contraction_of_dlambda_is_lambda() {
        let s = t2();
        let z = liouville_vector_field(&s);
        let lhs = interior_product(&z, &s.lambda().d().unwrap()).unwrap();
        for x in halton_points(s.total(), 100, 3.0) {
            assert!(lhs.evaluate(&x).unwrap().max_abs_diff(&s.lambda().evaluate(&x).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn flow_group_law() {
        let s = t2();
        let x = [0.3, 0.1, 0.0, 1.0];
        let y = liouville_flow(&s, &x, 3f64.ln());
        assert!((y[3] - 3.0).abs() < 1e-15);
        assert_eq!(liouville_flow(&s, &x, 0.0), x.to_vec());
        let a = liouville_flow(&s, &liouville_flow(&s, &x, 0.4), 0.7);
        let b = liouville_flow(&s, &x, 1.1);
        assert!((a[3] - b[3]).abs() < 1e-15);
    }

    #[test]
    fn arctan_rescaling_is_admissible() {
        let s = CotangentLcsStructure::canonical(ModelManifold::torus(1).unwrap()).unwrap();
        let g = ScalarField::new(s.total().clone(), |x| Ok(x[1].atan() * 0.5));
        let phi = rescaling_diffeo(&s, &g).unwrap();
        let pts = halton_points(s.total(), 200, 4.0);
        assert!(rescaling_residual(&s, &g, &phi, &pts).unwrap() <= 1e-9);
        let y = phi.eval(&[1.0, 2.0]).unwrap();
        assert_eq!(y[0], 1.0);
    }

    #[test]
    fn steep_rescaling_is_refused() {
        let s = CotangentLcsStructure::canonical(ModelManifold::torus(1).unwrap()).unwrap();
        let g = ScalarField::new(s.total().clone(), |x| Ok(x[1] * x[1]));
        assert!(matches!(rescaling_diffeo(&s, &g), Err(LcsError::Precondition(_))));
    }
}
