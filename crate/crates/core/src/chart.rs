//! Global charts on 𝕋^a × ℝ^b, their cotangent bundles and 1-jet spaces,
//! plus jet-valued scalar fields, vector fields and smooth maps.

use crate::error::{LcsError, Result};
use crate::jet::Jet2;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

pub type Point = Vec<f64>;

/// Wraps an angle into [0, 2π).
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps a difference of angles into (−π, π].
pub fn wrap_diff(d: f64) -> f64 {
    let mut r = d.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bundle {
    Plain,
    Cotangent,
    Jet1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifold {
    circle: Vec<bool>,
    labels: Vec<String>,
    bundle: Bundle,
    base: Option<Box<ModelManifold>>,
}

impl ModelManifold {
    /// 𝕋^circles × ℝ^lines with circle coordinates first.
    pub fn new(circles: usize, lines: usize) -> Result<Self> {
        let n = circles + lines;
        if n == 0 {
            return Err(LcsError::ZeroDimension);
        }
        let circle = (0..n).map(|i| i < circles).collect();
        let labels = (0..n).map(|i| format!("q{}", i + 1)).collect();
        Ok(ModelManifold { circle, labels, bundle: Bundle::Plain, base: None })
    }

    pub fn torus(k: usize) -> Result<Self> {
        Self::new(k, 0)
    }

    /// Product with coordinates of `self` followed by those of `other`.
    pub fn product(&self, other: &ModelManifold) -> ModelManifold {
        let mut circle = self.circle.clone();
        circle.extend_from_slice(&other.circle);
        let labels = (0..circle.len()).map(|i| format!("q{}", i + 1)).collect();
        ModelManifold { circle, labels, bundle: Bundle::Plain, base: None }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(LcsError::DimensionMismatch(format!(
                "{} labels for dimension {}",
                labels.len(),
                self.dim()
            )));
        }
        self.labels = labels.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    /// T*M with coordinates (q₁…qₙ, p₁…pₙ).
    pub fn cotangent(&self) -> ModelManifold {
        let n = self.dim();
        let mut circle = self.circle.clone();
        circle.extend(std::iter::repeat_n(false, n));
        let mut labels = self.labels.clone();
        labels.extend((0..n).map(|i| format!("p{}", i + 1)));
        ModelManifold { circle, labels, bundle: Bundle::Cotangent, base: Some(Box::new(self.clone())) }
    }

    /// J¹M = T*M × ℝ_z with coordinates (q, p, z).
    pub fn jet1(&self) -> ModelManifold {
        let mut m = self.cotangent();
        m.circle.push(false);
        m.labels.push("z".into());
        m.bundle = Bundle::Jet1;
        m
    }

    pub fn dim(&self) -> usize {
        self.circle.len()
    }

    pub fn circle_count(&self) -> usize {
        self.circle.iter().filter(|c| **c).count()
    }

    pub fn line_count(&self) -> usize {
        self.dim() - self.circle_count()
    }

    pub fn is_circle(&self, i: usize) -> bool {
        self.circle[i]
    }

    pub fn circle_flags(&self) -> &[bool] {
        &self.circle
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn bundle(&self) -> Bundle {
        self.bundle
    }

    pub fn base(&self) -> Option<&ModelManifold> {
        self.base.as_deref()
    }

    /// Dimension of the base for bundles, of the manifold itself otherwise.
    pub fn base_dim(&self) -> usize {
        self.base.as_ref().map(|b| b.dim()).unwrap_or(self.dim())
    }

    pub fn is_torus(&self) -> bool {
        self.circle.iter().all(|c| *c)
    }

    pub fn normalize(&self, x: &mut [f64]) {
        for (v, &c) in x.iter_mut().zip(&self.circle) {
            if c {
                *v = wrap_angle(*v);
            }
        }
    }

    pub fn normalized(&self, x: &[f64]) -> Point {
        let mut y = x.to_vec();
        self.normalize(&mut y);
        y
    }

    /// Componentwise difference `y − x`, shortest arc on circle coordinates.
    pub fn difference(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(y)
            .zip(&self.circle)
            .map(|((a, b), &c)| if c { wrap_diff(b - a) } else { b - a })
            .collect()
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.difference(x, y).iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(LcsError::DimensionMismatch(format!(
                "point of length {} on manifold of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn normalize_jets(&self, x: &[Jet2]) -> Vec<Jet2> {
        x.iter()
            .zip(&self.circle)
            .map(|(j, &c)| if c { j.with_value(wrap_angle(j.value())) } else { *j })
            .collect()
    }
}

impl fmt::Display for ModelManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |c: usize, l: usize| match (c, l) {
            (0, l) => format!("R^{l}"),
            (c, 0) => format!("T^{c}"),
            (c, l) => format!("T^{c}xR^{l}"),
        };
        match (&self.bundle, &self.base) {
            (Bundle::Cotangent, Some(b)) => write!(f, "T*{}", name(b.circle_count(), b.line_count())),
            (Bundle::Jet1, Some(b)) => write!(f, "J1{}", name(b.circle_count(), b.line_count())),
            _ => write!(f, "{}", name(self.circle_count(), self.line_count())),
        }
    }
}

/// Convenience constructor matching the chart-core vocabulary.
pub fn make_manifold(circle_count: usize, line_count: usize) -> Result<ModelManifold> {
    ModelManifold::new(circle_count, line_count)
}

type ScalarFn = dyn Fn(&[Jet2]) -> Result<Jet2> + Send + Sync;
type VectorFn = dyn Fn(&[Jet2]) -> Result<Vec<Jet2>> + Send + Sync;

/// A smooth function on a model manifold, evaluated by jet propagation.
#[derive(Clone)]
pub struct ScalarField {
    domain: ModelManifold,
    f: Arc<ScalarFn>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField on {}", self.domain)
    }
}

impl ScalarField {
    pub fn new(domain: ModelManifold, f: impl Fn(&[Jet2]) -> Result<Jet2> + Send + Sync + 'static) -> Self {
        ScalarField { domain, f: Arc::new(f) }
    }

    pub fn constant(domain: ModelManifold, c: f64) -> Self {
        Self::new(domain, move |_| Ok(Jet2::constant(c)))
    }

    pub fn coordinate(domain: ModelManifold, i: usize) -> Self {
        Self::new(domain, move |x| Ok(x[i]))
    }

    pub fn domain(&self) -> &ModelManifold {
        &self.domain
    }

    /// Value, gradient and Hessian at `x`.
    pub fn eval_jet(&self, x: &[f64]) -> Result<Jet2> {
        self.domain.check_point(x)?;
        let y = self.domain.normalized(x);
        (self.f)(&Jet2::seed(&y)).map_err(|e| e.at_point(&y))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.domain.check_point(x)?;
        let y = self.domain.normalized(x);
        let c: Vec<Jet2> = y.iter().map(|&v| Jet2::constant(v)).collect();
        (self.f)(&c).map(|j| j.value()).map_err(|e| e.at_point(&y))
    }

    /// Evaluates on arbitrary input jets (composition with a map).
    pub fn eval_jets(&self, x: &[Jet2]) -> Result<Jet2> {
        if x.len() != self.domain.dim() {
            return Err(LcsError::DimensionMismatch("jet input length".into()));
        }
        let y = self.domain.normalize_jets(x);
        (self.f)(&y).map_err(|e| e.at_point(&y.iter().map(|j| j.value()).collect::<Vec<_>>()))
    }

    /// f ∘ φ as a field on the source of φ.
    pub fn pullback(&self, phi: &SmoothMap) -> Result<ScalarField> {
        if phi.target != self.domain {
            return Err(LcsError::DimensionMismatch("map target differs from field domain".into()));
        }
        let g = self.clone();
        let phi = phi.clone();
        Ok(ScalarField::new(phi.source.clone(), move |x| g.eval_jets(&phi.eval_jets_raw(x)?)))
    }

    pub fn map(&self, op: impl Fn(Jet2) -> Result<Jet2> + Send + Sync + 'static) -> ScalarField {
        let g = self.clone();
        ScalarField::new(self.domain.clone(), move |x| op(g.eval_jets(x)?))
    }

    pub fn zip(&self, other: &ScalarField, op: impl Fn(Jet2, Jet2) -> Result<Jet2> + Send + Sync + 'static) -> ScalarField {
        let (a, b) = (self.clone(), other.clone());
        ScalarField::new(self.domain.clone(), move |x| op(a.eval_jets(x)?, b.eval_jets(x)?))
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| Ok(a + b))
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, |a, b| Ok(a * b))
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(move |a| Ok(a * c))
    }

    pub fn shift(&self, c: f64) -> ScalarField {
        self.map(move |a| Ok(a + c))
    }

    /// Same evaluator viewed on a larger manifold through a coordinate selection.
    pub fn extend_to(&self, domain: ModelManifold, coords: Vec<usize>) -> ScalarField {
        let g = self.clone();
        ScalarField::new(domain, move |x| {
            let sub: Vec<Jet2> = coords.iter().map(|&i| x[i]).collect();
            g.eval_jets(&sub)
        })
    }
}

/// A vector field, given by its components in the global chart.
#[derive(Clone)]
pub struct VectorField {
    domain: ModelManifold,
    f: Arc<VectorFn>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField on {}", self.domain)
    }
}

impl VectorField {
    pub fn new(domain: ModelManifold, f: impl Fn(&[Jet2]) -> Result<Vec<Jet2>> + Send + Sync + 'static) -> Self {
        VectorField { domain, f: Arc::new(f) }
    }

    pub fn domain(&self) -> &ModelManifold {
        &self.domain
    }

    pub fn eval_jets(&self, x: &[Jet2]) -> Result<Vec<Jet2>> {
        let y = self.domain.normalize_jets(x);
        let v = (self.f)(&y)?;
        if v.len() != self.domain.dim() {
            return Err(LcsError::DimensionMismatch(format!(
                "vector field returned {} components on dimension {}",
                v.len(),
                self.domain.dim()
            )));
        }
        Ok(v)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.domain.check_point(x)?;
        let c: Vec<Jet2> = self.domain.normalized(x).iter().map(|&v| Jet2::constant(v)).collect();
        Ok(self.eval_jets(&c)?.iter().map(|j| j.value()).collect())
    }

    pub fn eval_jet(&self, x: &[f64]) -> Result<Vec<Jet2>> {
        self.domain.check_point(x)?;
        self.eval_jets(&Jet2::seed(&self.domain.normalized(x)))
    }
}

/// A smooth map between model manifolds with jet-valued components.
#[derive(Clone)]
pub struct SmoothMap {
    source: ModelManifold,
    target: ModelManifold,
    f: Arc<VectorFn>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SmoothMap {} -> {}", self.source, self.target)
    }
}

impl SmoothMap {
    pub fn new(
        source: ModelManifold,
        target: ModelManifold,
        f: impl Fn(&[Jet2]) -> Result<Vec<Jet2>> + Send + Sync + 'static,
    ) -> Self {
        SmoothMap { source, target, f: Arc::new(f) }
    }

    pub fn identity(m: ModelManifold) -> Self {
        SmoothMap::new(m.clone(), m, |x| Ok(x.to_vec()))
    }

    pub fn source(&self) -> &ModelManifold {
        &self.source
    }

    pub fn target(&self) -> &ModelManifold {
        &self.target
    }

    fn eval_jets_raw(&self, x: &[Jet2]) -> Result<Vec<Jet2>> {
        let y = self.source.normalize_jets(x);
        let v = (self.f)(&y)?;
        if v.len() != self.target.dim() {
            return Err(LcsError::DimensionMismatch(format!(
                "map returned {} components for target dimension {}",
                v.len(),
                self.target.dim()
            )));
        }
        Ok(v)
    }

    /// Output jets on input jets; circle outputs are wrapped in value only.
    pub fn eval_jets(&self, x: &[Jet2]) -> Result<Vec<Jet2>> {
        Ok(self.target.normalize_jets(&self.eval_jets_raw(x)?))
    }

    pub fn eval_jet(&self, x: &[f64]) -> Result<Vec<Jet2>> {
        self.source.check_point(x)?;
        let y = self.source.normalized(x);
        self.eval_jets(&Jet2::seed(&y)).map_err(|e| e.at_point(&y))
    }

    pub fn eval(&self, x: &[f64]) -> Result<Point> {
        self.source.check_point(x)?;
        let c: Vec<Jet2> = self.source.normalized(x).iter().map(|&v| Jet2::constant(v)).collect();
        Ok(self.eval_jets(&c)?.iter().map(|j| j.value()).collect())
    }

    /// Jacobian with rows indexed by target coordinates.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let j = self.eval_jet(x)?;
        let n = self.source.dim();
        Ok(DMatrix::from_fn(self.target.dim(), n, |r, c| j[r].grad(c)))
    }

    /// `other ∘ self`.
    pub fn then(&self, other: &SmoothMap) -> Result<SmoothMap> {
        if self.target != other.source {
            return Err(LcsError::DimensionMismatch("composition of incompatible maps".into()));
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(SmoothMap::new(self.source.clone(), other.target.clone(), move |x| b.eval_jets(&a.eval_jets(x)?)))
    }

    pub fn component(&self, i: usize) -> ScalarField {
        let m = self.clone();
        ScalarField::new(self.source.clone(), move |x| Ok(m.eval_jets_raw(x)?[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifold_constructors() {
        let t2 = make_manifold(2, 0).unwrap();
        assert_eq!(t2.dim(), 2);
        let c = t2.cotangent();
        assert_eq!(c.dim(), 4);
        assert_eq!(c.labels(), &["q1", "q2", "p1", "p2"]);
        assert_eq!(c.circle_count(), 2);
        let j = make_manifold(1, 0).unwrap().jet1();
        assert_eq!(j.dim(), 3);
        assert_eq!(j.labels(), &["q1", "p1", "z"]);
        assert_eq!(make_manifold(0, 0), Err(LcsError::ZeroDimension));
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = make_manifold(1, 1).unwrap();
        for x in [-7.5, -1e-17, 0.0, 3.0, TAU, 19.0] {
            let a = m.normalized(&[x, x]);
            assert!(a[0] >= 0.0 && a[0] < TAU);
            assert_eq!(a[1], x);
            assert_eq!(m.normalized(&a), a);
        }
        assert!((m.distance(&[0.1, 0.0], &[TAU - 0.1, 0.0]) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn eval_examples() {
        let t1 = make_manifold(1, 0).unwrap();
        let f = ScalarField::new(t1, |x| Ok(x[0].sin()));
        let j = f.eval_jet(&[0.0]).unwrap();
        assert_eq!((j.value(), j.grad(0), j.hess(0, 0)), (0.0, 1.0, 0.0));
        let tt = make_manifold(1, 0).unwrap().cotangent();
        let g = ScalarField::new(tt, |x| Ok(x[0].exp() * x[1]));
        let j = g.eval_jet(&[0.0, 2.0]).unwrap();
        assert_eq!(j.value(), 2.0);
        assert_eq!(j.gradient(2), vec![2.0, 1.0]);
    }

    #[test]
    fn domain_error_carries_point() {
        let m = make_manifold(0, 1).unwrap();
        let f = ScalarField::new(m, |x| x[0].ln());
        match f.eval_jet(&[-2.0]) {
            Err(LcsError::Domain { point: Some(p), .. }) => assert_eq!(p, vec![-2.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn composition_of_maps() {
        let m = make_manifold(0, 2).unwrap();
        let a = SmoothMap::new(m.clone(), m.clone(), |x| Ok(vec![x[0] * x[1], x[0] + x[1]]));
        let b = SmoothMap::new(m.clone(), m.clone(), |x| Ok(vec![x[0].sin(), x[1] * x[1]]));
        let c = a.then(&b).unwrap();
        let x = [0.3, 0.7];
        let y = c.eval(&x).unwrap();
        assert!((y[0] - (0.21f64).sin()).abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-15);
        let j = c.jacobian(&x).unwrap();
        let expect = b.jacobian(&a.eval(&x).unwrap()).unwrap() * a.jacobian(&x).unwrap();
        assert!((j - expect).abs().max() < 1e-14);
    }
}
