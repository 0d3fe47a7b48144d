//! Differential forms as expression trees.
//!
//! A [`FormExpression`] is built from coordinate differentials, constant
//! forms and scalar-field multiples, and is closed under sums, wedge
//! products, the exterior and Lichnerowicz differentials, pullback along
//! smooth maps and contraction with vector fields. Evaluation at a point
//! returns a [`FormValue`]: the coefficients on the basis dx_I for strictly
//! increasing multi-indices I, each coefficient a [`Jet2`].
//!
//! Multi-indices are bitmasks ranked in colexicographic order, so the rank of
//! a given index set does not depend on the ambient dimension.

use crate::chart::{ModelManifold, ScalarField, SmoothMap, VectorField};
use crate::error::{LcsError, Result};
use crate::jet::Jet2;
use crate::sampling::halton_points;
use crate::tolerances;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r = 1usize;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Masks of `k`-element subsets of {0, …, n−1} in colex order.
pub fn subsets(n: usize, k: usize) -> Vec<u32> {
    (0u32..(1u32 << n)).filter(|m| m.count_ones() as usize == k).collect()
}

/// Position of `mask` among the subsets of its size in colex order.
pub fn rank(mask: u32) -> usize {
    let mut r = 0;
    let mut i = 0;
    let mut m = mask;
    while m != 0 {
        let s = m.trailing_zeros() as usize;
        i += 1;
        r += binomial(s, i);
        m &= m - 1;
    }
    r
}

/// Indices of the set bits, increasing.
pub fn indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

fn below(mask: u32, j: usize) -> u32 {
    (mask & ((1u32 << j) - 1)).count_ones()
}

fn sign(parity: u32) -> f64 {
    if parity.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Evaluated coefficients of a k-form at one point.
#[derive(Clone, Debug)]
pub struct FormValue {
    dim: usize,
    degree: usize,
    coeffs: Vec<Jet2>,
}

impl FormValue {
    pub fn zero(dim: usize, degree: usize) -> Self {
        FormValue { dim, degree, coeffs: vec![Jet2::constant(0.0); binomial(dim, degree)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn jets(&self) -> &[Jet2] {
        &self.coeffs
    }

    /// Coefficient of dx_I, I given as a bitmask.
    pub fn coeff(&self, mask: u32) -> f64 {
        self.coeffs[rank(mask)].value()
    }

    /// Coefficient of dx_{i₁}∧…∧dx_{i_k} for increasing indices.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.coeff(idx.iter().fold(0u32, |m, &i| m | (1 << i)))
    }

    pub fn values(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.value()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.value().abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &FormValue) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a.value() - b.value()).abs())
            .fold(0.0, f64::max)
    }

    fn add(&self, other: &FormValue) -> FormValue {
        FormValue {
            dim: self.dim,
            degree: self.degree,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| *a + *b).collect(),
        }
    }

    fn scale(&self, c: Jet2) -> FormValue {
        FormValue { dim: self.dim, degree: self.degree, coeffs: self.coeffs.iter().map(|a| *a * c).collect() }
    }

    fn wedge(&self, other: &FormValue) -> FormValue {
        let n = self.dim;
        let mut out = FormValue::zero(n, self.degree + other.degree);
        let ma = subsets(n, self.degree);
        let mb = subsets(n, other.degree);
        for (ia, &a) in ma.iter().enumerate() {
            for (ib, &b) in mb.iter().enumerate() {
                if a & b != 0 {
                    continue;
                }
                let parity: u32 = indices(b).iter().map(|&j| (a >> j).count_ones() - (a >> j & 1)).sum::<u32>();
                let s = sign(parity);
                let r = rank(a | b);
                out.coeffs[r] += self.coeffs[ia] * other.coeffs[ib] * s;
            }
        }
        out
    }

    fn exterior(&self) -> Result<FormValue> {
        let n = self.dim;
        let mut out = FormValue::zero(n, self.degree + 1);
        for (i, &m) in subsets(n, self.degree).iter().enumerate() {
            let c = &self.coeffs[i];
            if c.dim() == 0 {
                continue;
            }
            for j in 0..n {
                if m & (1 << j) != 0 {
                    continue;
                }
                let s = sign(below(m, j));
                out.coeffs[rank(m | (1 << j))] += c.partial(j)? * s;
            }
        }
        Ok(out)
    }

    fn contract(&self, x: &[Jet2]) -> FormValue {
        let n = self.dim;
        let mut out = FormValue::zero(n, self.degree - 1);
        for (i, &m) in subsets(n, self.degree - 1).iter().enumerate() {
            let mut acc = Jet2::constant(0.0);
            for (j, xj) in x.iter().enumerate() {
                if m & (1 << j) != 0 {
                    continue;
                }
                acc += *xj * self.coeffs[rank(m | (1 << j))] * sign(below(m, j));
            }
            out.coeffs[i] = acc;
        }
        out
    }

    /// Antisymmetric coefficient matrix of a 2-form.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        assert_eq!(self.degree, 2);
        let n = self.dim;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = self.coeff((1 << i) | (1 << j));
                a[i][j] = v;
                a[j][i] = -v;
            }
        }
        a
    }
}

fn det_jets(m: &[Vec<Jet2>]) -> Jet2 {
    match m.len() {
        0 => Jet2::constant(1.0),
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        k => {
            let mut acc = Jet2::constant(0.0);
            for c in 0..k {
                let minor: Vec<Vec<Jet2>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, v)| *v).collect())
                    .collect();
                let term = m[0][c] * det_jets(&minor);
                acc += if c % 2 == 0 { term } else { -term };
            }
            acc
        }
    }
}

/// Pfaffian of an antisymmetric matrix of even size.
pub fn pfaffian(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    if n % 2 == 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in 1..n {
        if a[0][j] == 0.0 {
            continue;
        }
        let keep: Vec<usize> = (1..n).filter(|&k| k != j).collect();
        let sub: Vec<Vec<f64>> = keep.iter().map(|&r| keep.iter().map(|&c| a[r][c]).collect()).collect();
        let s = if j % 2 == 1 { 1.0 } else { -1.0 };
        acc += s * a[0][j] * pfaffian(&sub);
    }
    acc
}

#[derive(Clone)]
enum Node {
    Constant(Vec<f64>),
    Differential(usize),
    Scaled(ScalarField, FormExpression),
    Sum(FormExpression, FormExpression),
    Wedge(FormExpression, FormExpression),
    Exterior(FormExpression),
    Lichnerowicz(FormExpression, FormExpression),
    Pullback(SmoothMap, FormExpression),
    Contract(VectorField, FormExpression),
}

/// An immutable differential form on a model manifold.
#[derive(Clone)]
pub struct FormExpression {
    domain: ModelManifold,
    degree: usize,
    node: Arc<Node>,
}

impl fmt::Debug for FormExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-form on {}", self.degree, self.domain)
    }
}

impl FormExpression {
    fn make(domain: ModelManifold, degree: usize, node: Node) -> Result<Self> {
        if degree > domain.dim() {
            return Err(LcsError::Degree(format!("degree {degree} exceeds dimension {}", domain.dim())));
        }
        Ok(FormExpression { domain, degree, node: Arc::new(node) })
    }

    pub fn domain(&self) -> &ModelManifold {
        &self.domain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Constant coefficients in colex order of multi-indices.
    pub fn constant(domain: ModelManifold, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        let n = binomial(domain.dim(), degree);
        if coeffs.len() != n {
            return Err(LcsError::DimensionMismatch(format!("{} coefficients for {n} basis forms", coeffs.len())));
        }
        Self::make(domain, degree, Node::Constant(coeffs))
    }

    pub fn zero(domain: ModelManifold, degree: usize) -> Result<Self> {
        let n = binomial(domain.dim(), degree);
        Self::constant(domain, degree, vec![0.0; n])
    }

    /// The coordinate differential dxᵢ.
    pub fn dx(domain: ModelManifold, i: usize) -> Result<Self> {
        if i >= domain.dim() {
            return Err(LcsError::DimensionMismatch(format!("coordinate {i} on dimension {}", domain.dim())));
        }
        Self::make(domain, 1, Node::Differential(i))
    }

    /// A function as a 0-form.
    pub fn function(f: &ScalarField) -> Self {
        let one = Self::constant(f.domain().clone(), 0, vec![1.0]).unwrap();
        FormExpression { domain: f.domain().clone(), degree: 0, node: Arc::new(Node::Scaled(f.clone(), one)) }
    }

    /// Σ cᵢ dxᵢ.
    pub fn one_form(domain: ModelManifold, coeffs: &[ScalarField]) -> Result<Self> {
        if coeffs.len() != domain.dim() {
            return Err(LcsError::DimensionMismatch("one coefficient per coordinate".into()));
        }
        let mut acc = Self::zero(domain.clone(), 1)?;
        for (i, c) in coeffs.iter().enumerate() {
            acc = acc.add(&Self::dx(domain.clone(), i)?.scale_by(c)?)?;
        }
        Ok(acc)
    }

    pub fn scale_by(&self, f: &ScalarField) -> Result<Self> {
        if f.domain() != &self.domain {
            return Err(LcsError::DimensionMismatch("field and form on different manifolds".into()));
        }
        Self::make(self.domain.clone(), self.degree, Node::Scaled(f.clone(), self.clone()))
    }

    pub fn scale(&self, c: f64) -> Self {
        let f = ScalarField::constant(self.domain.clone(), c);
        self.scale_by(&f).unwrap()
    }

    pub fn add(&self, other: &FormExpression) -> Result<Self> {
        if other.domain != self.domain || other.degree != self.degree {
            return Err(LcsError::Degree(format!(
                "sum of a {}-form and a {}-form",
                self.degree, other.degree
            )));
        }
        Self::make(self.domain.clone(), self.degree, Node::Sum(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &FormExpression) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn wedge(&self, other: &FormExpression) -> Result<Self> {
        if other.domain != self.domain {
            return Err(LcsError::DimensionMismatch("wedge of forms on different manifolds".into()));
        }
        Self::make(self.domain.clone(), self.degree + other.degree, Node::Wedge(self.clone(), other.clone()))
    }

    pub fn d(&self) -> Result<Self> {
        Self::make(self.domain.clone(), self.degree + 1, Node::Exterior(self.clone()))
    }

    /// k-th wedge power.
    pub fn power(&self, k: usize) -> Result<Self> {
        let mut acc = Self::constant(self.domain.clone(), 0, vec![1.0])?;
        for _ in 0..k {
            acc = acc.wedge(self)?;
        }
        Ok(acc)
    }

    fn structurally_closed(&self) -> bool {
        match &*self.node {
            Node::Constant(_) | Node::Differential(_) | Node::Exterior(_) => true,
            Node::Sum(a, b) => a.structurally_closed() && b.structurally_closed(),
            Node::Pullback(_, a) => a.structurally_closed(),
            _ => false,
        }
    }

    /// Sup of |dα| over the closedness sample set.
    pub fn closedness_residual(&self) -> Result<(f64, Vec<f64>)> {
        if self.degree == self.domain.dim() {
            return Ok((0.0, vec![]));
        }
        let d = self.d()?;
        let mut worst = (0.0, vec![]);
        for x in halton_points(&self.domain, tolerances::CLOSEDNESS_SAMPLES, tolerances::VERIFICATION_RADIUS) {
            let r = d.evaluate(&x)?.max_abs();
            if r > worst.0 {
                worst = (r, x);
            }
        }
        Ok(worst)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<FormValue> {
        if x.len() != self.domain.dim() {
            return Err(LcsError::DimensionMismatch("evaluation point".into()));
        }
        let y = self.domain.normalized(x);
        self.eval_seeded(&Jet2::seed(&y)).map_err(|e| e.at_point(&y))
    }

    /// Coefficient values at `x`.
    pub fn coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(x)?.values())
    }

    fn eval_seeded(&self, x: &[Jet2]) -> Result<FormValue> {
        let n = self.domain.dim();
        match &*self.node {
            Node::Constant(c) => Ok(FormValue {
                dim: n,
                degree: self.degree,
                coeffs: c.iter().map(|&v| Jet2::constant(v)).collect(),
            }),
            Node::Differential(i) => {
                let mut v = FormValue::zero(n, 1);
                v.coeffs[*i] = Jet2::constant(1.0);
                Ok(v)
            }
            Node::Scaled(f, a) => Ok(a.eval_seeded(x)?.scale(f.eval_jets(x)?)),
            Node::Sum(a, b) => Ok(a.eval_seeded(x)?.add(&b.eval_seeded(x)?)),
            Node::Wedge(a, b) => Ok(a.eval_seeded(x)?.wedge(&b.eval_seeded(x)?)),
            Node::Exterior(a) => a.eval_seeded(x)?.exterior(),
            Node::Lichnerowicz(a, b) => {
                let av = a.eval_seeded(x)?;
                let bv = b.eval_seeded(x)?;
                Ok(av.exterior()?.add(&bv.wedge(&av).scale(Jet2::constant(-1.0))))
            }
            Node::Pullback(phi, a) => {
                let y = phi.eval_jets(x)?;
                let yv: Vec<f64> = y.iter().map(|j| j.value()).collect();
                let inner = a.eval_seeded(&Jet2::seed(&yv))?;
                let m = phi.target().dim();
                let partials: Vec<Vec<Jet2>> = y
                    .iter()
                    .map(|yj| (0..n).map(|s| yj.partial(s)).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?;
                let k = self.degree;
                let mut out = FormValue::zero(n, k);
                let rows_all = subsets(m, k);
                let cols_all = subsets(n, k);
                let composed: Vec<Jet2> = inner.coeffs.iter().map(|c| c.compose_jet(&y)).collect();
                for (ci, &cm) in cols_all.iter().enumerate() {
                    let cols = indices(cm);
                    let mut acc = Jet2::constant(0.0);
                    for (ri, &rm) in rows_all.iter().enumerate() {
                        let b = composed[ri];
                        if b.dim() == 0 && b.value() == 0.0 {
                            continue;
                        }
                        let rows = indices(rm);
                        let sub: Vec<Vec<Jet2>> =
                            rows.iter().map(|&r| cols.iter().map(|&c| partials[r][c]).collect()).collect();
                        acc += b * det_jets(&sub);
                    }
                    out.coeffs[ci] = acc;
                }
                Ok(out)
            }
            Node::Contract(v, a) => Ok(a.eval_seeded(x)?.contract(&v.eval_jets(x)?)),
        }
    }
}

/// d_β α = dα − β∧α. Fails if β is not closed on the sample set.
pub fn lichnerowicz_d(alpha: &FormExpression, beta: &FormExpression) -> Result<FormExpression> {
    if beta.degree != 1 {
        return Err(LcsError::Degree("Lee form must be a 1-form".into()));
    }
    if beta.domain != alpha.domain {
        return Err(LcsError::DimensionMismatch("α and β on different manifolds".into()));
    }
    if !beta.structurally_closed() {
        let (r, x) = beta.closedness_residual()?;
        if r > tolerances::CLOSEDNESS {
            return Err(LcsError::NotClosed { point: x, residual: r });
        }
    }
    FormExpression::make(alpha.domain.clone(), alpha.degree + 1, Node::Lichnerowicz(alpha.clone(), beta.clone()))
}

/// φ*α.
pub fn pullback(phi: &SmoothMap, alpha: &FormExpression) -> Result<FormExpression> {
    if phi.target() != &alpha.domain {
        return Err(LcsError::DimensionMismatch(format!(
            "map target {} differs from form domain {}",
            phi.target(),
            alpha.domain
        )));
    }
    FormExpression::make(phi.source().clone(), alpha.degree, Node::Pullback(phi.clone(), alpha.clone()))
}

/// ι_X α, contracting the first slot.
pub fn interior_product(x: &VectorField, alpha: &FormExpression) -> Result<FormExpression> {
    if alpha.degree == 0 {
        return Err(LcsError::Degree("cannot contract a 0-form".into()));
    }
    if x.domain() != &alpha.domain {
        return Err(LcsError::DimensionMismatch("vector field and form on different manifolds".into()));
    }
    FormExpression::make(alpha.domain.clone(), alpha.degree - 1, Node::Contract(x.clone(), alpha.clone()))
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracySample {
    pub point: Vec<f64>,
    pub pfaffian: f64,
    pub abs_det: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyReport {
    pub samples: Vec<NondegeneracySample>,
    pub min_abs_pfaffian: f64,
    pub min_abs_det: f64,
    /// Index of the sample with the smallest |Pfaffian|.
    pub argmin: usize,
    /// Consecutive sample pairs (i, i+1) across which the Pfaffian changes sign.
    pub sign_changes: Vec<(usize, usize)>,
    pub tol: f64,
    pub nondegenerate: bool,
}

/// Pfaffian and determinant of a 2-form on each sample.
pub fn check_nondegenerate(omega: &FormExpression, samples: &[Vec<f64>], tol: f64) -> Result<NondegeneracyReport> {
    if omega.degree != 2 {
        return Err(LcsError::Degree("nondegeneracy needs a 2-form".into()));
    }
    if omega.domain.dim() % 2 == 1 {
        return Err(LcsError::DimensionMismatch("odd-dimensional domain".into()));
    }
    use rayon::prelude::*;
    let out: Vec<NondegeneracySample> = samples
        .par_iter()
        .map(|x| {
            let a = omega.evaluate(x)?.matrix();
            let pf = pfaffian(&a);
            Ok(NondegeneracySample { point: x.clone(), pfaffian: pf, abs_det: pf * pf })
        })
        .collect::<Result<_>>()?;
    let mut argmin = 0;
    for (i, s) in out.iter().enumerate() {
        if s.pfaffian.abs() < out[argmin].pfaffian.abs() {
            argmin = i;
        }
    }
    let sign_changes = out
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].pfaffian * w[1].pfaffian < 0.0)
        .map(|(i, _)| (i, i + 1))
        .collect();
    let min_abs_pfaffian = out.get(argmin).map(|s| s.pfaffian.abs()).unwrap_or(f64::INFINITY);
    Ok(NondegeneracyReport {
        min_abs_det: min_abs_pfaffian * min_abs_pfaffian,
        min_abs_pfaffian,
        argmin,
        sign_changes,
        tol,
        nondegenerate: min_abs_pfaffian > tol,
        samples: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::make_manifold;

    #[test]
    fn colex_rank_is_position() {
        for n in 1..=6 {
            for k in 0..=n {
                for (i, m) in subsets(n, k).iter().enumerate() {
                    assert_eq!(rank(*m), i);
                }
            }
        }
    }

    #[test]
    fn pfaffian_of_canonical_form() {
        let m = make_manifold(2, 0).unwrap().cotangent();
        let lam = FormExpression::one_form(
            m.clone(),
            &[
                ScalarField::coordinate(m.clone(), 2),
                ScalarField::coordinate(m.clone(), 3),
                ScalarField::constant(m.clone(), 0.0),
                ScalarField::constant(m.clone(), 0.0),
            ],
        )
        .unwrap();
        let w = lam.d().unwrap().evaluate(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = w.matrix();
        assert_eq!(pfaffian(&a), -1.0);
    }

    #[test]
    fn lichnerowicz_example_one() {
        let m = make_manifold(2, 0).unwrap();
        let f = FormExpression::function(&ScalarField::new(m.clone(), |x| Ok(x[0].sin())));
        let beta = FormExpression::dx(m.clone(), 1).unwrap();
        let v = lichnerowicz_d(&f, &beta).unwrap().coefficients(&[0.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn non_closed_lee_form_rejected() {
        let m = make_manifold(2, 0).unwrap();
        let beta = FormExpression::dx(m.clone(), 1)
            .unwrap()
            .scale_by(&ScalarField::new(m.clone(), |x| Ok(x[0].sin())))
            .unwrap();
        let f = FormExpression::function(&ScalarField::constant(m.clone(), 1.0));
        assert!(matches!(lichnerowicz_d(&f, &beta), Err(LcsError::NotClosed { .. })));
    }

    #[test]
    fn degree_bookkeeping() {
        let m = make_manifold(2, 0).unwrap();
        let a = FormExpression::dx(m.clone(), 0).unwrap();
        let b = FormExpression::dx(m.clone(), 1).unwrap();
        let ab = a.wedge(&b).unwrap();
        assert_eq!(ab.degree(), 2);
        assert!(ab.wedge(&a).is_err());
        assert!(ab.add(&a).is_err());
        let f = FormExpression::function(&ScalarField::constant(m.clone(), 1.0));
        assert!(interior_product(&VectorField::new(m.clone(), |_| Ok(vec![Jet2::constant(1.0); 2])), &f).is_err());
        assert_eq!(ab.evaluate(&[0.0, 0.0]).unwrap().at(&[0, 1]), 1.0);
        assert_eq!(b.wedge(&a).unwrap().evaluate(&[0.0, 0.0]).unwrap().at(&[0, 1]), -1.0);
    }
}
