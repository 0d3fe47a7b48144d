//! Second-order forward jets.
//!
//! A [`Jet2`] carries a value together with its gradient and Hessian with
//! respect to at most [`MAX_DIM`] seed variables. Every arithmetic operation
//! applies the chain rule exactly, so a field written with jet arithmetic
//! yields exact first and second derivatives at the evaluation point.
//!
//! Jets also record how many derivative orders are valid. Taking a partial
//! derivative lowers the order by one; mixing jets keeps the smaller order.
//!
//! ```
//! use lcs_core::jet::Jet2;
//!
//! let x = Jet2::variable(0.5, 0, 2);
//! let y = Jet2::variable(2.0, 1, 2);
//! let f = x.sin() * y;
//! assert_eq!(f.value(), 0.5f64.sin() * 2.0);
//! assert_eq!(f.grad(0), 0.5f64.cos() * 2.0);
//! assert_eq!(f.hess(0, 1), 0.5f64.cos());
//! ```

use crate::error::{LcsError, Result};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Largest number of seed variables a jet can track.
pub const MAX_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    value: f64,
    grad: [f64; MAX_DIM],
    hess: [[f64; MAX_DIM]; MAX_DIM],
    dim: u8,
    order: u8,
}

impl Default for Jet2 {
    fn default() -> Self {
        Jet2::constant(0.0)
    }
}

impl Jet2 {
    /// A constant. Constants carry no seed dimension and full order.
    pub fn constant(value: f64) -> Self {
        Jet2 {
            value,
            grad: [0.0; MAX_DIM],
            hess: [[0.0; MAX_DIM]; MAX_DIM],
            dim: 0,
            order: 2,
        }
    }

    /// The seed variable `index` out of `dim`, at `value`.
    pub fn variable(value: f64, index: usize, dim: usize) -> Self {
        assert!(dim <= MAX_DIM, "jet dimension {dim} exceeds {MAX_DIM}");
        assert!(index < dim);
        let mut j = Jet2::constant(value);
        j.dim = dim as u8;
        j.grad[index] = 1.0;
        j
    }

    /// Seeds every coordinate of `x` as an independent variable.
    pub fn seed(x: &[f64]) -> Vec<Jet2> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| Jet2::variable(v, i, x.len()))
            .collect()
    }

    /// Builds a jet from explicit parts. `order` says how many derivative
    /// orders are meaningful; invalid parts are zeroed.
    pub fn from_parts(value: f64, grad: &[f64], hess: Option<&[Vec<f64>]>, order: u8) -> Self {
        assert!(grad.len() <= MAX_DIM);
        let mut j = Jet2::constant(value);
        j.dim = grad.len() as u8;
        j.order = order.min(2);
        if j.order >= 1 {
            j.grad[..grad.len()].copy_from_slice(grad);
        }
        if j.order >= 2 {
            match hess {
                Some(h) => {
                    for (a, row) in h.iter().enumerate() {
                        for (b, &v) in row.iter().enumerate() {
                            j.hess[a][b] = v;
                        }
                    }
                }
                None => j.order = 1,
            }
        }
        j
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Number of valid derivative orders (0, 1 or 2).
    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn grad(&self, i: usize) -> f64 {
        self.grad[i]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hess[i][j]
    }

    pub fn gradient(&self, dim: usize) -> Vec<f64> {
        self.grad[..dim].to_vec()
    }

    pub fn hessian(&self, dim: usize) -> Vec<Vec<f64>> {
        (0..dim).map(|i| self.hess[i][..dim].to_vec()).collect()
    }

    /// Same derivatives, shifted value. Used when wrapping circle coordinates.
    pub fn with_value(mut self, value: f64) -> Self {
        self.value = value;
        self
    }

    /// Caps the order, zeroing what becomes invalid.
    pub fn truncate(mut self, order: u8) -> Self {
        if order < self.order {
            self.order = order;
            self.clear_invalid();
        }
        self
    }

    fn clear_invalid(&mut self) {
        if self.order < 2 {
            self.hess = [[0.0; MAX_DIM]; MAX_DIM];
        }
        if self.order < 1 {
            self.grad = [0.0; MAX_DIM];
        }
    }

    fn is_zero_constant(&self) -> bool {
        self.dim == 0 && self.value == 0.0 && self.order == 2
    }

    /// The jet of ∂f/∂x_k. Requires at least first-order information.
    pub fn partial(&self, k: usize) -> Result<Jet2> {
        if self.order == 0 {
            return Err(LcsError::InsufficientOrder { needed: 1, available: 0 });
        }
        let mut j = Jet2::constant(self.grad[k]);
        j.dim = self.dim;
        j.order = self.order - 1;
        if j.order >= 1 {
            j.grad = self.hess[k];
        }
        if self.dim == 0 {
            j.order = 2;
        }
        Ok(j)
    }

    /// Applies a scalar function given its value and first two derivatives at
    /// the current value.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Jet2 {
        let n = self.dim as usize;
        let mut out = Jet2::constant(f);
        out.dim = self.dim;
        out.order = self.order;
        if self.order >= 1 {
            for i in 0..n {
                out.grad[i] = df * self.grad[i];
            }
        }
        if self.order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    out.hess[i][j] = d2f * self.grad[i] * self.grad[j] + df * self.hess[i][j];
                }
            }
        }
        out
    }

    /// Chain rule for a function of several jets: `local` holds the value,
    /// gradient and Hessian of the outer function with respect to its inputs.
    pub fn compose(value: f64, grad: &[f64], hess: Option<&[Vec<f64>]>, inputs: &[Jet2]) -> Jet2 {
        let k = inputs.len();
        assert_eq!(grad.len(), k);
        let dim = inputs.iter().map(|j| j.dim).max().unwrap_or(0);
        let mut order = inputs.iter().map(|j| j.order).min().unwrap_or(2);
        if hess.is_none() {
            order = order.min(1);
        }
        let n = dim as usize;
        let mut out = Jet2::constant(value);
        out.dim = dim;
        out.order = order;
        if order >= 1 {
            for (a, u) in inputs.iter().enumerate() {
                if grad[a] == 0.0 {
                    continue;
                }
                for i in 0..n {
                    out.grad[i] += grad[a] * u.grad[i];
                }
            }
        }
        if order >= 2 {
            let h = hess.unwrap();
            for (a, ua) in inputs.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        out.hess[i][j] += grad[a] * ua.hess[i][j];
                    }
                }
                for (b, ub) in inputs.iter().enumerate() {
                    let c = h[a][b];
                    if c == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        for j in 0..n {
                            out.hess[i][j] += c * ua.grad[i] * ub.grad[j];
                        }
                    }
                }
            }
        }
        if dim == 0 {
            out.order = 2;
        }
        out
    }

    /// Treats `self` as a jet in the variables `inputs` and rewrites it in
    /// the variables the inputs are jets of.
    pub fn compose_jet(&self, inputs: &[Jet2]) -> Jet2 {
        let k = self.dim as usize;
        if k == 0 {
            return *self;
        }
        assert!(inputs.len() >= k);
        let dim = inputs[..k].iter().map(|j| j.dim).max().unwrap_or(0);
        let order = self.order.min(Jet2::min_order(&inputs[..k]));
        let n = dim as usize;
        let mut out = Jet2::constant(self.value);
        out.dim = dim;
        out.order = order;
        if order >= 1 {
            for (a, u) in inputs[..k].iter().enumerate() {
                let c = self.grad[a];
                if c == 0.0 {
                    continue;
                }
                for i in 0..n {
                    out.grad[i] += c * u.grad[i];
                }
            }
        }
        if order >= 2 {
            for (a, ua) in inputs[..k].iter().enumerate() {
                let c = self.grad[a];
                if c != 0.0 {
                    for i in 0..n {
                        for j in 0..n {
                            out.hess[i][j] += c * ua.hess[i][j];
                        }
                    }
                }
                for (b, ub) in inputs[..k].iter().enumerate() {
                    let c = self.hess[a][b];
                    if c == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        for j in 0..n {
                            out.hess[i][j] += c * ua.grad[i] * ub.grad[j];
                        }
                    }
                }
            }
        }
        if dim == 0 {
            out.order = 2;
        }
        out
    }

    pub fn exp(&self) -> Jet2 {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn sin(&self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn tan(&self) -> Jet2 {
        let t = self.value.tan();
        let d = 1.0 + t * t;
        self.chain(t, d, 2.0 * t * d)
    }

    pub fn atan(&self) -> Jet2 {
        let x = self.value;
        let d = 1.0 / (1.0 + x * x);
        self.chain(x.atan(), d, -2.0 * x * d * d)
    }

    pub fn tanh(&self) -> Jet2 {
        let t = self.value.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    pub fn ln(&self) -> Result<Jet2> {
        let x = self.value;
        if !(x > 0.0) {
            return Err(LcsError::domain("ln", x));
        }
        Ok(self.chain(x.ln(), 1.0 / x, -1.0 / (x * x)))
    }

    pub fn sqrt(&self) -> Result<Jet2> {
        let x = self.value;
        if !(x > 0.0) {
            return Err(LcsError::domain("sqrt", x));
        }
        let s = x.sqrt();
        Ok(self.chain(s, 0.5 / s, -0.25 / (s * x)))
    }

    pub fn powi(&self, n: i32) -> Jet2 {
        let x = self.value;
        match n {
            0 => Jet2::constant(1.0),
            1 => *self,
            _ => {
                let nf = n as f64;
                self.chain(x.powi(n), nf * x.powi(n - 1), nf * (nf - 1.0) * x.powi(n - 2))
            }
        }
    }

    /// Real power. Integral exponents accept any base; others need a positive one.
    pub fn powf(&self, a: f64) -> Result<Jet2> {
        if a.fract() == 0.0 && a.abs() < i32::MAX as f64 {
            return Ok(self.powi(a as i32));
        }
        let x = self.value;
        if !(x > 0.0) {
            return Err(LcsError::domain("pow", x));
        }
        Ok(self.chain(x.powf(a), a * x.powf(a - 1.0), a * (a - 1.0) * x.powf(a - 2.0)))
    }

    /// `self ^ other` with both sides jets; the base must be positive.
    pub fn pow(&self, other: &Jet2) -> Result<Jet2> {
        if other.dim == 0 && other.order == 2 {
            return self.powf(other.value);
        }
        Ok((*other * self.ln()?).exp())
    }

    pub fn recip(&self) -> Jet2 {
        let x = self.value;
        self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    /// Smallest valid order among the inputs.
    pub fn min_order(jets: &[Jet2]) -> u8 {
        jets.iter().map(|j| j.order).min().unwrap_or(2)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(mut self) -> Jet2 {
        self.value = -self.value;
        let n = self.dim as usize;
        for i in 0..n {
            self.grad[i] = -self.grad[i];
            for j in 0..n {
                self.hess[i][j] = -self.hess[i][j];
            }
        }
        self
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: Jet2) -> Jet2 {
        self += rhs;
        self
    }
}

impl AddAssign for Jet2 {
    fn add_assign(&mut self, rhs: Jet2) {
        self.value += rhs.value;
        let dim = self.dim.max(rhs.dim);
        let n = dim as usize;
        self.dim = dim;
        self.order = self.order.min(rhs.order);
        for i in 0..n {
            self.grad[i] += rhs.grad[i];
            for j in 0..n {
                self.hess[i][j] += rhs.hess[i][j];
            }
        }
        self.clear_invalid();
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self + (-rhs)
    }
}

impl SubAssign for Jet2 {
    fn sub_assign(&mut self, rhs: Jet2) {
        *self += -rhs;
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        if self.is_zero_constant() || rhs.is_zero_constant() {
            return Jet2::constant(0.0);
        }
        let dim = self.dim.max(rhs.dim);
        let n = dim as usize;
        let (a, b) = (self.value, rhs.value);
        let mut out = Jet2::constant(a * b);
        out.dim = dim;
        out.order = self.order.min(rhs.order);
        if out.order >= 1 {
            for i in 0..n {
                out.grad[i] = a * rhs.grad[i] + b * self.grad[i];
            }
        }
        if out.order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    out.hess[i][j] = a * rhs.hess[i][j]
                        + b * self.hess[i][j]
                        + self.grad[i] * rhs.grad[j]
                        + rhs.grad[i] * self.grad[j];
                }
            }
        }
        out
    }
}

impl MulAssign for Jet2 {
    fn mul_assign(&mut self, rhs: Jet2) {
        *self = *self * rhs;
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        self * rhs.recip()
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: f64) -> Jet2 {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Jet2 {
    type Output = Jet2;
    fn sub(mut self, rhs: f64) -> Jet2 {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(mut self, rhs: f64) -> Jet2 {
        if rhs == 0.0 {
            return Jet2::constant(0.0);
        }
        self.value *= rhs;
        let n = self.dim as usize;
        for i in 0..n {
            self.grad[i] *= rhs;
            for j in 0..n {
                self.hess[i][j] *= rhs;
            }
        }
        self
    }
}

impl Div<f64> for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: f64) -> Jet2 {
        self * (1.0 / rhs)
    }
}

impl Add<Jet2> for f64 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        rhs + self
    }
}

impl Sub<Jet2> for f64 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        (-rhs) + self
    }
}

impl Mul<Jet2> for f64 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        rhs * self
    }
}

impl Div<Jet2> for f64 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        rhs.recip() * self
    }
}

impl std::iter::Sum for Jet2 {
    fn sum<I: Iterator<Item = Jet2>>(iter: I) -> Jet2 {
        iter.fold(Jet2::constant(0.0), |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[Jet2]) -> Jet2, x: &[f64]) {
        let n = x.len();
        let j = f(&Jet2::seed(x));
        let h = 1e-4;
        let scalar = |y: &[f64]| f(&y.iter().map(|&v| Jet2::constant(v)).collect::<Vec<_>>()).value();
        for i in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (scalar(&xp) - scalar(&xm)) / (2.0 * h);
            let scale = fd.abs().max(1.0);
            assert!((fd - j.grad(i)).abs() / scale < 1e-6, "grad {i}: {fd} vs {}", j.grad(i));
            let gp = f(&Jet2::seed(&xp));
            let gm = f(&Jet2::seed(&xm));
            for k in 0..n {
                let fd2 = (gp.grad(k) - gm.grad(k)) / (2.0 * h);
                let scale = fd2.abs().max(1.0);
                assert!((fd2 - j.hess(i, k)).abs() / scale < 1e-6, "hess {i}{k}");
            }
        }
    }

    #[test]
    fn sine_at_zero() {
        let j = Jet2::variable(0.0, 0, 1).sin();
        assert_eq!(j.value(), 0.0);
        assert_eq!(j.grad(0), 1.0);
        assert_eq!(j.hess(0, 0), 0.0);
    }

    #[test]
    fn exp_times_fiber() {
        let x = Jet2::seed(&[0.0, 2.0]);
        let f = x[0].exp() * x[1];
        assert_eq!(f.value(), 2.0);
        assert_eq!(f.gradient(2), vec![2.0, 1.0]);
    }

    #[test]
    fn elementary_functions_match_finite_differences() {
        let f = |x: &[Jet2]| {
            (x[0].sin() * x[1].exp() + x[2].powi(3) - x[0] / (x[1] * x[1] + 1.0)).atan()
                + (x[2] * x[2] + 1.0).ln().unwrap()
                + (x[0] * x[0] + 2.0).sqrt().unwrap() * x[1].cos()
                + (x[1] * x[1] + 0.5).powf(1.5).unwrap()
        };
        fd_check(f, &[0.3, -0.7, 1.1]);
        fd_check(f, &[-1.2, 0.4, 0.2]);
    }

    #[test]
    fn logarithm_of_nonpositive_is_a_domain_error() {
        let x = Jet2::variable(-1.0, 0, 1);
        assert!(matches!(x.ln(), Err(LcsError::Domain { .. })));
        assert!(x.powf(0.5).is_err());
        assert!(x.powf(2.0).is_ok());
    }

    #[test]
    fn partial_lowers_order() {
        let x = Jet2::seed(&[0.4, 0.9]);
        let f = x[0].sin() * x[1];
        let fx = f.partial(0).unwrap();
        assert_eq!(fx.order(), 1);
        assert_eq!(fx.value(), 0.4f64.cos() * 0.9);
        assert_eq!(fx.grad(1), 0.4f64.cos());
        let fxx = fx.partial(0).unwrap();
        assert_eq!(fxx.order(), 0);
        assert!(fxx.partial(1).is_err());
    }

    #[test]
    fn zero_constant_product_keeps_order() {
        let x = Jet2::seed(&[0.4]);
        let low = x[0].sin().partial(0).unwrap().partial(0).unwrap();
        assert_eq!(low.order(), 0);
        assert_eq!((Jet2::constant(0.0) * low).order(), 2);
        assert_eq!((low * Jet2::constant(2.0)).order(), 0);
    }

    #[test]
    fn compose_matches_direct_evaluation() {
        let x = Jet2::seed(&[0.3, 1.7]);
        let u = [x[0] * x[1], x[0].sin()];
        let direct = (u[0] * u[1]).exp();
        let (a, b) = (u[0].value(), u[1].value());
        let e = (a * b).exp();
        let grad = [b * e, a * e];
        let hess = vec![vec![b * b * e, e + a * b * e], vec![e + a * b * e, a * a * e]];
        let composed = Jet2::compose(e, &grad, Some(&hess), &u);
        for i in 0..2 {
            assert!((direct.grad(i) - composed.grad(i)).abs() < 1e-12);
            for j in 0..2 {
                assert!((direct.hess(i, j) - composed.hess(i, j)).abs() < 1e-12);
            }
        }
    }
}
