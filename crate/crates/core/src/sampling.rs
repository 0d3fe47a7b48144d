//! Deterministic sample sets: Halton sequences and tensor grids.

use crate::chart::{ModelManifold, Point};
use std::f64::consts::TAU;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// `count` Halton points; circles span [0, 2π), lines span [−radius, radius].
pub fn halton_points(m: &ModelManifold, count: usize, radius: f64) -> Vec<Point> {
    (1..=count as u64)
        .map(|i| {
            (0..m.dim())
                .map(|d| {
                    let u = halton(i, PRIMES[d % PRIMES.len()]);
                    if m.is_circle(d) {
                        TAU * u
                    } else {
                        radius * (2.0 * u - 1.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Halton points on a cotangent bundle with fibers inside the ball of `radius`.
pub fn halton_ball_points(m: &ModelManifold, count: usize, radius: f64) -> Vec<Point> {
    let n = m.base_dim();
    halton_points(m, count * 4, radius)
        .into_iter()
        .filter(|x| x[n..2 * n].iter().map(|p| p * p).sum::<f64>() <= radius * radius)
        .take(count)
        .collect()
}

/// Uniform grid of `n` nodes per axis on a torus, starting at 0.
pub fn torus_grid(k: usize, n: usize) -> Vec<Point> {
    let h = TAU / n as f64;
    let total = n.pow(k as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; k];
            for v in x.iter_mut() {
                *v = (idx % n) as f64 * h;
                idx /= n;
            }
            x
        })
        .collect()
}

/// Log-spaced radii from `r_min` to `r_max` inclusive.
pub fn log_radii(r_min: f64, r_max: f64, count: usize) -> Vec<f64> {
    let (a, b) = (r_min.ln(), r_max.ln());
    (0..count)
        .map(|i| {
            if i + 1 == count {
                r_max
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Small deterministic generator (splitmix64) for reproducible sampling
/// inside library code.
#[derive(Clone, Debug)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_base_two() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grids() {
        let g = torus_grid(2, 4);
        assert_eq!(g.len(), 16);
        assert_eq!(g[5], vec![TAU / 4.0, TAU / 4.0]);
        let r = log_radii(1e-3, 16.0, 128);
        assert_eq!(r.len(), 128);
        assert!((r[0] - 1e-3).abs() < 1e-15);
        assert_eq!(r[127], 16.0);
    }

    #[test]
    fn ball_points_stay_inside() {
        let m = ModelManifold::torus(2).unwrap().cotangent();
        let pts = halton_ball_points(&m, 500, 4.0);
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|x| x[2] * x[2] + x[3] * x[3] <= 16.0));
    }
}
