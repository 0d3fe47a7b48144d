//! Radial extensions: given an exact Lagrangian L and a positive h near L,
//! build g on T*M with g = h near L, g = 1 far out and d ln g(Z) < 1.
//!
//! Fields live on a polar grid over each base node: a direction set in the
//! fiber and log-spaced radii. Along a ray the Liouville field is the Euler
//! field r∂_r, so d ln g(Z) is the slope of ln g against ln r.

use crate::chart::{wrap_angle, wrap_diff, ModelManifold, Point, ScalarField};
use crate::chords::{classify_values, mvt_obstruction_report_with, ChordOptions, ExactLagrangian, MvtReport};
use crate::error::{LcsError, Result};
use crate::jet::Jet2;
use crate::lcs::StructureRef;
use crate::sampling::{log_radii, torus_grid};
use crate::tolerances;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

/// C¹ step: 0 for s ≤ 0, 1 for s ≥ 1.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// The polar grid shared by radial fields.
#[derive(Clone, Debug, Serialize)]
pub struct RadialGrid {
    #[serde(skip)]
    pub base: ModelManifold,
    pub base_per_axis: usize,
    pub base_nodes: Vec<Point>,
    pub directions: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
}

impl RadialGrid {
    /// `directions` is ignored for 1-dimensional fibers, which use ±1.
    pub fn new(base: &ModelManifold, base_per_axis: usize, directions: usize, radii: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if !base.is_torus() {
            return Err(LcsError::Precondition("radial grids need a torus base".into()));
        }
        if !(r_min > 0.0 && r_max > r_min) || radii < 4 {
            return Err(LcsError::Precondition(format!("bad radius range [{r_min}, {r_max}] with {radii} shells")));
        }
        let n = base.dim();
        let dirs = match n {
            1 => vec![vec![1.0], vec![-1.0]],
            2 => (0..directions)
                .map(|k| {
                    let a = TAU * k as f64 / directions as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            _ => return Err(LcsError::Precondition("radial grids support base dimension 1 or 2".into())),
        };
        Ok(RadialGrid {
            base: base.clone(),
            base_per_axis,
            base_nodes: torus_grid(n, base_per_axis),
            directions: dirs,
            radii: log_radii(r_min, r_max, radii),
        })
    }

    pub fn n(&self) -> usize {
        self.base.dim()
    }

    pub fn len(&self) -> usize {
        self.base_nodes.len() * self.directions.len() * self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rays(&self) -> usize {
        self.base_nodes.len() * self.directions.len()
    }

    pub fn index(&self, b: usize, d: usize, k: usize) -> usize {
        (b * self.directions.len() + d) * self.radii.len() + k
    }

    pub fn point(&self, b: usize, d: usize, k: usize) -> Point {
        let mut x = self.base_nodes[b].clone();
        x.extend(self.directions[d].iter().map(|w| w * self.radii[k]));
        x
    }

    fn log_step(&self) -> f64 {
        let r = &self.radii;
        (r[r.len() - 1].ln() - r[0].ln()) / (r.len() - 1) as f64
    }
}

/// Positive values on a polar grid.
#[derive(Clone, Debug)]
pub struct RadialField {
    pub grid: Arc<RadialGrid>,
    pub values: Vec<f64>,
}

#[derive(Serialize)]
struct RadialFieldJson<'a> {
    base_per_axis: usize,
    directions: &'a [Vec<f64>],
    radii: &'a [f64],
    values: &'a [f64],
}

impl RadialField {
    pub fn constant(grid: Arc<RadialGrid>, c: f64) -> Self {
        let n = grid.len();
        RadialField { grid, values: vec![c; n] }
    }

    pub fn at(&self, b: usize, d: usize, k: usize) -> f64 {
        self.values[self.grid.index(b, d, k)]
    }

    pub fn ray(&self, b: usize, d: usize) -> &[f64] {
        let i = self.grid.index(b, d, 0);
        &self.values[i..i + self.grid.radii.len()]
    }

    /// Radial log-slope at every node: centered differences inside, one-sided at the ends.
    pub fn log_slopes(&self) -> Vec<f64> {
        let g = &self.grid;
        let nr = g.radii.len();
        let lr: Vec<f64> = g.radii.iter().map(|r| r.ln()).collect();
        self.values
            .par_chunks(nr)
            .flat_map_iter(|ray| {
                let lr = &lr;
                (0..nr).map(move |k| {
                    let (a, b) = if k == 0 { (0, 1) } else if k + 1 == nr { (nr - 2, nr - 1) } else { (k - 1, k + 1) };
                    (ray[b].ln() - ray[a].ln()) / (lr[b] - lr[a])
                })
            })
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(RadialFieldJson {
            base_per_axis: self.grid.base_per_axis,
            directions: &self.grid.directions,
            radii: &self.grid.radii,
            values: &self.values,
        })
        .unwrap_or(serde_json::Value::Null)
    }

    /// One row per node: base coordinates, direction, radius, value.
    pub fn to_csv(&self) -> Result<String> {
        let g = &self.grid;
        let n = g.n();
        let mut w = csv::Writer::from_writer(vec![]);
        let mut header: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
        header.extend((0..n).map(|i| format!("w{i}")));
        header.extend(["r".to_string(), "value".to_string()]);
        let err = |e: csv::Error| LcsError::Numerical(format!("csv: {e}"));
        w.write_record(&header).map_err(err)?;
        for b in 0..g.base_nodes.len() {
            for d in 0..g.directions.len() {
                for k in 0..g.radii.len() {
                    let mut row: Vec<String> = g.base_nodes[b].iter().chain(&g.directions[d]).map(|v| v.to_string()).collect();
                    row.push(g.radii[k].to_string());
                    row.push(self.at(b, d, k).to_string());
                    w.write_record(&row).map_err(err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| LcsError::Numerical(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| LcsError::Numerical(e.to_string()))
    }

    /// C¹ interpolant on T*M: tensor Catmull–Rom in (base, angle, ln r),
    /// the innermost shell below r_min and 1 beyond r_max.
    pub fn to_scalar_field(&self, s: &StructureRef) -> Result<ScalarField> {
        if s.base() != &self.grid.base {
            return Err(LcsError::DimensionMismatch("structure base differs from the field grid".into()));
        }
        let f = self.clone();
        Ok(ScalarField::new(s.total().clone(), move |x| {
            let v: Vec<f64> = x.iter().map(|j| j.value()).collect();
            let (val, grad) = f.interpolate(&v);
            Ok(Jet2::from_parts(val, &grad, None, 1).compose_jet(x))
        }))
    }

    /// Value and gradient in (q, p) coordinates.
    pub fn interpolate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let g = &self.grid;
        let n = g.n();
        let p = &x[n..];
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut grad = vec![0.0; 2 * n];
        if r >= g.radii[g.radii.len() - 1] {
            return (1.0, grad);
        }
        let nb = g.base_per_axis;
        let hb = TAU / nb as f64;
        let lr0 = g.radii[0].ln();
        let hl = g.log_step();
        let nr = g.radii.len();
        let (sl, inside) = if r <= g.radii[0] { (0.0, false) } else { ((r.ln() - lr0) / hl, true) };
        let ir = (sl.floor() as isize).clamp(0, nr as isize - 2);
        let fr = sl - ir as f64;
        let (wr, dwr) = catmull_rom(fr);
        let rad_idx = |o: isize| -> usize { (ir + o - 1).clamp(0, nr as isize - 1) as usize };

        let mut base_axes = vec![];
        for i in 0..n {
            let s = wrap_angle(x[i]) / hb;
            let i0 = s.floor() as isize;
            base_axes.push((i0, s - i0 as f64));
        }
        let dir_axis: Option<(isize, f64)> = if n == 2 {
            let nd = g.directions.len();
            let a = wrap_angle(p[1].atan2(p[0]));
            let s = a / (TAU / nd as f64);
            let i0 = s.floor() as isize;
            Some((i0, s - i0 as f64))
        } else {
            None
        };
        let d1 = if n == 1 { if p[0] >= 0.0 { 0 } else { 1 } } else { 0 };
        let base_index = |offs: &[isize]| -> usize {
            let mut idx = 0usize;
            for i in (0..n).rev() {
                let k = (base_axes[i].0 + offs[i] - 1).rem_euclid(nb as isize) as usize;
                idx = idx * nb + k;
            }
            idx
        };

        let mut val = 0.0;
        let mut dbase = vec![0.0; n];
        let mut ddir = 0.0;
        let mut dlr = 0.0;
        let dir_count = if n == 2 { 4 } else { 1 };
        let base_combos = 4usize.pow(n as u32);
        let bw: Vec<([f64; 4], [f64; 4])> = base_axes.iter().map(|a| catmull_rom(a.1)).collect();
        let dw = dir_axis.map(|a| catmull_rom(a.1));
        for combo in 0..base_combos {
            let offs: Vec<isize> = (0..n).map(|i| ((combo / 4usize.pow(i as u32)) % 4) as isize).collect();
            let b = base_index(&offs);
            let wb: f64 = (0..n).map(|i| bw[i].0[offs[i] as usize]).product();
            let dwb: Vec<f64> = (0..n)
                .map(|j| (0..n).map(|i| if i == j { bw[i].1[offs[i] as usize] } else { bw[i].0[offs[i] as usize] }).product())
                .collect();
            for od in 0..dir_count {
                let (d, wd, dwd) = match (dir_axis, dw) {
                    (Some((i0, _)), Some((w, dw))) => {
                        let nd = g.directions.len() as isize;
                        ((i0 + od as isize - 1).rem_euclid(nd) as usize, w[od], dw[od])
                    }
                    _ => (d1, 1.0, 0.0),
                };
                for o in 0..4 {
                    let v = self.at(b, d, rad_idx(o as isize));
                    val += wb * wd * wr[o] * v;
                    for j in 0..n {
                        dbase[j] += dwb[j] * wd * wr[o] * v;
                    }
                    ddir += wb * dwd * wr[o] * v;
                    dlr += wb * wd * dwr[o] * v;
                }
            }
        }
        for j in 0..n {
            grad[j] = dbase[j] / hb;
        }
        let dlnr = if inside { dlr / hl } else { 0.0 };
        if r > 0.0 {
            for i in 0..n {
                grad[n + i] += dlnr * p[i] / (r * r);
            }
            if n == 2 {
                let da = ddir / (TAU / g.directions.len() as f64);
                grad[n] += da * (-p[1] / (r * r));
                grad[n + 1] += da * (p[0] / (r * r));
            }
        }
        (val, grad)
    }
}

/// Weights and their derivatives for nodes at offsets −1, 0, 1, 2.
fn catmull_rom(s: f64) -> ([f64; 4], [f64; 4]) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        [
            0.5 * (-s3 + 2.0 * s2 - s),
            0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
            0.5 * (-3.0 * s3 + 4.0 * s2 + s),
            0.5 * (s3 - s2),
        ],
        [
            0.5 * (-3.0 * s2 + 4.0 * s - 1.0),
            0.5 * (9.0 * s2 - 10.0 * s),
            0.5 * (-9.0 * s2 + 8.0 * s + 1.0),
            0.5 * (3.0 * s2 - 2.0 * s),
        ],
    )
}


/// A Lagrangian point in the fiber over a base node.
#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub param: Vec<f64>,
    pub fiber: Vec<f64>,
    pub length: f64,
}

/// The 0-section grid and, over each base node, the star of branches.
#[derive(Clone, Debug, Serialize)]
pub struct CoreSkeleton {
    pub base_nodes: Vec<Point>,
    pub stars: Vec<Vec<Branch>>,
    pub unresolved_nodes: usize,
}

impl CoreSkeleton {
    pub fn branch_count(&self) -> usize {
        self.stars.iter().map(|s| s.len()).sum()
    }

    pub fn max_length(&self) -> f64 {
        self.stars.iter().flatten().map(|b| b.length).fold(0.0, f64::max)
    }
}

/// Finds L ∩ T*_qM for every base node q by Newton on base(u) = q from
/// parameter-grid seeds.
pub fn build_core(e: &ExactLagrangian, base_nodes: &[Point], base_per_axis: usize, param_per_axis: usize) -> Result<CoreSkeleton> {
    let emb = &e.embedding;
    let n = emb.n();
    let src = emb.source();
    if !src.is_torus() || !emb.structure().base().is_torus() {
        return Err(LcsError::Precondition("core skeletons need torus L and M".into()));
    }
    let params = torus_grid(n, param_per_axis);
    let map = emb.map();
    let samples: Vec<(Point, f64)> = params
        .par_iter()
        .map(|u| {
            let j = map.jacobian(u)?;
            Ok((map.eval(u)?, j.rows(0, n).into_owned().norm()))
        })
        .collect::<Result<_>>()?;
    let speed = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let hb = TAU / base_per_axis as f64;
    let reach = ((1.5 * speed * TAU / param_per_axis as f64) / hb).ceil() as isize + 1;
    let span = (2 * reach + 1) as usize;
    let mut seeds: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, (x, _)) in samples.iter().enumerate() {
        let centre: Vec<isize> = (0..n).map(|a| (wrap_angle(x[a]) / hb).round() as isize).collect();
        for combo in 0..span.pow(n as u32) {
            let mut b = 0usize;
            for a in (0..n).rev() {
                let o = ((combo / span.pow(a as u32)) % span) as isize - reach;
                b = b * base_per_axis + (centre[a] + o).rem_euclid(base_per_axis as isize) as usize;
            }
            seeds.entry(b).or_default().push(i);
        }
    }
    let rows: Vec<(Vec<Branch>, bool)> = (0..base_nodes.len())
        .into_par_iter()
        .map(|b| {
            let q = &base_nodes[b];
            let mine = seeds.get(&b).map(|v| v.as_slice()).unwrap_or(&[]);
            let mut found: Vec<Branch> = vec![];
            let mut failures = 0;
            for &i in mine {
                let mut u = params[i].clone();
                let mut ok = false;
                for _ in 0..50 {
                    let x = map.eval(&u)?;
                    let r: Vec<f64> = (0..n).map(|a| wrap_diff(x[a] - q[a])).collect();
                    if r.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-13 {
                        ok = true;
                        break;
                    }
                    let j = map.jacobian(&u)?.view((0, 0), (n, n)).into_owned();
                    match j.lu().solve(&DVector::from_column_slice(&r)) {
                        Some(step) => {
                            let size = step.amax();
                            let damp = if size > 0.5 { 0.5 / size } else { 1.0 };
                            for a in 0..n {
                                u[a] -= damp * step[a];
                            }
                        }
                        None => break,
                    }
                }
                if !ok {
                    failures += 1;
                    continue;
                }
                let u = src.normalized(&u);
                if found.iter().any(|f| src.distance(&f.param, &u) < tolerances::CHORD_DEDUP) {
                    continue;
                }
                let x = map.eval(&u)?;
                let fiber = x[n..].to_vec();
                let length = fiber.iter().map(|v| v * v).sum::<f64>().sqrt();
                found.push(Branch { param: u, fiber, length });
            }
            found.sort_by(|a, b| a.length.total_cmp(&b.length));
            Ok((found, !mine.is_empty() && failures == mine.len()))
        })
        .collect::<Result<_>>()?;
    Ok(CoreSkeleton {
        base_nodes: base_nodes.to_vec(),
        unresolved_nodes: rows.iter().filter(|r| r.1).count(),
        stars: rows.into_iter().map(|r| r.0).collect(),
    })
}

/// What a grid node of a patch is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Anchor {
    Outside,
    ZeroSection,
    Branch(usize),
}

/// Values on part of a polar grid (NaN elsewhere).
#[derive(Clone, Debug)]
pub struct Patch {
    pub values: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

impl Patch {
    fn from_rays(len: usize, nr: usize, rays: Vec<(Vec<f64>, Vec<Anchor>)>) -> Self {
        let mut p = Patch { values: vec![f64::NAN; len], anchors: vec![Anchor::Outside; len] };
        for (ray, (v, a)) in rays.into_iter().enumerate() {
            p.values[ray * nr..(ray + 1) * nr].copy_from_slice(&v);
            p.anchors[ray * nr..(ray + 1) * nr].copy_from_slice(&a);
        }
        p
    }

    pub fn defined(&self, i: usize) -> bool {
        !self.values[i].is_nan()
    }
}

fn fiber_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nearest_branch(star: &[Branch], p: &[f64], w: f64) -> Option<usize> {
    star.iter()
        .enumerate()
        .map(|(j, b)| (j, fiber_distance(&b.fiber, p)))
        .filter(|(_, d)| *d <= w)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|x| x.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct CollarOptions {
    /// Fiber radius of the tube around L.
    pub width: f64,
    /// Radius of the collar around the 0-section.
    pub zero_width: f64,
}

/// h on the nodes within `width` of L in their fiber.
pub fn lagrangian_patch(h: &ScalarField, skeleton: &CoreSkeleton, grid: &RadialGrid, c: &CollarOptions) -> Result<Patch> {
    let nr = grid.radii.len();
    let nd = grid.directions.len();
    let rays = (0..grid.rays())
        .into_par_iter()
        .map(|ray| {
            let (b, d) = (ray / nd, ray % nd);
            let mut vals = vec![f64::NAN; nr];
            let mut anc = vec![Anchor::Outside; nr];
            for k in 0..nr {
                let p: Vec<f64> = grid.directions[d].iter().map(|w| w * grid.radii[k]).collect();
                if let Some(j) = nearest_branch(&skeleton.stars[b], &p, c.width) {
                    vals[k] = h.value(&grid.point(b, d, k))?;
                    anc[k] = Anchor::Branch(j);
                }
            }
            Ok((vals, anc))
        })
        .collect::<Result<_>>()?;
    Ok(Patch::from_rays(grid.len(), nr, rays))
}

/// Collar of the 0-section: max h away from L ∩ M, blended into h within
/// twice the tube width of branches that reach into the collar.
pub fn near_zero_extension(h: &ScalarField, skeleton: &CoreSkeleton, grid: &RadialGrid, c: &CollarOptions, max_h: f64) -> Result<Patch> {
    let nr = grid.radii.len();
    let nd = grid.directions.len();
    let rays = (0..grid.rays())
        .into_par_iter()
        .map(|ray| {
            let (b, d) = (ray / nd, ray % nd);
            let mut vals = vec![f64::NAN; nr];
            let mut anc = vec![Anchor::Outside; nr];
            for k in 0..nr {
                if grid.radii[k] > c.zero_width {
                    break;
                }
                let p: Vec<f64> = grid.directions[d].iter().map(|w| w * grid.radii[k]).collect();
                let s = skeleton.stars[b]
                    .iter()
                    .map(|br| 1.0 - smoothstep((fiber_distance(&br.fiber, &p) - c.width) / c.width))
                    .fold(0.0, f64::max);
                vals[k] = if s > 0.0 { s * h.value(&grid.point(b, d, k))? + (1.0 - s) * max_h } else { max_h };
                anc[k] = Anchor::ZeroSection;
            }
            Ok((vals, anc))
        })
        .collect::<Result<_>>()?;
    Ok(Patch::from_rays(grid.len(), nr, rays))
}

/// Slope of the log-linear interpolation between (l′, v₀) and (l, v₁).
pub fn log_linear_slope(v0: f64, v1: f64, l_prime: f64, l: f64) -> Result<f64> {
    if !(v0 > 0.0 && v1 > 0.0) {
        return Err(LcsError::Precondition(format!("endpoint values must be positive, got {v0} and {v1}")));
    }
    if !(l > l_prime && l_prime > 0.0) {
        return Err(LcsError::Precondition(format!("need 0 < l' < l, got l' = {l_prime}, l = {l}")));
    }
    Ok((v1.ln() - v0.ln()) / (l / l_prime).ln())
}

/// One interpolated gap along a ray, from the patch at l′ to the patch at l.
#[derive(Clone, Debug, Serialize)]
pub struct RaySegment {
    pub base: usize,
    pub direction: usize,
    pub l_prime: f64,
    pub l: f64,
    pub v_start: f64,
    pub v_end: f64,
    pub slope: f64,
    pub from: Anchor,
    pub to: Anchor,
}

/// Merges the patches (L first) and fills every gap along each ray
/// log-linearly. Past the last patch node the value is held constant.
pub fn radial_log_interpolation(
    zero: &Patch,
    lag: &Patch,
    skeleton: &CoreSkeleton,
    grid: &Arc<RadialGrid>,
    h_at_branches: &[Vec<f64>],
    band: f64,
) -> Result<(RadialField, Vec<RaySegment>)> {
    let nr = grid.radii.len();
    let nd = grid.directions.len();
    let lr: Vec<f64> = grid.radii.iter().map(|r| r.ln()).collect();
    let rays: Vec<(Vec<f64>, Vec<RaySegment>)> = (0..grid.rays())
        .into_par_iter()
        .map(|ray| {
            let (b, d) = (ray / nd, ray % nd);
            let off = ray * nr;
            let mut v = vec![f64::NAN; nr];
            let mut anc = vec![Anchor::Outside; nr];
            for k in 0..nr {
                if lag.defined(off + k) {
                    v[k] = lag.values[off + k];
                    anc[k] = lag.anchors[off + k];
                } else if zero.defined(off + k) {
                    v[k] = zero.values[off + k];
                    anc[k] = zero.anchors[off + k];
                }
            }
            let mut segs = vec![];
            let mut last: Option<usize> = None;
            for k in 0..nr {
                if v[k].is_nan() {
                    continue;
                }
                if let Some(k0) = last {
                    if k > k0 + 1 {
                        let slope = (v[k].ln() - v[k0].ln()) / (lr[k] - lr[k0]);
                        let seg = RaySegment {
                            base: b,
                            direction: d,
                            l_prime: grid.radii[k0],
                            l: grid.radii[k],
                            v_start: v[k0],
                            v_end: v[k],
                            slope,
                            from: anc[k0],
                            to: anc[k],
                        };
                        if slope >= 1.0 {
                            return Err(reject_segment(&seg, skeleton, grid, h_at_branches, band));
                        }
                        for j in k0 + 1..k {
                            v[j] = (v[k0].ln() + slope * (lr[j] - lr[k0])).exp();
                        }
                        segs.push(seg);
                    }
                }
                last = Some(k);
            }
            match last {
                Some(k0) => {
                    let last_value = v[k0];
                    v[k0 + 1..].iter_mut().for_each(|x| *x = last_value)
                }
                None => {
                    return Err(LcsError::Precondition(format!(
                        "ray ({b}, {d}) never meets the 0-section collar; r_min must lie inside it"
                    )))
                }
            }
            Ok((v, segs))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(grid.len());
    let mut segments = vec![];
    for (v, s) in rays {
        values.extend(v);
        segments.extend(s);
    }
    Ok((RadialField { grid: grid.clone(), values }, segments))
}

fn reject_segment(seg: &RaySegment, skeleton: &CoreSkeleton, grid: &RadialGrid, hb: &[Vec<f64>], band: f64) -> LcsError {
    let q = &grid.base_nodes[seg.base];
    let w = &grid.directions[seg.direction];
    if let (Anchor::Branch(i), Anchor::Branch(j)) = (seg.from, seg.to) {
        let (a, b) = (&skeleton.stars[seg.base][i], &skeleton.stars[seg.base][j]);
        let cos = a.fiber.iter().zip(&b.fiber).map(|(x, y)| x * y).sum::<f64>() / (a.length * b.length);
        if cos > 1.0 - 1e-9 {
            let t = b.length / a.length;
            let (defect, _, _, ratio) = classify_values(t, hb[seg.base][i], hb[seg.base][j], band);
            let ratio = ratio.unwrap_or(f64::NAN);
            if ratio >= 1.0 - band {
                return LcsError::Rejected(format!(
                    "MVT-obstructed chord over base {q:?}: from fiber {:?} to {:?}, t = {t:.9}, ratio = {ratio:.9}, defect = {defect:.3e}",
                    a.fiber, b.fiber
                ));
            }
            return LcsError::Rejected(format!(
                "collar too wide: gap slope {:.6} >= 1 on ray over {q:?} direction {w:?} between l' = {:.6} and l = {:.6}; the chord t = {t:.6} only has ratio {ratio:.6}, so shrink the collar",
                seg.slope, seg.l_prime, seg.l
            ));
        }
    }
    LcsError::Rejected(format!(
        "collar too wide: gap slope {:.6} >= 1 on ray over {q:?} direction {w:?} between l' = {:.6} and l = {:.6} ({:?} to {:?})",
        seg.slope, seg.l_prime, seg.l, seg.from, seg.to
    ))
}

/// Convolution of F with the (1 − ‖o‖²/k²)³ bump over grid
/// indices (base, direction for 2-dimensional fibers, radius), normalized
/// to unit mass. Base and angle wrap; the radius axis is padded by
/// log-linear extrapolation.
pub fn mollify(f: &RadialField, kernel_radius: usize) -> Result<RadialField> {
    if kernel_radius < 2 {
        return Err(LcsError::Precondition("kernel radius must be at least 2 grid steps".into()));
    }
    let g = &f.grid;
    let n = g.n();
    let nb = g.base_per_axis as isize;
    let nd = g.directions.len();
    let nr = g.radii.len();
    let k = kernel_radius as isize;
    let axes = n + usize::from(n == 2) + 1;
    let span = (2 * k + 1) as usize;
    let mut offsets: Vec<(Vec<isize>, f64)> = vec![];
    for combo in 0..span.pow(axes as u32) {
        let o: Vec<isize> = (0..axes).map(|a| ((combo / span.pow(a as u32)) % span) as isize - k).collect();
        let r2 = o.iter().map(|v| (v * v) as f64).sum::<f64>() / (k * k) as f64;
        if r2 < 1.0 {
            offsets.push((o, (1.0 - r2).powi(3)));
        }
    }
    let mass: f64 = offsets.iter().map(|o| o.1).sum();
    let padded = |b: usize, d: usize, kr: isize| -> f64 {
        let last = nr as isize - 1;
        if kr < 0 {
            let (a, c) = (f.at(b, d, 0).ln(), f.at(b, d, 1).ln());
            (a + (a - c) * (-kr) as f64).exp()
        } else if kr > last {
            let (a, c) = (f.at(b, d, nr - 1).ln(), f.at(b, d, nr - 2).ln());
            (a + (a - c) * (kr - last) as f64).exp()
        } else {
            f.at(b, d, kr as usize)
        }
    };
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|flat| {
            let kr = (flat % nr) as isize;
            let d = ((flat / nr) % nd) as isize;
            let mut rest = flat / (nr * nd);
            let mut bidx = vec![0isize; n];
            for v in bidx.iter_mut() {
                *v = (rest % nb as usize) as isize;
                rest /= nb as usize;
            }
            let mut acc = 0.0;
            for (o, w) in &offsets {
                let mut bb = 0usize;
                for a in (0..n).rev() {
                    bb = bb * nb as usize + (bidx[a] + o[a]).rem_euclid(nb) as usize;
                }
                let dd = if n == 2 { (d + o[n]).rem_euclid(nd as isize) as usize } else { d as usize };
                acc += w * padded(bb, dd, kr + o[axes - 1]);
            }
            acc / mass
        })
        .collect();
    Ok(RadialField { grid: f.grid.clone(), values })
}

/// Largest per-node quotient sup(dF(Z))/inf(F) over a radial window of
/// the kernel radius.
pub fn mollification_bound(f: &RadialField, kernel_radius: usize) -> f64 {
    let slopes = f.log_slopes();
    let g = &f.grid;
    let nr = g.radii.len();
    let k = kernel_radius;
    (0..g.rays())
        .into_par_iter()
        .map(|ray| {
            let off = ray * nr;
            let mut worst = f64::NEG_INFINITY;
            for i in 0..nr {
                let (lo, hi) = (i.saturating_sub(k), (i + k).min(nr - 1));
                let sup = (lo..=hi).map(|j| slopes[off + j] * f.values[off + j]).fold(f64::NEG_INFINITY, f64::max);
                let inf = (lo..=hi).map(|j| f.values[off + j]).fold(f64::INFINITY, f64::min);
                worst = worst.max(sup / inf);
            }
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// g = σH + (1 − σ)G: σ is 1 on the inner half of each tube and of the
/// 0-section collar and falls to 0 at their edges. Also returns the mask
/// of nodes where σ_L = 1.
pub fn restore_cores(mollified: &RadialField, assembled: &RadialField, skeleton: &CoreSkeleton, c: &CollarOptions) -> (RadialField, Vec<bool>) {
    let g = &mollified.grid;
    let nr = g.radii.len();
    let nd = g.directions.len();
    let rows: Vec<(f64, bool)> = (0..g.len())
        .into_par_iter()
        .map(|flat| {
            let k = flat % nr;
            let d = (flat / nr) % nd;
            let b = flat / (nr * nd);
            let r = g.radii[k];
            let p: Vec<f64> = g.directions[d].iter().map(|w| w * r).collect();
            let dl = skeleton.stars[b].iter().map(|br| fiber_distance(&br.fiber, &p)).fold(f64::INFINITY, f64::min);
            let sl = 1.0 - smoothstep((dl - 0.5 * c.width) / (0.5 * c.width));
            let sz = 1.0 - smoothstep((r - 0.5 * c.zero_width) / (0.5 * c.zero_width));
            let s = sl.max(sz);
            let v = if s >= 1.0 {
                assembled.values[flat]
            } else if s <= 0.0 {
                mollified.values[flat]
            } else {
                s * assembled.values[flat] + (1.0 - s) * mollified.values[flat]
            };
            (v, dl <= 0.5 * c.width)
        })
        .collect();
    (
        RadialField { grid: g.clone(), values: rows.iter().map(|r| r.0).collect() },
        rows.iter().map(|r| r.1).collect(),
    )
}

fn shell_at_or_above(g: &RadialGrid, r: f64) -> Option<usize> {
    g.radii.iter().position(|x| *x >= r * (1.0 - 1e-12))
}

/// Smallest r_outer for which the taper from F(r_inner) to 1 has log-slope
/// at most 1 − margin.
pub fn minimal_outer_radius(f: &RadialField, r_inner: f64, margin: f64) -> f64 {
    let g = &f.grid;
    let nr = g.radii.len();
    let k = shell_at_or_above(g, r_inner).unwrap_or(nr - 1);
    let worst = (0..g.rays()).map(|ray| f.values[ray * nr + k].ln().abs()).fold(0.0, f64::max);
    g.radii[k] * (worst / (1.0 - margin)).exp()
}

/// Log-linear taper from F(r_inner) to 1 at r_outer, exactly 1 beyond.
/// Both radii are snapped up to grid shells.
pub fn outer_flatten(f: &RadialField, r_inner: f64, r_outer: f64, margin: f64) -> Result<RadialField> {
    let g = &f.grid;
    let nr = g.radii.len();
    if !(0.0..1.0).contains(&margin) {
        return Err(LcsError::Precondition(format!("margin {margin} must lie in [0, 1)")));
    }
    let ki = shell_at_or_above(g, r_inner).ok_or_else(|| LcsError::Rejected(format!("inner radius {r_inner} is beyond the grid")))?;
    let need = minimal_outer_radius(f, r_inner, margin);
    if r_outer < need * (1.0 - 1e-12) {
        return Err(LcsError::Rejected(format!("outer radius {r_outer} too small: the taper needs r_outer >= {need}")));
    }
    let ko = shell_at_or_above(g, r_outer).ok_or_else(|| {
        LcsError::Rejected(format!("outer radius {r_outer} exceeds the grid (r_max = {})", g.radii[nr - 1]))
    })?;
    let mut values = f.values.clone();
    let (li, lo) = (g.radii[ki].ln(), g.radii[ko].ln());
    for ray in 0..g.rays() {
        let off = ray * nr;
        let v0 = f.values[off + ki].ln();
        for k in ki..nr {
            values[off + k] = if k >= ko { 1.0 } else { (v0 * (lo - g.radii[k].ln()) / (lo - li)).exp() };
        }
    }
    Ok(RadialField { grid: f.grid.clone(), values })
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialBoundReport {
    pub max_slope: f64,
    pub argmax_base: Vec<f64>,
    pub argmax_direction: Vec<f64>,
    pub argmax_radius: f64,
    pub min_value: f64,
    pub outer_shell_ones: bool,
    pub pass: bool,
}

/// Max radial log-slope over the grid. Passes iff it is < 1, F > 0 and
/// the outermost shell is exactly 1.
pub fn verify_radial_bound(f: &RadialField) -> RadialBoundReport {
    let slopes = f.log_slopes();
    let (i, m) = slopes.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let g = &f.grid;
    let nr = g.radii.len();
    let nd = g.directions.len();
    let (k, d, b) = (i % nr, (i / nr) % nd, i / (nr * nd));
    let ones = (0..g.rays()).all(|ray| f.values[ray * nr + nr - 1] == 1.0);
    let min_value = f.min_value();
    RadialBoundReport {
        max_slope: m,
        argmax_base: g.base_nodes[b].clone(),
        argmax_direction: g.directions[d].clone(),
        argmax_radius: g.radii[k],
        min_value,
        outer_shell_ones: ones,
        pass: m < 1.0 && ones && min_value > 0.0,
    }
}

/// Radial profile of the fiber squeeze: identity below r0 − ε, a
/// bump-blended seam on [r0 − ε, r0], then r0·((r0+ε)/r0)^((t−r0)/(r−r0)).
#[derive(Clone, Debug, Serialize)]
pub struct SqueezeProfile {
    pub r0: f64,
    pub r: f64,
    pub epsilon: f64,
    pub a: f64,
    pub b: f64,
}

fn gauss_legendre(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    const X: [f64; 4] = [0.1834346424956498, 0.525_532_409_916_329, 0.7966664774136267, 0.9602898564975363];
    const W: [f64; 4] = [0.362_683_783_378_362, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763];
    let h = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for i in 0..panels {
        let c = lo + (i as f64 + 0.5) * h;
        for j in 0..4 {
            acc += W[j] * (f(c - 0.5 * h * X[j]) + f(c + 0.5 * h * X[j]));
        }
    }
    acc * 0.5 * h
}

impl SqueezeProfile {
    pub fn new(r0: f64, r: f64, epsilon: f64, a: f64) -> Result<Self> {
        if !(r0 > 0.0 && r > r0 && a > 0.0 && epsilon > 0.0 && epsilon < r0) {
            return Err(LcsError::Precondition(format!(
                "need 0 < ε < r0 < r and a > 0 (r0 = {r0}, r = {r}, ε = {epsilon}, a = {a})"
            )));
        }
        let lhs = (1.0 + epsilon / r0).ln();
        let rhs = (r - r0) / r;
        if lhs >= rhs {
            return Err(LcsError::Rejected(format!(
                "inadmissible ε = {epsilon}: ln(1 + ε/r0) = {lhs:.6} must be < (r − r0)/r = {rhs:.6}"
            )));
        }
        let mut p = SqueezeProfile { r0, r, epsilon, a, b: 1.0 };
        p.b = 1.0 / gauss_legendre(|s| p.bump(s), 0.0, 1.0, 256);
        Ok(p)
    }

    /// b·e^{−a/s + a/(s−1)} on (0, 1), zero outside.
    pub fn bump(&self, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            0.0
        } else {
            self.b * (-self.a / s + self.a / (s - 1.0)).exp()
        }
    }

    /// H(s) = ∫₀ˢ bump, so H(0) = 0 and H(1) = 1.
    pub fn blend(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s >= 1.0 {
            1.0
        } else {
            gauss_legendre(|x| self.bump(x), 0.0, s, 128)
        }
    }

    /// Slope of the log profile at r0.
    pub fn seam_slope(&self) -> f64 {
        self.r0 * (1.0 + self.epsilon / self.r0).ln() / (self.r - self.r0)
    }

    /// sup over s of H′(s)(1 − s) − H(s); bounds α′ − 1 on the seam for every ε.
    pub fn seam_overshoot(&self) -> f64 {
        (1..4000)
            .map(|i| {
                let s = i as f64 / 4000.0;
                self.bump(s) * (1.0 - s) - self.blend(s)
            })
            .fold(0.0, f64::max)
    }
}

/// (α(t), α′(t)) for t ∈ [0, r].
pub fn squeeze_profile(p: &SqueezeProfile, t: f64) -> Result<(f64, f64)> {
    if !(0.0..=p.r).contains(&t) {
        return Err(LcsError::domain("squeeze_profile", t));
    }
    let (r0, eps) = (p.r0, p.epsilon);
    if t <= r0 - eps {
        return Ok((t, 1.0));
    }
    let c = p.seam_slope();
    if t < r0 {
        let s = (t - r0 + eps) / eps;
        let a = r0 + (t - r0) * c;
        let hs = p.blend(s);
        let val = hs * a + (1.0 - hs) * t;
        let der = p.bump(s) / eps * (a - t) + hs * c + (1.0 - hs);
        return Ok((val, der));
    }
    let k = (1.0 + eps / r0).ln() / (p.r - r0);
    let val = r0 * (k * (t - r0)).exp();
    Ok((val, val * k))
}

#[derive(Clone, Debug, Serialize)]
pub struct NearLagrangianReport {
    pub width: f64,
    pub samples: usize,
    pub sup_log_slope: f64,
    pub min_primitive: f64,
    pub pass: bool,
}

struct NearLagrangian {
    emb: crate::lagrangian::ParametricEmbedding,
    f: ScalarField,
    width: f64,
    samples: Vec<(Point, Point)>,
    cells: Vec<CellAxis>,
    index: HashMap<Vec<i64>, Vec<usize>>,
    blend_scale: f64,
}

#[derive(Clone, Copy)]
enum CellAxis {
    Circle(i64),
    Line(f64),
}

fn cell_key(v: f64, c: CellAxis) -> i64 {
    match c {
        CellAxis::Circle(m) => ((wrap_angle(v) / TAU * m as f64).floor() as i64).rem_euclid(m),
        CellAxis::Line(w) => (v / w).floor() as i64,
    }
}

impl NearLagrangian {
    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().zip(&self.cells).map(|(v, c)| cell_key(*v, *c)).collect()
    }

    /// Closest parameter to y, by Newton on Di(l)ᵀ(y − i(l)) = 0.
    fn closest(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let total = self.emb.structure().total();
        let key = self.key(y);
        let dim = key.len();
        let mut best: Option<(usize, f64)> = None;
        for combo in 0..3usize.pow(dim as u32) {
            let mut k = key.clone();
            for (a, v) in k.iter_mut().enumerate() {
                *v += ((combo / 3usize.pow(a as u32)) % 3) as i64 - 1;
                if let CellAxis::Circle(m) = self.cells[a] {
                    *v = v.rem_euclid(m);
                }
            }
            for &i in self.index.get(&k).map(|v| v.as_slice()).unwrap_or(&[]) {
                let d = total.distance(&self.samples[i].1, y);
                if best.is_none_or(|b| d < b.1) {
                    best = Some((i, d));
                }
            }
        }
        let (i0, _) = best.ok_or_else(|| LcsError::domain("near-Lagrangian extension outside its collar", f64::INFINITY))?;
        let n = self.emb.n();
        let mut u = self.samples[i0].0.clone();
        let mut dist = total.distance(&self.samples[i0].1, y);
        for _ in 0..60 {
            let jets = self.emb.map().eval_jet(&u)?;
            let diff = total.difference(&jets.iter().map(|j| j.value()).collect::<Vec<_>>(), y);
            let mut grad = DVector::<f64>::zeros(n);
            let mut gn = DMatrix::<f64>::zeros(n, n);
            for a in 0..n {
                for c in 0..jets.len() {
                    grad[a] += jets[c].grad(a) * diff[c];
                    for b in 0..n {
                        gn[(a, b)] += jets[c].grad(a) * jets[c].grad(b);
                    }
                }
            }
            let step = gn.lu().solve(&grad).ok_or_else(|| LcsError::Numerical("closest-point iteration failed".into()))?;
            let mut damp = 1.0;
            let mut moved = false;
            while damp > 1e-6 {
                let trial: Vec<f64> = (0..n).map(|a| u[a] + damp * step[a]).collect();
                let d = total.distance(&self.emb.point(&trial)?, y);
                if d <= dist {
                    u = trial;
                    dist = d;
                    moved = true;
                    break;
                }
                damp *= 0.5;
            }
            if !moved || damp * step.amax() < 1e-15 {
                break;
            }
        }
        let u = self.emb.source().normalized(&u);
        let x = self.emb.point(&u)?;
        Ok((u, total.distance(&x, y)))
    }

    fn eval(&self, y: &[Jet2]) -> Result<Jet2> {
        let n = self.emb.n();
        let yv: Vec<f64> = y.iter().map(|j| j.value()).collect();
        let (u, dist) = self.closest(&yv)?;
        if dist > self.width {
            return Err(LcsError::domain("near-Lagrangian extension outside its collar", dist));
        }
        let total = self.emb.structure().total();
        let map = self.emb.map();
        let x = map.eval(&u)?;
        let diff = total.difference(&x, &yv);
        let di = map.jacobian(&u)?;
        let mut gl = -(di.transpose() * &di);
        for b in 0..n {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[b] += FD_STEP;
            dn[b] -= FD_STEP;
            let d2 = (map.jacobian(&up)? - map.jacobian(&dn)?) / (2.0 * FD_STEP);
            for a in 0..n {
                gl[(a, b)] += (0..2 * n).map(|c| d2[(c, a)] * diff[c]).sum::<f64>();
            }
        }
        let dl = -gl.lu().solve(&di.transpose()).ok_or_else(|| LcsError::Numerical("singular closest-point system".into()))?;
        let lstar: Vec<Jet2> = (0..n)
            .map(|a| {
                let row: Vec<f64> = (0..2 * n).map(|c| dl[(a, c)]).collect();
                Jet2::compose(u[a], &row, None, y)
            })
            .collect();
        let k = self.transverse(&u)?;
        let mut dk = vec![vec![0.0; n]; 2 * n];
        for b in 0..n {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[b] += FD_STEP;
            dn[b] -= FD_STEP;
            let (kp, km) = (self.transverse(&up)?, self.transverse(&dn)?);
            for c in 0..2 * n {
                dk[c][b] = (kp[c] - km[c]) / (2.0 * FD_STEP);
            }
        }
        let fj = self.f.eval_jet(&u)?;
        let fgrad: Vec<f64> = (0..n).map(|a| fj.grad(a)).collect();
        let mut out = Jet2::compose(fj.value(), &fgrad, None, &lstar);
        for c in 0..2 * n {
            let irow: Vec<f64> = (0..n).map(|a| di[(c, a)]).collect();
            let ic = Jet2::compose(x[c], &irow, None, &lstar);
            let d = (y[c] - ic).with_value(diff[c]);
            out += Jet2::compose(k[c], &dk[c], None, &lstar) * d;
        }
        Ok(out.truncate(1))
    }

    /// k(l) with k(X_V) = (λ + fβ)(X_V), blended into the normal part of
    /// λ + fβ where the normal part X_V of Z is small.
    fn transverse(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.emb.n();
        let x = self.emb.map().eval(u)?;
        let f = self.f.value(u)?;
        let beta = self.emb.structure().beta_at(&x[..n])?;
        let di = self.emb.map().jacobian(u)?;
        let gram = di.transpose() * &di;
        let inv = gram.try_inverse().ok_or_else(|| LcsError::Numerical("immersion degenerates".into()))?;
        let normal = DMatrix::<f64>::identity(2 * n, 2 * n) - &di * inv * di.transpose();
        let mut z = DVector::<f64>::zeros(2 * n);
        let mut w = DVector::<f64>::zeros(2 * n);
        for i in 0..n {
            z[n + i] = x[n + i];
            w[i] = x[n + i] + f * beta[i];
        }
        let xv = &normal * z;
        let kp = &normal * &w;
        let norm = xv.norm();
        let s = smoothstep(norm / self.blend_scale);
        if s <= 0.0 {
            return Ok(kp.iter().copied().collect());
        }
        let scale = w.dot(&xv) / (norm * norm);
        Ok((0..2 * n).map(|c| s * xv[c] * scale + (1.0 - s) * kp[c]).collect())
    }
}

const FD_STEP: f64 = 1e-5;

/// Extension h′ of the positive primitive to a collar of L with h′ = f on
/// L and dh′(Z) = 0 along L. Carries first-order jets.
pub fn near_lagrangian_extension(e: &ExactLagrangian, width: f64) -> Result<ScalarField> {
    let emb = e.embedding.clone();
    let f = e.primitive();
    let n = emb.n();
    let per = if n == 1 { 512 } else { 96 };
    let params = torus_grid(n, per);
    let fmin = params.iter().map(|u| f.value(u)).collect::<Result<Vec<_>>>()?.into_iter().fold(f64::INFINITY, f64::min);
    if fmin <= 0.0 {
        return Err(LcsError::Precondition(format!(
            "primitive reaches {fmin:.6}; translate the embedding by c·β with c < {fmin:.6} to make it positive"
        )));
    }
    let samples: Vec<(Point, Point)> = params.par_iter().map(|u| Ok((u.clone(), emb.point(u)?))).collect::<Result<_>>()?;
    let total = emb.structure().total().clone();
    let spacing = (0..samples.len())
        .map(|i| {
            let mut v = samples[i].0.clone();
            v[0] += TAU / per as f64;
            emb.point(&v).map(|x| total.distance(&x, &samples[i].1))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let cell = (2.0 * width).max(2.0 * spacing);
    let cells: Vec<CellAxis> = (0..2 * n)
        .map(|c| {
            if total.is_circle(c) {
                CellAxis::Circle(((TAU / cell).floor() as i64).max(1))
            } else {
                CellAxis::Line(cell)
            }
        })
        .collect();
    let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        index.entry(s.1.iter().zip(&cells).map(|(v, c)| cell_key(*v, *c)).collect()).or_default().push(i);
    }
    let nl = Arc::new(NearLagrangian { emb, f, width, samples, cells, index, blend_scale: 0.05 });
    Ok(ScalarField::new(total, move |y| nl.eval(y)))
}

/// sup |d ln h(Z)| over points at most 0.9·width from L along coordinate
/// axes.
pub fn near_lagrangian_report(e: &ExactLagrangian, h: &ScalarField, width: f64, per_axis: usize) -> Result<NearLagrangianReport> {
    let emb = &e.embedding;
    let n = emb.n();
    let total = emb.structure().total().clone();
    let params = torus_grid(n, per_axis);
    let mut offsets = vec![vec![0.0; 2 * n]];
    for i in 0..2 * n {
        for s in [-0.9, -0.45, 0.45, 0.9] {
            let mut v = vec![0.0; 2 * n];
            v[i] = s * width;
            offsets.push(v);
        }
    }
    let rows: Vec<f64> = params
        .par_iter()
        .map(|u| {
            let x = emb.point(u)?;
            let mut worst: f64 = 0.0;
            for o in &offsets {
                let y = total.normalized(&x.iter().zip(o).map(|(a, b)| a + b).collect::<Vec<_>>());
                let j = h.eval_jet(&y)?;
                let zs: f64 = (0..n).map(|i| y[n + i] * j.grad(n + i)).sum();
                worst = worst.max((zs / j.value()).abs());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let f = e.primitive();
    let fmin = params.iter().map(|u| f.value(u)).collect::<Result<Vec<_>>>()?.into_iter().fold(f64::INFINITY, f64::min);
    let sup = rows.into_iter().fold(0.0, f64::max);
    Ok(NearLagrangianReport {
        width,
        samples: params.len() * offsets.len(),
        sup_log_slope: sup,
        min_primitive: fmin,
        pass: sup <= tolerances::NEAR_LAGRANGIAN_SLOPE,
    })
}

/// Where h near L comes from.
#[derive(Clone)]
pub enum HSource {
    Field(ScalarField),
    /// Near-Lagrangian extension of the primitive on a collar of this width.
    Primitive { width: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtensionOptions {
    pub base_per_axis: usize,
    pub directions: usize,
    pub radii: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub collar: CollarOptions,
    pub kernel_radius: usize,
    pub margin: f64,
    pub param_per_axis: usize,
    pub chords: ChordOptions,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions {
            base_per_axis: tolerances::EXT_BASE_PER_CIRCLE,
            directions: tolerances::EXT_DIRECTIONS,
            radii: tolerances::EXT_RADII,
            r_min: tolerances::EXT_R_MIN,
            r_max: tolerances::EXT_R_MAX,
            collar: CollarOptions { width: 0.05, zero_width: 0.05 },
            kernel_radius: 2,
            margin: 0.5,
            param_per_axis: 128,
            chords: ChordOptions::default(),
        }
    }
}

impl ExtensionOptions {
    /// Coarser grid for 2-dimensional bases.
    pub fn for_dim(n: usize) -> Self {
        if n == 2 {
            ExtensionOptions { base_per_axis: 32, directions: 64, radii: 96, param_per_axis: 64, ..Default::default() }
        } else {
            Self::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageMaxima {
    pub interpolation: f64,
    pub mollified: f64,
    pub mollification_bound: f64,
    pub restored: f64,
    pub flattened: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtensionReport {
    pub mvt: MvtReport,
    pub branches: usize,
    pub unresolved_base_nodes: usize,
    pub max_h: f64,
    pub gaps: usize,
    pub max_gap_slope: f64,
    pub stages: StageMaxima,
    pub r_inner: f64,
    pub r_outer: f64,
    pub collar_nodes: usize,
    pub collar_max_deviation: f64,
    pub bound: RadialBoundReport,
    pub pass: bool,
}

pub struct ExtensionResult {
    pub field: RadialField,
    pub h: ScalarField,
    pub skeleton: CoreSkeleton,
    pub segments: Vec<RaySegment>,
    pub report: ExtensionReport,
}

/// MVT check, skeleton, collars, log-linear gaps, mollification, core
/// restoration, outer flattening and the final bound check.
pub fn build_extension(e: &ExactLagrangian, source: &HSource, opts: &ExtensionOptions) -> Result<ExtensionResult> {
    let s = e.embedding.structure().clone();
    let h = match source {
        HSource::Field(f) => {
            if f.domain() != s.total() {
                return Err(LcsError::DimensionMismatch("h must live on T*M".into()));
            }
            f.clone()
        }
        HSource::Primitive { width } => near_lagrangian_extension(e, *width)?,
    };
    let h_on_l = h.pullback(e.embedding.map())?;
    let mvt = mvt_obstruction_report_with(e, &h_on_l, 0.0, &opts.chords)?;
    if mvt.obstructed {
        let c = mvt.argmax.as_ref();
        return Err(LcsError::Rejected(format!(
            "h is MVT-obstructed: chord over base {:?} with t = {:.9}, ratio = {:.9}, defect = {:.3e}",
            c.map(|c| c.base.clone()).unwrap_or_default(),
            c.map_or(f64::NAN, |c| c.t),
            mvt.max_ratio.unwrap_or(f64::NAN),
            c.map_or(f64::NAN, |c| c.defect)
        )));
    }
    if let HSource::Primitive { width } = source {
        if *width < 2.0 * opts.collar.width {
            return Err(LcsError::Precondition(format!(
                "near-Lagrangian width {width} must be at least twice the collar width {}",
                opts.collar.width
            )));
        }
    }
    let grid = Arc::new(RadialGrid::new(s.base(), opts.base_per_axis, opts.directions, opts.radii, opts.r_min, opts.r_max)?);
    if opts.collar.zero_width <= grid.radii[0] {
        return Err(LcsError::Precondition("the 0-section collar must contain r_min".into()));
    }
    let skeleton = build_core(e, &grid.base_nodes, opts.base_per_axis, opts.param_per_axis)?;
    let h_at: Vec<Vec<f64>> = skeleton
        .stars
        .iter()
        .map(|star| star.iter().map(|b| h_on_l.value(&b.param)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let lag = lagrangian_patch(&h, &skeleton, &grid, &opts.collar)?;
    if lag.values.iter().any(|v| *v <= 0.0) {
        return Err(LcsError::Precondition("h must be positive on the collar".into()));
    }
    let max_h = lag
        .values
        .iter()
        .filter(|v| !v.is_nan())
        .chain(h_at.iter().flatten())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let max_h = if max_h.is_finite() { max_h } else { 1.0 };
    let zero = near_zero_extension(&h, &skeleton, &grid, &opts.collar, max_h)?;
    let (assembled, segments) = radial_log_interpolation(&zero, &lag, &skeleton, &grid, &h_at, opts.chords.equality_band)?;
    let interpolation = verify_radial_bound(&assembled).max_slope;
    let mollification_bound = mollification_bound(&assembled, opts.kernel_radius);
    let moll = mollify(&assembled, opts.kernel_radius)?;
    let mollified = verify_radial_bound(&moll).max_slope;
    let (restored_field, core) = restore_cores(&moll, &assembled, &skeleton, &opts.collar);
    let restored = verify_radial_bound(&restored_field).max_slope;

    let nr = grid.radii.len();
    let last_u = (0..grid.rays())
        .map(|ray| (0..nr).rev().find(|&k| lag.defined(ray * nr + k) || zero.defined(ray * nr + k)).unwrap_or(0))
        .max()
        .unwrap_or(0);
    let ki = last_u + opts.kernel_radius + 1;
    if ki >= nr {
        return Err(LcsError::Rejected(format!("L reaches r = {} and leaves no room to flatten below r_max", grid.radii[last_u])));
    }
    let r_inner = grid.radii[ki];
    let r_outer = minimal_outer_radius(&restored_field, r_inner, opts.margin);
    let field = outer_flatten(&restored_field, r_inner, r_outer, opts.margin)?;
    let bound = verify_radial_bound(&field);

    let mut collar_nodes = 0;
    let mut dev: f64 = 0.0;
    for (i, c) in core.iter().enumerate() {
        if *c && lag.defined(i) {
            collar_nodes += 1;
            dev = dev.max((field.values[i] - lag.values[i]).abs());
        }
    }
    let pass = bound.pass && dev <= tolerances::EXT_COLLAR_MATCH;
    let report = ExtensionReport {
        mvt,
        branches: skeleton.branch_count(),
        unresolved_base_nodes: skeleton.unresolved_nodes,
        max_h,
        gaps: segments.len(),
        max_gap_slope: segments.iter().map(|s| s.slope).fold(f64::NEG_INFINITY, f64::max),
        stages: StageMaxima { interpolation, mollified, mollification_bound, restored, flattened: bound.max_slope },
        r_inner,
        r_outer,
        collar_nodes,
        collar_max_deviation: dev,
        bound,
        pass,
    };
    Ok(ExtensionResult { field, h, skeleton, segments, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_linear_slopes() {
        assert!((log_linear_slope(1.0, 3.0, 1.0, 3.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((log_linear_slope(1.0, 2.0, 1.0, 4.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(log_linear_slope(2.0, 2.0, 0.5, 7.0).unwrap(), 0.0);
    }

    #[test]
    fn catmull_rom_weights_partition_unity() {
        for s in [0.0, 0.3, 0.77, 1.0] {
            let (w, dw) = catmull_rom(s);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(dw.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn squeeze_profile_endpoints() {
        let p = SqueezeProfile::new(1.0, 2.0, 0.1, 1.0).unwrap();
        assert!((gauss_legendre(|s| p.bump(s), 0.0, 1.0, 256) - 1.0).abs() < 1e-13);
        let (v, d) = squeeze_profile(&p, 2.0).unwrap();
        assert!((v - 1.1).abs() < 1e-14);
        assert!(d > 0.0);
        assert_eq!(squeeze_profile(&p, 0.5).unwrap(), (0.5, 1.0));
    }
}
