//! Liouville chords: fiber-ray coincidences on exact Lagrangians, their
//! classification by defect and MVT ratio, and the Reeb-chord
//! correspondence for lifted Legendrians.

use crate::chart::{wrap_diff, ModelManifold, Point, ScalarField, SmoothMap, VectorField};
use crate::error::{LcsError, Result};
use crate::forms::{interior_product, FormExpression};
use crate::lagrangian::{lift_legendrian, solve_primitive, ExactnessCertificate, LegendrianEmbedding, ParametricEmbedding, PrimitiveOptions};
use crate::sampling::{torus_grid, SplitMix};
use crate::tolerances;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::TAU;

/// An embedding together with its exactness certificate.
#[derive(Clone, Debug)]
pub struct ExactLagrangian {
    pub embedding: ParametricEmbedding,
    pub certificate: ExactnessCertificate,
}

impl ExactLagrangian {
    pub fn new(embedding: ParametricEmbedding, certificate: ExactnessCertificate) -> Result<Self> {
        if !certificate.valid {
            return Err(LcsError::Precondition(format!(
                "{} has no valid exactness certificate (residual {:e})",
                embedding.name(),
                certificate.residual_sup
            )));
        }
        Ok(ExactLagrangian { embedding, certificate })
    }

    /// Solves for the primitive with `opts` and wraps the result.
    pub fn certify(embedding: ParametricEmbedding, opts: &PrimitiveOptions) -> Result<Self> {
        let base = vec![0.0; embedding.source().dim()];
        let cert = solve_primitive(&embedding, &base, opts)?;
        Self::new(embedding, cert)
    }

    /// The declared primitive when present, otherwise the solved one.
    pub fn primitive(&self) -> ScalarField {
        self.embedding
            .declared_primitive()
            .cloned()
            .or_else(|| self.certificate.solved_primitive.clone())
            .expect("certificates carry a solved primitive")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChordSign {
    Positive,
    Negative,
}

#[derive(Clone, Debug, Serialize)]
pub struct LiouvilleChord {
    pub start_param: Vec<f64>,
    pub end_param: Vec<f64>,
    pub start: Point,
    pub end: Point,
    pub base: Vec<f64>,
    pub start_fiber: Vec<f64>,
    pub t: f64,
    pub length: f64,
    pub sign: ChordSign,
    pub f_start: f64,
    pub f_end: f64,
    pub defect: f64,
    pub mvt_ratio: Option<f64>,
    pub positive_values: bool,
    pub essential: bool,
    pub mvt_obstructed: bool,
    pub residual: f64,
    pub family: usize,
    pub representative: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChordOptions {
    pub grid: usize,
    pub dedup: f64,
    pub log_band: f64,
    pub min_fiber_norm: f64,
    pub angle: f64,
    pub newton_tol: f64,
    pub newton_iters: usize,
    pub seed_angle: f64,
    pub equality_band: f64,
}

impl Default for ChordOptions {
    fn default() -> Self {
        ChordOptions {
            grid: 64,
            dedup: tolerances::CHORD_DEDUP,
            log_band: tolerances::CHORD_LOG_BAND,
            min_fiber_norm: tolerances::CHORD_MIN_FIBER_NORM,
            angle: tolerances::CHORD_ANGLE,
            newton_tol: tolerances::CHORD_NEWTON_TOL,
            newton_iters: tolerances::CHORD_NEWTON_ITERS,
            seed_angle: 0.5,
            equality_band: tolerances::MVT_EQUALITY_BAND,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UnresolvedSeed {
    pub start_param: Vec<f64>,
    pub end_param: Vec<f64>,
    pub best_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChordScan {
    pub chords: Vec<LiouvilleChord>,
    pub families: usize,
    pub seeds: usize,
    pub rejected_seeds: usize,
    pub degenerate_seeds: usize,
    pub unresolved: Vec<UnresolvedSeed>,
    pub options: ChordOptions,
}

impl ChordScan {
    pub fn representatives(&self) -> impl Iterator<Item = &LiouvilleChord> {
        self.chords.iter().filter(|c| c.representative)
    }
}

/// A coincidence (u, v, s) with fiber₂(v) = e^s fiber₁(u) over equal base points.
#[derive(Clone, Debug)]
pub(crate) struct RawChord {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub s: f64,
    pub residual: f64,
}

pub(crate) struct Coincidences {
    pub chords: Vec<RawChord>,
    pub seeds: usize,
    pub rejected: usize,
    pub degenerate: usize,
    pub unresolved: Vec<UnresolvedSeed>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

struct Sampled {
    params: Vec<Point>,
    base: Vec<Vec<f64>>,
    fiber: Vec<Vec<f64>>,
    speed: f64,
}

fn sample_sheet(map: &SmoothMap, nb: usize, n: usize) -> Result<Sampled> {
    let k = map.source().dim();
    let params = torus_grid(k, n);
    let rows: Vec<(Point, f64)> = params
        .par_iter()
        .map(|u| {
            let j = map.jacobian(u)?;
            let speed = j.rows(0, nb).into_owned().norm();
            Ok((map.eval(u)?, speed))
        })
        .collect::<Result<_>>()?;
    Ok(Sampled {
        params,
        base: rows.iter().map(|r| r.0[..nb].to_vec()).collect(),
        fiber: rows.iter().map(|r| r.0[nb..].to_vec()).collect(),
        speed: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

fn grid_index(flat: usize, k: usize, n: usize) -> Vec<usize> {
    let mut r = flat;
    (0..k)
        .map(|_| {
            let i = r % n;
            r /= n;
            i
        })
        .collect()
}

fn grid_adjacent(a: &[usize], b: &[usize], n: usize) -> bool {
    a.iter().zip(b).all(|(&x, &y)| {
        let d = x.abs_diff(y);
        d.min(n - d) <= 1
    })
}

/// Hash cells of side ≥ `r`, wrapping around circle coordinates.
struct CellGrid {
    size: Vec<f64>,
    count: Vec<Option<i64>>,
}

impl CellGrid {
    fn new(circles: &[bool], r: f64) -> Self {
        let mut size = vec![];
        let mut count = vec![];
        for &c in circles {
            if c {
                let k = ((TAU / r).floor() as i64).max(1);
                size.push(TAU / k as f64);
                count.push(Some(k));
            } else {
                size.push(r);
                count.push(None);
            }
        }
        CellGrid { size, count }
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .zip(self.size.iter().zip(&self.count))
            .map(|(v, (h, c))| {
                let k = (v / h).floor() as i64;
                c.map_or(k, |c| k.rem_euclid(c))
            })
            .collect()
    }

    fn neighbors(&self, key: &[i64]) -> Vec<Vec<i64>> {
        let mut out = vec![vec![]];
        for (&k, c) in key.iter().zip(&self.count) {
            let mut opts: Vec<i64> = (-1..=1).map(|d| c.map_or(k + d, |c| (k + d).rem_euclid(c))).collect();
            opts.sort();
            opts.dedup();
            out = out
                .into_iter()
                .flat_map(|p| {
                    opts.iter().map(move |&o| {
                        let mut q = p.clone();
                        q.push(o);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

fn base_difference(target: &ModelManifold, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| if target.is_circle(i) { wrap_diff(x - y) } else { x - y })
        .collect()
}

fn residual(m1: &SmoothMap, m2: &SmoothMap, nb: usize, u: &[f64], v: &[f64], s: f64) -> Result<Vec<f64>> {
    let a = m1.eval(u)?;
    let b = m2.eval(v)?;
    let mut r = base_difference(m1.target(), &a[..nb], &b[..nb]);
    let e = s.exp();
    r.extend(b[nb..].iter().zip(&a[nb..]).map(|(y, x)| y - e * x));
    Ok(r)
}

/// Min-norm Gauss–Newton on base₁(u) = base₂(v), fiber₂(v) = e^s fiber₁(u).
fn refine(
    m1: &SmoothMap,
    m2: &SmoothMap,
    nb: usize,
    u0: &[f64],
    v0: &[f64],
    s0: f64,
    opts: &ChordOptions,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64, bool, f64)> {
    let (k1, k2) = (u0.len(), v0.len());
    let (mut u, mut v, mut s) = (u0.to_vec(), v0.to_vec(), s0);
    let mut best = f64::INFINITY;
    let mut r = residual(m1, m2, nb, &u, &v, s)?;
    for _ in 0..opts.newton_iters {
        let rn = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
        best = best.min(rn);
        if rn <= opts.newton_tol {
            return Ok((u, v, s, rn, true, best));
        }
        let ja = m1.jacobian(&u)?;
        let jb = m2.jacobian(&v)?;
        let a = m1.eval(&u)?;
        let e = s.exp();
        let m = r.len();
        let mut j = DMatrix::zeros(m, k1 + k2 + 1);
        for row in 0..m {
            let w = if row < nb { 1.0 } else { -e };
            for c in 0..k1 {
                j[(row, c)] = w * ja[(row, c)];
            }
            let w2 = if row < nb { -1.0 } else { 1.0 };
            for c in 0..k2 {
                j[(row, k1 + c)] = w2 * jb[(row, c)];
            }
            if row >= nb {
                j[(row, k1 + k2)] = -e * a[row];
            }
        }
        let svd = j.svd(true, true);
        let smax = svd.singular_values.max();
        let step = match svd.solve(&DVector::from_column_slice(&r), smax * 1e-12) {
            Ok(x) => x,
            Err(_) => break,
        };
        let mut damp = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let un: Vec<f64> = (0..k1).map(|i| u[i] - damp * step[i]).collect();
            let vn: Vec<f64> = (0..k2).map(|i| v[i] - damp * step[k1 + i]).collect();
            let sn = s - damp * step[k1 + k2];
            let rn2 = residual(m1, m2, nb, &un, &vn, sn)?;
            let new = rn2.iter().map(|x| x * x).sum::<f64>();
            let old = r.iter().map(|x| x * x).sum::<f64>();
            if new < old || new <= opts.newton_tol * opts.newton_tol {
                u = un;
                v = vn;
                s = sn;
                r = rn2;
                accepted = true;
                break;
            }
            damp *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let rn = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
    best = best.min(rn);
    Ok((u, v, s, rn, rn <= opts.newton_tol * 100.0, best))
}

/// Finds all coincidences between two parametrized sheets over the same base.
/// The first `nb` target coordinates are the base, the rest the fiber.
pub(crate) fn find_coincidences(
    m1: &SmoothMap,
    m2: &SmoothMap,
    same: bool,
    nb: usize,
    opts: &ChordOptions,
) -> Result<Coincidences> {
    for m in [m1, m2] {
        if !m.source().is_torus() {
            return Err(LcsError::Precondition("chord scanning needs torus parameter spaces".into()));
        }
    }
    let n = opts.grid;
    let h = TAU / n as f64;
    let a = sample_sheet(m1, nb, n)?;
    let b = if same { None } else { Some(sample_sheet(m2, nb, n)?) };
    let b = b.as_ref().unwrap_or(&a);
    let delta = 1.5 * h * a.speed.max(b.speed).max(1e-9);
    let cells = CellGrid::new(&m1.target().circle_flags()[..nb], delta);
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, q) in b.base.iter().enumerate() {
        buckets.entry(cells.key(&wrapped(m2.target(), q))).or_default().push(i);
    }
    let k1 = m1.source().dim();
    let k2 = m2.source().dim();

    let seeds: Vec<(usize, usize)> = (0..a.params.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut cands: Vec<(usize, f64)> = vec![];
            if norm(&a.fiber[i]) >= opts.min_fiber_norm {
                let q = wrapped(m1.target(), &a.base[i]);
                let keys = cells.neighbors(&cells.key(&q));
                let gi = grid_index(i, k1, n);
                for kk in keys {
                    for &j in buckets.get(&kk).map(|v| v.as_slice()).unwrap_or(&[]) {
                        if same && grid_adjacent(&gi, &grid_index(j, k2, n), n) {
                            continue;
                        }
                        if norm(&b.fiber[j]) < opts.min_fiber_norm {
                            continue;
                        }
                        let bd = norm(&base_difference(m1.target(), &a.base[i], &b.base[j]));
                        if bd > delta {
                            continue;
                        }
                        let ang = angle_between(&a.fiber[i], &b.fiber[j]);
                        if ang > opts.seed_angle {
                            continue;
                        }
                        cands.push((j, bd / delta + ang / opts.seed_angle));
                    }
                }
            }
            cands.sort_by(|x, y| x.1.total_cmp(&y.1));
            let mut picked: Vec<usize> = vec![];
            let mut blob_of: Vec<(usize, usize)> = vec![];
            for (j, _) in &cands {
                let gj = grid_index(*j, k2, n);
                let blob = blob_of.iter().find(|(c, _)| grid_adjacent(&grid_index(*c, k2, n), &gj, n)).map(|x| x.1);
                match blob {
                    Some(bi) => blob_of.push((*j, bi)),
                    None => {
                        blob_of.push((*j, picked.len()));
                        picked.push(*j);
                    }
                }
            }
            picked.into_iter().map(move |j| (i, j))
        })
        .collect();

    let results: Vec<_> = seeds
        .par_iter()
        .map(|&(i, j)| {
            let s0 = (norm(&b.fiber[j]) / norm(&a.fiber[i])).ln();
            let out = refine(m1, m2, nb, &a.params[i], &b.params[j], s0, opts)?;
            Ok((i, j, out))
        })
        .collect::<Result<_>>()?;

    let mut chords: Vec<RawChord> = vec![];
    let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let flags: Vec<bool> = m1.source().circle_flags().iter().chain(m2.source().circle_flags()).copied().collect();
    let dcells = CellGrid::new(&flags, opts.dedup);
    let (mut rejected, mut degenerate) = (0, 0);
    let mut unresolved = vec![];
    for (i, j, (u, v, s, res, ok, best)) in results {
        if !ok {
            if best <= h {
                unresolved.push(UnresolvedSeed { start_param: a.params[i].clone(), end_param: b.params[j].clone(), best_residual: best });
            } else {
                rejected += 1;
            }
            continue;
        }
        let u = m1.source().normalized(&u);
        let v = m2.source().normalized(&v);
        if s.abs() < opts.log_band {
            degenerate += 1;
            continue;
        }
        let p1 = m1.eval(&u)?;
        let p2 = m2.eval(&v)?;
        if norm(&p1[nb..]) < opts.min_fiber_norm || norm(&p2[nb..]) < opts.min_fiber_norm {
            rejected += 1;
            continue;
        }
        if angle_between(&p1[nb..], &p2[nb..]) > opts.angle {
            rejected += 1;
            continue;
        }
        let uv: Vec<f64> = u.iter().chain(&v).copied().collect();
        let key = dcells.key(&uv);
        let dup = dcells.neighbors(&key).iter().any(|kk| {
            index.get(kk).is_some_and(|list| {
                list.iter().any(|&c| {
                    let o = &chords[c];
                    m1.source().distance(&o.u, &u) < opts.dedup
                        && m2.source().distance(&o.v, &v) < opts.dedup
                        && (o.s - s).abs() < opts.dedup
                })
            })
        });
        if dup {
            continue;
        }
        index.entry(key).or_default().push(chords.len());
        chords.push(RawChord { u, v, s, residual: res });
    }
    chords.sort_by(|x, y| {
        x.u.iter()
            .chain(&x.v)
            .zip(y.u.iter().chain(&y.v))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(Coincidences { chords, seeds: seeds.len(), rejected, degenerate, unresolved })
}

fn wrapped(m: &ModelManifold, q: &[f64]) -> Vec<f64> {
    q.iter()
        .enumerate()
        .map(|(i, &v)| if m.is_circle(i) { crate::chart::wrap_angle(v) } else { v })
        .collect()
}

/// Single-linkage clustering of coincidences; returns family ids in order
/// of first appearance.
pub(crate) fn cluster(chords: &[RawChord], src1: &ModelManifold, src2: &ModelManifold, radius: f64) -> Vec<usize> {
    let m = chords.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let flags: Vec<bool> = src1.circle_flags().iter().chain(src2.circle_flags()).copied().collect();
    let grid = CellGrid::new(&flags, radius);
    let key = |c: &RawChord| grid.key(&c.u.iter().chain(&c.v).copied().collect::<Vec<_>>());
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, c) in chords.iter().enumerate() {
        cells.entry(key(c)).or_default().push(i);
    }
    for (i, c) in chords.iter().enumerate() {
        let keys = grid.neighbors(&key(c));
        for kk in keys {
            if let Some(list) = cells.get(&kk) {
                for &j in list {
                    if j == i {
                        continue;
                    }
                    let o = &chords[j];
                    if src1.distance(&o.u, &c.u) <= radius
                        && src2.distance(&o.v, &c.v) <= radius
                        && (o.s - c.s).abs() <= radius
                    {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    (0..m)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect()
}

/// Fills defect, sign, essentialness and the MVT ratio from primitive values.
pub fn classify_values(t: f64, f_start: f64, f_end: f64, band: f64) -> (f64, ChordSign, bool, Option<f64>) {
    let defect = f_end - t * f_start;
    let sign = if t > 1.0 { ChordSign::Positive } else { ChordSign::Negative };
    let essential = match sign {
        ChordSign::Positive => defect >= -band,
        ChordSign::Negative => defect <= band,
    };
    let ratio = (f_start > 0.0 && f_end > 0.0).then(|| (f_end.ln() - f_start.ln()) / t.ln());
    (defect, sign, essential, ratio)
}

pub fn classify_chord(mut c: LiouvilleChord, f1: &ScalarField, f2: &ScalarField, band: f64) -> Result<LiouvilleChord> {
    c.f_start = f1.value(&c.start_param)?;
    c.f_end = f2.value(&c.end_param)?;
    let (defect, sign, essential, ratio) = classify_values(c.t, c.f_start, c.f_end, band);
    c.defect = defect;
    c.sign = sign;
    c.essential = essential;
    c.mvt_ratio = ratio;
    c.positive_values = ratio.is_some();
    c.mvt_obstructed = ratio.map(|r| r >= 1.0 - band).unwrap_or(false);
    Ok(c)
}

fn check_compatible(e1: &ParametricEmbedding, e2: &ParametricEmbedding) -> Result<()> {
    let (s1, s2) = (e1.structure(), e2.structure());
    if s1.total() != s2.total() {
        return Err(LcsError::DimensionMismatch("embeddings live in different bundles".into()));
    }
    for q in crate::sampling::halton_points(s1.base(), 32, 4.0) {
        let (a, b) = (s1.beta_at(&q)?, s2.beta_at(&q)?);
        if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-12) {
            return Err(LcsError::Precondition("embeddings use different Lee forms".into()));
        }
    }
    Ok(())
}

/// Chords from E1 to E2 (or self-chords when `e2` is None).
pub fn scan_chords(e1: &ExactLagrangian, e2: Option<&ExactLagrangian>, opts: &ChordOptions) -> Result<ChordScan> {
    let f1 = e1.primitive();
    let f2 = e2.map(|e| e.primitive()).unwrap_or_else(|| f1.clone());
    scan_chords_with(e1, e2, &f1, &f2, opts)
}

/// Chord scan classified with arbitrary positive values `f1`, `f2` on the
/// parameter spaces instead of the primitives.
pub fn scan_chords_with(
    e1: &ExactLagrangian,
    e2: Option<&ExactLagrangian>,
    f1: &ScalarField,
    f2: &ScalarField,
    opts: &ChordOptions,
) -> Result<ChordScan> {
    let same = e2.is_none();
    let e2 = e2.unwrap_or(e1);
    check_compatible(&e1.embedding, &e2.embedding)?;
    let nb = e1.embedding.n();
    let (m1, m2) = (e1.embedding.map(), e2.embedding.map());
    let found = find_coincidences(m1, m2, same, nb, opts)?;
    let radius = (10.0 * opts.dedup).max(1.5 * TAU / opts.grid as f64);
    let fam = cluster(&found.chords, m1.source(), m2.source(), radius);
    let mut seen = vec![false; fam.iter().copied().max().map_or(0, |m| m + 1)];
    let chords = found
        .chords
        .iter()
        .zip(&fam)
        .map(|(c, &id)| {
            let start = m1.eval(&c.u)?;
            let end = m2.eval(&c.v)?;
            let rep = !seen[id];
            seen[id] = true;
            let chord = LiouvilleChord {
                start_param: c.u.clone(),
                end_param: c.v.clone(),
                base: start[..nb].to_vec(),
                start_fiber: start[nb..].to_vec(),
                start,
                end,
                t: c.s.exp(),
                length: c.s,
                sign: ChordSign::Positive,
                f_start: 0.0,
                f_end: 0.0,
                defect: 0.0,
                mvt_ratio: None,
                positive_values: false,
                essential: false,
                mvt_obstructed: false,
                residual: c.residual,
                family: id,
                representative: rep,
            };
            classify_chord(chord, f1, f2, opts.equality_band)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChordScan {
        chords,
        families: seen.len(),
        seeds: found.seeds,
        rejected_seeds: found.rejected,
        degenerate_seeds: found.degenerate,
        unresolved: found.unresolved,
        options: opts.clone(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MvtReport {
    pub obstructed: bool,
    pub margin: f64,
    pub chord_count: usize,
    pub families: usize,
    pub max_ratio: Option<f64>,
    pub min_ratio: Option<f64>,
    pub argmax: Option<LiouvilleChord>,
    pub min_primitive: f64,
    pub unresolved_seeds: usize,
    pub min_fiber_norm: f64,
}

/// Scans self-chords and reports whether some chord has ratio ≥ 1 − margin.
pub fn mvt_obstruction_report(e: &ExactLagrangian, margin: f64, opts: &ChordOptions) -> Result<MvtReport> {
    mvt_obstruction_report_with(e, &e.primitive(), margin, opts)
}

/// The same report for values `f` on L other than the primitive.
pub fn mvt_obstruction_report_with(e: &ExactLagrangian, f: &ScalarField, margin: f64, opts: &ChordOptions) -> Result<MvtReport> {
    let k = e.embedding.source().dim();
    let grid = torus_grid(k, opts.grid);
    let vals: Vec<f64> = grid.par_iter().map(|u| f.value(u)).collect::<Result<_>>()?;
    let (imin, fmin) = vals.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap_or((0, 1.0));
    if fmin <= 0.0 {
        return Err(LcsError::Precondition(format!(
            "primitive reaches {fmin:.6} at parameter {:?}; translate by the Lee form with c < {fmin:.6} to make it positive",
            grid[imin]
        )));
    }
    let scan = scan_chords_with(e, None, f, f, opts)?;
    let ratios: Vec<(usize, f64)> = scan.chords.iter().enumerate().filter_map(|(i, c)| c.mvt_ratio.map(|r| (i, r))).collect();
    let max = ratios.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1));
    let min = ratios.iter().map(|r| r.1).reduce(f64::min);
    Ok(MvtReport {
        obstructed: ratios.iter().any(|r| r.1 >= 1.0 - margin - opts.equality_band),
        margin,
        chord_count: scan.chords.len(),
        families: scan.families,
        max_ratio: max.map(|m| m.1),
        min_ratio: min,
        argmax: max.map(|m| scan.chords[m.0].clone()),
        min_primitive: fmin,
        unresolved_seeds: scan.unresolved.len(),
        min_fiber_norm: opts.min_fiber_norm,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReebChord {
    pub from: usize,
    pub to: usize,
    pub start_param: Vec<f64>,
    pub end_param: Vec<f64>,
    pub scale: f64,
    pub time: f64,
    pub family: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReebReport {
    pub epsilon: f64,
    pub identity_samples: usize,
    pub max_reeb_normalization_error: f64,
    pub max_reeb_contraction: f64,
    pub reeb_chords: Vec<ReebChord>,
    pub reeb_families: usize,
    pub lift_chords: usize,
    pub lift_families: usize,
    pub matched_lift_chords: usize,
    pub unmatched_lift_chords: usize,
    pub unmatched_reeb_families: usize,
    pub all_matched_essential: bool,
    pub max_lift_defect: f64,
    pub pass: bool,
}

/// α/s with α = ds − λ and R = Σ pᵢ∂_{pᵢ} + s∂_s on J¹M, s the last coordinate.
pub fn reeb_identity_residuals(m: &ModelManifold, points: &[Point]) -> Result<(f64, f64)> {
    let j1 = m.jet1();
    let n = m.dim();
    let mut alpha = FormExpression::dx(j1.clone(), 2 * n)?;
    for i in 0..n {
        alpha = alpha.sub(&FormExpression::dx(j1.clone(), i)?.scale_by(&ScalarField::coordinate(j1.clone(), n + i))?)?;
    }
    let inv_s = ScalarField::coordinate(j1.clone(), 2 * n).map(|s| Ok(s.recip()));
    let a = alpha.scale_by(&inv_s)?;
    let r = VectorField::new(j1.clone(), move |x| {
        let mut v = vec![crate::jet::Jet2::constant(0.0); 2 * n + 1];
        v[n..(2 * n + 1)].copy_from_slice(&x[n..(2 * n + 1)]);
        Ok(v)
    });
    let ar = interior_product(&r, &a)?;
    let ird = interior_product(&r, &a.d()?)?;
    let rows: Vec<(f64, f64)> = points
        .par_iter()
        .map(|x| Ok(((ar.evaluate(x)?.values()[0] - 1.0).abs(), ird.evaluate(x)?.max_abs())))
        .collect::<Result<_>>()?;
    Ok((rows.iter().map(|r| r.0).fold(0.0, f64::max), rows.iter().map(|r| r.1).fold(0.0, f64::max)))
}

/// Random points of J¹M with s ∈ [s_lo, s_hi].
pub fn jet_space_samples(m: &ModelManifold, count: usize, s_lo: f64, s_hi: f64, seed: u64) -> Vec<Point> {
    let n = m.dim();
    let mut rng = SplitMix::new(seed);
    (0..count)
        .map(|_| {
            let mut x: Vec<f64> = (0..n)
                .map(|i| if m.is_circle(i) { TAU * rng.next_f64() } else { 8.0 * rng.next_f64() - 4.0 })
                .collect();
            x.extend((0..n).map(|_| 8.0 * rng.next_f64() - 4.0));
            x.push(s_lo + (s_hi - s_lo) * rng.next_f64());
            x
        })
        .collect()
}

/// Reeb chords of Λ = ⋃ components for α/s, matched against positive
/// Liouville chords of the lifts Λ × 𝕊¹ with Lee form dθ.
pub fn reeb_correspondence(components: &[LegendrianEmbedding], epsilon: f64, opts: &ChordOptions) -> Result<ReebReport> {
    if !(epsilon > 0.0) {
        return Err(LcsError::Precondition("epsilon must be positive".into()));
    }
    let m = components
        .first()
        .ok_or_else(|| LcsError::Precondition("no Legendrian components".into()))?
        .base
        .clone();
    let n = m.dim();
    for c in components {
        if c.base != m {
            return Err(LcsError::DimensionMismatch("components over different bases".into()));
        }
        for u in torus_grid(c.map.source().dim(), opts.grid.min(32)) {
            let s = c.map.eval(&u)?[2 * n];
            if s < epsilon {
                return Err(LcsError::Precondition(format!("s = {s} < epsilon = {epsilon} at parameter {u:?}")));
            }
        }
    }
    let pts = jet_space_samples(&m, 100, 0.5, 4.0, 0);
    let (e_norm, e_contr) = reeb_identity_residuals(&m, &pts)?;

    let mut reeb = vec![];
    let mut reeb_family_count = 0;
    for (i, ci) in components.iter().enumerate() {
        for (j, cj) in components.iter().enumerate() {
            let found = find_coincidences(&ci.map, &cj.map, i == j, n, opts)?;
            let pos: Vec<RawChord> = found.chords.into_iter().filter(|c| c.s > 0.0).collect();
            let radius = (10.0 * opts.dedup).max(1.5 * TAU / opts.grid as f64);
            let fam = cluster(&pos, ci.map.source(), cj.map.source(), radius);
            let nf = fam.iter().copied().max().map_or(0, |x| x + 1);
            for (c, f) in pos.iter().zip(&fam) {
                reeb.push(ReebChord {
                    from: i,
                    to: j,
                    start_param: c.u.clone(),
                    end_param: c.v.clone(),
                    scale: c.s.exp(),
                    time: c.s,
                    family: reeb_family_count + f,
                });
            }
            reeb_family_count += nf;
        }
    }

    let circle = ModelManifold::torus(1)?;
    let dtheta = FormExpression::dx(circle.clone(), 0)?;
    let popts = PrimitiveOptions { grid: opts.grid, ..Default::default() };
    let lifts: Vec<ExactLagrangian> = components
        .iter()
        .map(|c| ExactLagrangian::certify(lift_legendrian(c, &circle, &dtheta)?, &popts))
        .collect::<Result<_>>()?;
    let mut lift_chords = 0;
    let mut lift_families = 0;
    let mut matched = 0;
    let mut unmatched = 0;
    let mut essential = true;
    let mut max_defect: f64 = 0.0;
    let mut hit = vec![false; reeb_family_count];
    for (i, li) in lifts.iter().enumerate() {
        for (j, lj) in lifts.iter().enumerate() {
            let scan = scan_chords(li, if i == j { None } else { Some(lj) }, opts)?;
            let pos: Vec<&LiouvilleChord> = scan.chords.iter().filter(|c| c.sign == ChordSign::Positive).collect();
            lift_chords += pos.len();
            let mut fams: Vec<usize> = pos.iter().map(|c| c.family).collect();
            fams.sort();
            fams.dedup();
            lift_families += fams.len();
            let kl = components[i].map.source().dim();
            for c in pos {
                let (u, v) = (&c.start_param[..kl], &c.end_param[..kl]);
                let same_theta = (wrap_diff(c.start_param[kl] - c.end_param[kl])).abs() < 1e-9;
                let a = components[i].map.eval(u)?;
                let b = components[j].map.eval(v)?;
                let flowed: Vec<f64> = a[..n].iter().copied().chain(a[n..].iter().map(|x| x * c.t)).collect();
                let err = norm(&base_difference(&m.jet1(), &flowed, &b));
                if same_theta && err < 1e-9 {
                    matched += 1;
                    essential &= c.essential;
                    max_defect = max_defect.max(c.defect.abs());
                    if let Some(r) = reeb.iter().find(|r| {
                        r.from == i
                            && r.to == j
                            && (r.scale - c.t).abs() < 1e-6
                            && components[i].map.source().distance(&r.start_param, u) < 2.0 * TAU / opts.grid as f64
                    }) {
                        hit[r.family] = true;
                    }
                } else {
                    unmatched += 1;
                }
            }
        }
    }
    let unmatched_reeb = hit.iter().filter(|h| !**h).count();
    let pass = e_norm <= 1e-12
        && e_contr <= 1e-12
        && unmatched == 0
        && unmatched_reeb == 0
        && reeb_family_count == lift_families
        && essential;
    Ok(ReebReport {
        epsilon,
        identity_samples: pts.len(),
        max_reeb_normalization_error: e_norm,
        max_reeb_contraction: e_contr,
        reeb_families: reeb_family_count,
        reeb_chords: reeb,
        lift_chords,
        lift_families,
        matched_lift_chords: matched,
        unmatched_lift_chords: unmatched,
        unmatched_reeb_families: unmatched_reeb,
        all_matched_essential: essential,
        max_lift_defect: max_defect,
        pass,
    })
}

/// CSV with one row per chord.
pub fn chords_to_csv(chords: &[LiouvilleChord]) -> Result<String> {
    let nb = chords.first().map_or(0, |c| c.base.len());
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header: Vec<String> = (0..nb).map(|i| format!("base_{i}")).collect();
    header.extend((0..nb).map(|i| format!("start_fiber_{i}")));
    header.extend(["t", "length", "ratio", "defect", "essential", "family", "representative"].map(String::from));
    let csv_err = |e: csv::Error| LcsError::Numerical(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for c in chords {
        let mut row: Vec<String> = c.base.iter().chain(&c.start_fiber).map(|v| v.to_string()).collect();
        row.push(c.t.to_string());
        row.push(c.length.to_string());
        row.push(c.mvt_ratio.map(|r| r.to_string()).unwrap_or_default());
        row.push(c.defect.to_string());
        row.push(c.essential.to_string());
        row.push(c.family.to_string());
        row.push(c.representative.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| LcsError::Numerical(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| LcsError::Numerical(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_nonessential_chord() {
        let (d, s, e, r) = classify_values(3.0, 1.0, 2.0, 1e-8);
        assert_eq!(d, -1.0);
        assert_eq!(s, ChordSign::Positive);
        assert!(!e);
        assert!((r.unwrap() - 2f64.ln() / 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reversed_chord_classification_is_symmetric() {
        let (_, _, e1, r1) = classify_values(3.0, 1.0, 3.0, 1e-8);
        let (_, s2, e2, r2) = classify_values(1.0 / 3.0, 3.0, 1.0, 1e-8);
        assert!(e1 && e2);
        assert_eq!(s2, ChordSign::Negative);
        assert!((r1.unwrap() - r2.unwrap()).abs() < 1e-15);
    }
}
