//! Scene files: the declarative input of every subcommand.
//!
//! A scene is a JSON object with `"schema": "scene-v1"`. Unknown fields are
//! rejected, and every error carries the JSON pointer of the offending value.

use crate::expr::{self, base_vars, param_vars, total_vars};
use lcs_core::chords::{ChordOptions, ExactLagrangian};
use lcs_core::extension::ExtensionOptions;
use lcs_core::lagrangian::{
    beta_graph, example_torus_1, example_torus_2, lift_legendrian, translate_by_form, zero_section, LegendrianEmbedding,
    ParametricEmbedding, PrimitiveOptions,
};
use lcs_core::moser::{constant_ball, MoserProblem};
use lcs_core::{CotangentLcsStructure, FormExpression, ModelManifold, ScalarField, SmoothMap, StructureRef};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub const SCENE_SCHEMA: &str = "scene-v1";

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub structure: Option<StructureSpec>,
    #[serde(default)]
    pub lagrangian: Option<EmbeddingSpec>,
    /// Second Lagrangian for two-sided chord scans.
    #[serde(default)]
    pub second: Option<EmbeddingSpec>,
    #[serde(default)]
    pub extension: Option<ExtensionSpec>,
    #[serde(default)]
    pub moser: Option<MoserSpec>,
    #[serde(default)]
    pub legendrian: Option<LegendrianSpec>,
    #[serde(default)]
    pub straighten: Option<StraightenSpec>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub expect: Expect,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    /// Number of circle factors of the base torus.
    pub base_dim: usize,
    /// Coefficients of the Lee form on the base, in q1..qn.
    pub beta: Vec<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    /// One of example-torus-1, example-torus-2, beta-graph, zero-section, legendrian-lift.
    #[serde(default)]
    pub library: Option<String>,
    /// Function on the base for beta-graph and legendrian-lift.
    #[serde(default)]
    pub f: Option<String>,
    /// Explicit map L → T*M: n base then n fiber components in u1..un.
    #[serde(default)]
    pub coordinates: Option<Vec<String>>,
    /// Declared primitive on L, in u1..un.
    #[serde(default)]
    pub primitive: Option<String>,
    /// Fiber translation by c·β.
    #[serde(default)]
    pub translate: Option<f64>,
    /// Dimension of M for legendrian-lift (the lift lives over M × S¹).
    #[serde(default)]
    pub base_dim: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec {
    /// h on T*M in q, p, r; or omitted to extend the primitive.
    #[serde(default)]
    pub h: Option<String>,
    /// Tube width of the near-Lagrangian extension when `h` is omitted.
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub base_per_axis: Option<usize>,
    #[serde(default)]
    pub directions: Option<usize>,
    #[serde(default)]
    pub radii: Option<usize>,
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default)]
    pub collar_width: Option<f64>,
    #[serde(default)]
    pub margin: Option<f64>,
}

fn default_width() -> f64 {
    0.12
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MoserSpec {
    /// g on T*M in q, p, r.
    #[serde(default)]
    pub g: Option<String>,
    #[serde(default)]
    pub constant_ball: Option<ConstantBall>,
    /// g ≡ 1 beyond this fiber radius.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_seed_radius")]
    pub seed_radius: f64,
    #[serde(default = "default_pullback")]
    pub pullback_samples: usize,
    /// Cell count of the radial degeneracy scan along a fiber ray.
    #[serde(default = "default_cells")]
    pub radial_cells: usize,
}

fn default_radius() -> f64 {
    4.0
}
fn default_seeds() -> usize {
    1000
}
fn default_seed_radius() -> f64 {
    5.0
}
fn default_pullback() -> usize {
    256
}
fn default_cells() -> usize {
    400
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantBall {
    pub c: f64,
    pub r_in: f64,
    pub r_out: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LegendrianSpec {
    pub base_dim: usize,
    /// Functions whose 1-jet graphs are lifted, in q1..qn.
    pub components: Vec<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StraightenSpec {
    /// Closed form η′ on the base, in q1..qn; defaults to the Lee form.
    #[serde(default)]
    pub eta_prime: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default = "g128")]
    pub lagrangian: usize,
    #[serde(default = "g128")]
    pub primitive: usize,
    #[serde(default = "g64")]
    pub chords: usize,
}

fn g128() -> usize {
    128
}
fn g64() -> usize {
    64
}

impl Default for Grids {
    fn default() -> Self {
        Grids { lagrangian: 128, primitive: 128, chords: 64 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    #[serde(default)]
    pub degree: Option<i64>,
    #[serde(default)]
    pub max_displacement: Option<f64>,
    /// Expected chord factor (normalized to t ≥ 1) of every chord found.
    #[serde(default)]
    pub chord_t: Option<f64>,
    #[serde(default)]
    pub chord_families: Option<usize>,
}

/// A scene error, located by JSON pointer.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneError {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "scene error at {p}: {}", self.message)
    }
}

impl std::error::Error for SceneError {}

fn err<T>(pointer: &str, message: impl Into<String>) -> Result<T, SceneError> {
    Err(SceneError { pointer: pointer.into(), message: message.into() })
}

fn escape(seg: &str) -> String {
    seg.replace('~', "~0").replace('/', "~1")
}

/// Parses scene text; errors carry the JSON pointer of the failing value.
pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            use serde_path_to_error::Segment;
            match seg {
                Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
                Segment::Map { key } => pointer.push_str(&format!("/{}", escape(key))),
                Segment::Enum { variant } => pointer.push_str(&format!("/{}", escape(variant))),
                Segment::Unknown => {}
            }
        }
        SceneError { pointer, message: e.inner().to_string() }
    })?;
    if scene.schema != SCENE_SCHEMA {
        return err("/schema", format!("expected \"{SCENE_SCHEMA}\", found \"{}\"", scene.schema));
    }
    if scene.name.is_empty() || scene.name.contains(['/', '\\']) {
        return err("/name", "name must be non-empty and contain no path separators");
    }
    Ok(scene)
}

fn parse_field(src: &str, names: &[String], domain: ModelManifold, pointer: &str) -> Result<ScalarField, SceneError> {
    expr::field(src, names, domain).map_err(|e| SceneError { pointer: pointer.into(), message: format!("expression {e}") })
}

fn torus(n: usize, pointer: &str) -> Result<ModelManifold, SceneError> {
    if n == 0 || n > 3 {
        return err(pointer, format!("base dimension must be 1, 2 or 3, got {n}"));
    }
    ModelManifold::torus(n).map_err(|e| SceneError { pointer: pointer.into(), message: e.to_string() })
}

fn one_form(coeffs: &[String], base: &ModelManifold, pointer: &str) -> Result<FormExpression, SceneError> {
    let n = base.dim();
    if coeffs.len() != n {
        return err(pointer, format!("expected {n} coefficients, got {}", coeffs.len()));
    }
    let fields = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| parse_field(c, &base_vars(n), base.clone(), &format!("{pointer}/{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    FormExpression::one_form(base.clone(), &fields).map_err(|e| SceneError { pointer: pointer.into(), message: e.to_string() })
}

/// Everything a subcommand needs, built from a scene.
pub struct Built {
    pub structure: Option<StructureRef>,
    pub lagrangian: Option<ParametricEmbedding>,
    pub second: Option<ParametricEmbedding>,
}

impl Scene {
    /// The declared Lee form on the base, before any closedness check.
    pub fn lee_form(&self) -> Result<Option<FormExpression>, SceneError> {
        let Some(s) = &self.structure else { return Ok(None) };
        let base = torus(s.base_dim, "/structure/base_dim")?;
        Ok(Some(one_form(&s.beta, &base, "/structure/beta")?))
    }

    /// The structure declared by the scene, if any.
    pub fn structure(&self) -> Result<Option<StructureRef>, SceneError> {
        let Some(s) = &self.structure else { return Ok(None) };
        let base = torus(s.base_dim, "/structure/base_dim")?;
        let beta = one_form(&s.beta, &base, "/structure/beta")?;
        let st = CotangentLcsStructure::new(base, beta).map_err(|e| SceneError { pointer: "/structure/beta".into(), message: e.to_string() })?;
        Ok(Some(Arc::new(st)))
    }

    pub fn build(&self) -> Result<Built, SceneError> {
        let structure = self.structure()?;
        let lagrangian = match &self.lagrangian {
            Some(spec) => Some(embedding(spec, structure.as_ref(), "/lagrangian")?),
            None => None,
        };
        let second = match &self.second {
            Some(spec) => Some(embedding(spec, structure.as_ref(), "/second")?),
            None => None,
        };
        if let (Some(a), Some(b)) = (&lagrangian, &second) {
            if a.structure().total() != b.structure().total() {
                return err("/second", "both Lagrangians must live in the same cotangent bundle");
            }
        }
        Ok(Built { structure, lagrangian, second })
    }

    pub fn require_lagrangian(&self, built: &Built) -> Result<ParametricEmbedding, SceneError> {
        built.lagrangian.clone().ok_or_else(|| SceneError { pointer: "/lagrangian".into(), message: "this command needs a Lagrangian".into() })
    }

    /// The structure the commands act on: the declared one, else that of the Lagrangian.
    pub fn working_structure(&self, built: &Built) -> Result<StructureRef, SceneError> {
        if let Some(l) = &built.lagrangian {
            return Ok(l.structure().clone());
        }
        built.structure.clone().ok_or_else(|| SceneError { pointer: "/structure".into(), message: "scene declares neither a structure nor a Lagrangian".into() })
    }

    pub fn moser_problem(&self, s: &StructureRef) -> Result<MoserProblem, SceneError> {
        let Some(m) = &self.moser else { return err("/moser", "this command needs a moser section") };
        match (&m.g, &m.constant_ball) {
            (Some(_), Some(_)) => err("/moser", "give either g or constant_ball, not both"),
            (None, None) => err("/moser", "give g or constant_ball"),
            (Some(g), None) => {
                let f = parse_field(g, &total_vars(s.n()), s.total().clone(), "/moser/g")?;
                MoserProblem::new(s.clone(), f, m.radius).map_err(|e| SceneError { pointer: "/moser".into(), message: e.to_string() })
            }
            (None, Some(b)) => constant_ball(s.clone(), b.c, b.r_in, b.r_out)
                .map_err(|e| SceneError { pointer: "/moser/constant_ball".into(), message: e.to_string() }),
        }
    }

    pub fn extension_h(&self, s: &StructureRef) -> Result<Option<ScalarField>, SceneError> {
        match self.extension.as_ref().and_then(|x| x.h.as_ref()) {
            Some(h) => Ok(Some(parse_field(h, &total_vars(s.n()), s.total().clone(), "/extension/h")?)),
            None => Ok(None),
        }
    }

    pub fn extension_options(&self, n: usize, tol: &crate::report::Tolerances) -> ExtensionOptions {
        let mut o = ExtensionOptions::for_dim(n);
        if let Some(x) = &self.extension {
            o.base_per_axis = x.base_per_axis.unwrap_or(o.base_per_axis);
            o.directions = x.directions.unwrap_or(o.directions);
            o.radii = x.radii.unwrap_or(o.radii);
            o.r_max = x.r_max.unwrap_or(o.r_max);
            o.margin = x.margin.unwrap_or(o.margin);
            if let Some(w) = x.collar_width {
                o.collar.width = w;
                o.collar.zero_width = w;
            }
        }
        o.chords = self.chord_options(tol);
        o
    }

    pub fn eta_prime(&self, s: &StructureRef) -> Result<Option<FormExpression>, SceneError> {
        match self.straighten.as_ref().and_then(|x| x.eta_prime.as_ref()) {
            Some(c) => Ok(Some(one_form(c, s.base(), "/straighten/eta_prime")?)),
            None => Ok(None),
        }
    }

    pub fn legendrians(&self) -> Result<(ModelManifold, Vec<LegendrianEmbedding>, f64), SceneError> {
        let Some(l) = &self.legendrian else { return err("/legendrian", "this command needs a legendrian section") };
        let base = torus(l.base_dim, "/legendrian/base_dim")?;
        if l.components.is_empty() {
            return err("/legendrian/components", "at least one component is needed");
        }
        let comps = l
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let p = format!("/legendrian/components/{i}");
                let f = parse_field(c, &base_vars(l.base_dim), base.clone(), &p)?;
                LegendrianEmbedding::jet_graph(&f).map_err(|e| SceneError { pointer: p, message: e.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((base, comps, l.epsilon))
    }

    pub fn primitive_options(&self, tol: &crate::report::Tolerances) -> PrimitiveOptions {
        PrimitiveOptions { grid: self.grids.primitive, tolerance: tol.get("exactness"), ..Default::default() }
    }

    pub fn chord_options(&self, tol: &crate::report::Tolerances) -> ChordOptions {
        ChordOptions {
            grid: self.grids.chords,
            dedup: tol.get("chord_dedup"),
            equality_band: tol.get("mvt_band"),
            ..Default::default()
        }
    }
}

/// Lifts of the 1-jet graphs to T*(M × S¹) with Lee form dθ.
pub fn lifts(comps: &[LegendrianEmbedding]) -> lcs_core::Result<Vec<ParametricEmbedding>> {
    let s1 = ModelManifold::torus(1)?;
    let dtheta = FormExpression::dx(s1.clone(), 0)?;
    comps.iter().map(|l| lift_legendrian(l, &s1, &dtheta)).collect()
}

fn embedding(spec: &EmbeddingSpec, s: Option<&StructureRef>, at: &str) -> Result<ParametricEmbedding, SceneError> {
    let wrap = |e: lcs_core::LcsError| SceneError { pointer: at.into(), message: e.to_string() };
    let need_s = || s.cloned().ok_or_else(|| SceneError { pointer: "/structure".into(), message: "this Lagrangian needs a structure section".into() });
    let e = match (&spec.library, &spec.coordinates) {
        (Some(_), Some(_)) => return err(at, "give either library or coordinates, not both"),
        (None, None) => return err(at, "give library or coordinates"),
        (Some(name), None) => {
            let needs_f = matches!(name.as_str(), "beta-graph" | "legendrian-lift");
            if spec.base_dim.is_some() && name != "legendrian-lift" {
                return err(&format!("{at}/base_dim"), "base_dim is only used by legendrian-lift");
            }
            if spec.f.is_some() && !needs_f {
                return err(&format!("{at}/f"), format!("{name} takes no f"));
            }
            if spec.primitive.is_some() {
                return err(&format!("{at}/primitive"), "library Lagrangians carry their own primitive");
            }
            match name.as_str() {
                "example-torus-1" | "example-torus-2" => {
                    let e = if name == "example-torus-1" { example_torus_1() } else { example_torus_2() }.map_err(wrap)?;
                    if let Some(s) = s {
                        if !same_structure(s, e.structure()) {
                            return err("/structure", format!("{name} lives on T*T² with Lee form dq2"));
                        }
                    }
                    e
                }
                "zero-section" => zero_section(&need_s()?).map_err(wrap)?,
                "beta-graph" => {
                    let s = need_s()?;
                    let Some(f) = &spec.f else { return err(at, "beta-graph needs f") };
                    let f = parse_field(f, &base_vars(s.n()), s.base().clone(), &format!("{at}/f"))?;
                    beta_graph(&f, &s).map_err(wrap)?
                }
                "legendrian-lift" => {
                    let Some(f) = &spec.f else { return err(at, "legendrian-lift needs f") };
                    let m = torus(spec.base_dim.unwrap_or(1), &format!("{at}/base_dim"))?;
                    let g = parse_field(f, &base_vars(m.dim()), m.clone(), &format!("{at}/f"))?;
                    let l = LegendrianEmbedding::jet_graph(&g).map_err(wrap)?;
                    lifts(&[l]).map_err(wrap)?.remove(0)
                }
                other => {
                    return err(
                        &format!("{at}/library"),
                        format!("unknown library name \"{other}\" (expected example-torus-1, example-torus-2, beta-graph, zero-section or legendrian-lift)"),
                    )
                }
            }
        }
        (None, Some(coords)) => {
            let s = need_s()?;
            if spec.f.is_some() {
                return err(&format!("{at}/f"), "f is only used with a library Lagrangian");
            }
            let n = s.n();
            if coords.len() != 2 * n {
                return err(&format!("{at}/coordinates"), format!("expected {} components, got {}", 2 * n, coords.len()));
            }
            let fields = coords
                .iter()
                .enumerate()
                .map(|(i, c)| parse_field(c, &param_vars(n), s.base().clone(), &format!("{at}/coordinates/{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let map = SmoothMap::new(s.base().clone(), s.total().clone(), move |u| fields.iter().map(|f| f.eval_jets(u)).collect());
            let mut e = ParametricEmbedding::new(s.clone(), map).map_err(wrap)?.named("explicit");
            if let Some(p) = &spec.primitive {
                let f = parse_field(p, &param_vars(n), s.base().clone(), &format!("{at}/primitive"))?;
                e = e.with_primitive(f).map_err(wrap)?;
            }
            e
        }
    };
    match spec.translate {
        Some(c) if c != 0.0 => {
            let beta = e.structure().beta_base().clone();
            translate_by_form(&e, &beta, c).map_err(|x| SceneError { pointer: format!("{at}/translate"), message: x.to_string() })
        }
        _ => Ok(e),
    }
}

fn same_structure(a: &StructureRef, b: &StructureRef) -> bool {
    if a.base() != b.base() {
        return false;
    }
    lcs_core::sampling::halton_points(a.base(), 16, 1.0).iter().all(|q| match (a.beta_at(q), b.beta_at(q)) {
        (Ok(x), Ok(y)) => x.iter().zip(&y).all(|(u, v)| (u - v).abs() < 1e-12),
        _ => false,
    })
}

/// Certifies a Lagrangian for chord work.
pub fn certify(e: &ParametricEmbedding, opts: &PrimitiveOptions) -> lcs_core::Result<ExactLagrangian> {
    ExactLagrangian::certify(e.clone(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointer_for_type_errors() {
        let e = parse_scene(r#"{"schema": "scene-v1", "name": "x", "grids": {"chords": "many"}}"#).unwrap_err();
        assert_eq!(e.pointer, "/grids/chords");
    }

    #[test]
    fn pointer_for_unknown_fields() {
        let e = parse_scene(r#"{"schema": "scene-v1", "name": "x", "lagrangian": {"libary": "zero-section"}}"#).unwrap_err();
        assert_eq!(e.pointer, "/lagrangian/libary");
        assert!(e.message.contains("libary"));
    }

    #[test]
    fn pointer_for_expressions() {
        let s = parse_scene(r#"{"schema": "scene-v1", "name": "x", "structure": {"base_dim": 1, "beta": ["1 +"]}}"#).unwrap();
        assert_eq!(s.build().err().unwrap().pointer, "/structure/beta/0");
    }

    #[test]
    fn wrong_schema_version() {
        assert_eq!(parse_scene(r#"{"schema": "scene-v0", "name": "x"}"#).unwrap_err().pointer, "/schema");
    }
}
