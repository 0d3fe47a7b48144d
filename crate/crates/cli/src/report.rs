//! `report-v1`: the JSON report written by every subcommand.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const REPORT_SCHEMA: &str = "report-v1";

/// Effective tolerances: defaults, then scene values, then command-line overrides.
#[derive(Clone, Debug, Serialize)]
pub struct Tolerances(pub BTreeMap<String, f64>);

impl Default for Tolerances {
    fn default() -> Self {
        use lcs_core::tolerances as t;
        let pairs = [
            ("closedness", t::CLOSEDNESS),
            ("lagrangian", t::LAGRANGIAN),
            ("exactness", t::EXACTNESS),
            ("chord_dedup", t::CHORD_DEDUP),
            ("mvt_band", t::MVT_EQUALITY_BAND),
            ("lift_defect", 1e-8),
            ("collar_match", t::EXT_COLLAR_MATCH),
            ("fiber_drift", t::FIBER_DRIFT),
            ("pullback_residual", t::PULLBACK_RESIDUAL),
            ("radial_factor", 1e-6),
            ("nondegeneracy", 1e-12),
        ];
        Tolerances(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

impl Tolerances {
    pub fn get(&self, key: &str) -> f64 {
        self.0[key]
    }

    /// Sets a known key; unknown keys are an error naming the valid ones.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), String> {
        if !self.0.contains_key(key) {
            return Err(format!("unknown tolerance `{key}` (known: {})", self.0.keys().cloned().collect::<Vec<_>>().join(", ")));
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(format!("tolerance `{key}` must be a finite non-negative number"));
        }
        self.0.insert(key.into(), value);
        Ok(())
    }

    /// Parses `KEY=VAL`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), String> {
        let (k, v) = spec.split_once('=').ok_or_else(|| format!("expected KEY=VAL, got `{spec}`"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
        self.set(k.trim(), v)
    }
}

/// One pass/fail decision with the number behind it.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub detail: String,
}

impl Verdict {
    /// Passes when value ≤ bound.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Verdict { name: name.into(), pass: value <= bound, value: Some(value), bound: Some(bound), detail: format!("{value:.6e} ≤ {bound:.1e}") }
    }

    /// Passes when value < bound.
    pub fn below(name: &str, value: f64, bound: f64) -> Self {
        Verdict { name: name.into(), pass: value < bound, value: Some(value), bound: Some(bound), detail: format!("{value:.9} < {bound}") }
    }

    pub fn flag(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Verdict { name: name.into(), pass, value: None, bound: None, detail: detail.into() }
    }

    pub fn counted(name: &str, pass: bool, value: f64, detail: impl Into<String>) -> Self {
        Verdict { name: name.into(), pass, value: Some(value), bound: None, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SceneInfo {
    pub name: String,
    pub digest: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub scene: SceneInfo,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub pass: bool,
    pub verdicts: Vec<Verdict>,
    pub results: BTreeMap<String, Value>,
    pub diagnostics: Vec<String>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub timestamp: String,
}

/// `sha256:` followed by the hex digest of the scene bytes.
pub fn digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let hex: String = d.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

pub fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".into())
}

impl Report {
    pub fn new(command: &str, name: &str, scene_bytes: &[u8], seed: u64, tolerances: Tolerances) -> Self {
        Report {
            schema: REPORT_SCHEMA,
            command: command.into(),
            scene: SceneInfo { name: name.into(), digest: digest(scene_bytes) },
            seed,
            tolerances,
            pass: true,
            verdicts: vec![],
            results: BTreeMap::new(),
            diagnostics: vec![],
            artifacts: vec![],
            timestamp: String::new(),
        }
    }

    pub fn verdict(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    pub fn result(&mut self, key: &str, v: impl Serialize) {
        let value = serde_json::to_value(v).unwrap_or_else(|e| Value::String(format!("unserializable: {e}")));
        self.results.insert(key.into(), value);
    }

    /// Records a library error as a failed verdict.
    pub fn failure(&mut self, stage: &str, e: &lcs_core::LcsError) {
        self.diagnostics.push(format!("{stage}: {e}"));
        self.verdicts.push(Verdict::flag(stage, false, e.to_string()));
    }

    pub fn file_stem(&self) -> String {
        format!("{}.{}", self.scene.name, self.command)
    }

    /// Writes an artifact next to the report and records its name.
    pub fn artifact(&mut self, out: &Path, suffix: &str, contents: &[u8]) -> std::io::Result<()> {
        let name = format!("{}.{suffix}", self.file_stem());
        std::fs::write(out.join(&name), contents)?;
        self.artifacts.push(name);
        Ok(())
    }

    /// Finalizes verdicts, stamps the time and writes `<scene>.<command>.json`.
    pub fn write(&mut self, out: &Path) -> std::io::Result<PathBuf> {
        self.pass = !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass);
        self.timestamp = timestamp();
        let path = out.join(format!("{}.json", self.file_stem()));
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Report text with the timestamp removed, for determinism checks.
pub fn without_timestamp(text: &str) -> serde_json::Result<Value> {
    let mut v: Value = serde_json::from_str(text)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("timestamp");
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut t = Tolerances::default();
        t.apply_override("lagrangian=1e-6").unwrap();
        assert_eq!(t.get("lagrangian"), 1e-6);
        assert!(t.apply_override("nope=1").is_err());
        assert!(t.apply_override("lagrangian").is_err());
        assert!(t.apply_override("lagrangian=-1").is_err());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest(b"abc"), "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
