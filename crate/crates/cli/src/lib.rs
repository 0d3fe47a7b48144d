//! Scene-driven front end for `lcs-core`.
//!
//! `lcslab <command> SCENE` reads a scene file, runs one named pipeline and
//! writes a `report-v1` JSON report (plus CSV exports) to the output
//! directory. The exit status is 0 when every verdict passes, 2 when some
//! numeric verdict fails, and 1 when the scene cannot be read or parsed.

pub mod commands;
pub mod expr;
pub mod report;
pub mod scene;

use clap::Parser;
use commands::{Command, Context, RunError};
use report::{Report, Tolerances};
use std::path::PathBuf;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "LCSLAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "lcslab", version, about = "Exact Lagrangians, Liouville chords and conformal straightening from scene files")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Scene file (alternative to --scene).
    #[arg(value_name = "SCENE")]
    pub scene_path: Option<PathBuf>,
    #[arg(long = "scene", value_name = "PATH")]
    pub scene: Option<PathBuf>,
    /// Output directory for reports and CSV files.
    #[arg(long, value_name = "DIR", env = OUT_ENV, default_value = "lcslab-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Caps the worker threads.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides one tolerance; repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    pub tol_override: Vec<String>,
    /// Also write the optional CSV exports (extension field, flow samples).
    #[arg(long)]
    pub csv: bool,
}

/// Runs one invocation and returns the exit status.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok((report, path)) => {
            for v in &report.verdicts {
                println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
            }
            println!("report: {}", path.display());
            if report.pass {
                0
            } else {
                2
            }
        }
        Err(msg) => {
            eprintln!("lcslab: {msg}");
            1
        }
    }
}

fn run_inner(cli: &Cli) -> Result<(Report, PathBuf), String> {
    let path = match (&cli.scene_path, &cli.scene) {
        (Some(_), Some(_)) => return Err("give the scene either positionally or with --scene, not both".into()),
        (None, None) => return Err("no scene file given".into()),
        (Some(p), None) | (None, Some(p)) => p.clone(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err("--threads must be at least 1".into());
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let bytes = std::fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| format!("{} is not UTF-8", path.display()))?;
    let scene = scene::parse_scene(text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut tol = Tolerances::default();
    for (k, v) in &scene.tolerances {
        tol.set(k, *v).map_err(|e| format!("{}: scene error at /tolerances/{k}: {e}", path.display()))?;
    }
    for o in &cli.tol_override {
        tol.apply_override(o).map_err(|e| format!("--tol-override: {e}"))?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| format!("cannot create {}: {e}", cli.out.display()))?;
    let mut report = Report::new(cli.command.name(), &scene.name, &bytes, cli.seed, tol.clone());
    let cx = Context { scene: &scene, seed: cli.seed, tol: &tol, out: &cli.out, csv: cli.csv };
    commands::run(cli.command, &cx, &mut report).map_err(|e| match e {
        RunError::Scene(s) => format!("{}: {s}", path.display()),
        RunError::Io(e) => format!("i/o error: {e}"),
    })?;
    let out = report.write(&cli.out).map_err(|e| format!("cannot write report: {e}"))?;
    Ok((report, out))
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/forms.md")]
    mod forms {}
    #[doc = include_str!("../../../book/src/lagrangians.md")]
    mod lagrangians {}
    #[doc = include_str!("../../../book/src/chords.md")]
    mod chords {}
    #[doc = include_str!("../../../book/src/extension.md")]
    mod extension {}
    #[doc = include_str!("../../../book/src/moser.md")]
    mod moser {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
