//! Experiment runner over `hofer_core`: named experiments, JSON reports and
//! CSV curves.

pub mod config;
pub mod experiments;

pub use config::{CliError, ExperimentConfig};
pub use experiments::{find, registry, Experiment};

use hofer_core::report::{Curve, Num};
use hofer_core::Report;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit code for a finished run: 0 iff every verdict passed.
pub fn verdict_code(rep: &Report) -> i32 {
    if rep.all_passed() {
        0
    } else {
        1
    }
}

/// Runs the configured experiment and embeds the resolved config, the
/// registered claim and the wall time in the report. Nothing is written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let reg = registry();
    let exp = find(&reg, None, &cfg.experiment).ok_or_else(|| CliError::Config(format!("unknown experiment {}", cfg.experiment)))?;
    let start = Instant::now();
    let (mut rep, resolved) = exp.run(&cfg.params, cfg.seed)?;
    let details = std::mem::take(&mut rep.config);
    rep.experiment = exp.id.to_string();
    rep.claim = exp.claim.to_string();
    rep.config = json!({ "experiment": exp.id, "seed": cfg.seed, "params": resolved });
    if !details.is_null() {
        rep.config["details"] = details;
    }
    rep.runtime_ms = Some(Num(start.elapsed().as_secs_f64() * 1e3));
    Ok(rep)
}

/// Writes the report to `cfg.json` and its curves to `cfg.csv`.
pub fn write_outputs(cfg: &ExperimentConfig, rep: &Report) -> Result<(), CliError> {
    if let Some(p) = &cfg.json {
        std::fs::write(p, rep.to_json() + "\n").map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &cfg.csv {
        if rep.curves.is_empty() {
            return Err(CliError::Config(format!("{} produces no curves for --csv", rep.experiment)));
        }
        if p.as_os_str() == "-" {
            let mut out = std::io::stdout().lock();
            for (name, c) in &rep.curves {
                if rep.curves.len() > 1 {
                    writeln!(out, "# {name}").map_err(|e| CliError::Output(e.to_string()))?;
                }
                write_curve(&mut out, c)?;
            }
        } else {
            for (name, c) in &rep.curves {
                let path = curve_path(p, name, rep.curves.len());
                let f = std::fs::File::create(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
                write_curve(f, c)?;
            }
        }
    }
    Ok(())
}

/// One curve keeps the given path; several get `<stem>_<curve>.<ext>`.
pub fn curve_path(base: &Path, name: &str, count: usize) -> PathBuf {
    if count <= 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    base.with_file_name(format!("{stem}_{name}.{ext}"))
}

fn write_curve<W: Write>(w: W, c: &Curve) -> Result<(), CliError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Output(e.to_string());
    wr.write_record(&c.columns).map_err(err)?;
    for row in &c.rows {
        wr.write_record(row.iter().map(|v| format!("{:?}", v.0))).map_err(err)?;
    }
    wr.flush().map_err(|e| CliError::Output(e.to_string()))
}

/// Report JSON with the wall time removed, for reproducibility checks.
pub fn deterministic_json(rep: &Report) -> String {
    let mut r = rep.clone();
    r.runtime_ms = None;
    r.to_json()
}
