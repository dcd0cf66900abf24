//! Result files. Every CSV has a fixed header; `bundle.json` records the
//! schema version and which files each method wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::run::{MethodResult, ResultsBundle};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const ROUNDS_COLUMNS: &[&str] = &["round", "width", "val_acc", "uploaded_params", "downloaded_params", "macs"];
pub const FINAL_COLUMNS: &[&str] = &["width", "acc", "macs", "params", "budget_compatible"];
pub const TRADEOFF_COLUMNS: &[&str] = &["width", "lambda", "sa", "ra"];
pub const DOMAIN_COLUMNS: &[&str] = &["domain", "clients", "trained_param_pct"];

fn check_finite(file: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    match values.into_iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::NonFinite(format!("{file}: refusing to write {v}"))),
        None => Ok(()),
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Directory a method writes to: Split-Mix at the root, baselines in a
/// subdirectory named after them.
pub fn method_dir(root: &Path, method: &str) -> PathBuf {
    if method == "splitmix" {
        root.to_path_buf()
    } else {
        root.join(method)
    }
}

fn write_method(root: &Path, m: &MethodResult) -> Result<Vec<&'static str>> {
    let dir = method_dir(root, &m.name);
    fs::create_dir_all(&dir)?;
    check_finite("rounds.csv", m.rounds.iter().flat_map(|r| [r.width, r.val_acc.unwrap_or(0.0)]))?;
    check_finite("final_table.csv", m.final_table.iter().flat_map(|r| [r.width, r.acc]))?;
    let mut files = vec!["rounds.csv", "final_table.csv"];
    write_csv(&dir.join("rounds.csv"), ROUNDS_COLUMNS, &m.rounds)?;
    write_csv(&dir.join("final_table.csv"), FINAL_COLUMNS, &m.final_table)?;
    if let Some(t) = &m.tradeoff {
        check_finite("tradeoff.csv", t.iter().flat_map(|p| [p.width, p.lambda, p.sa, p.ra]))?;
        write_csv(&dir.join("tradeoff.csv"), TRADEOFF_COLUMNS, t)?;
        files.push("tradeoff.csv");
    }
    if let Some(d) = &m.domain_report {
        check_finite("domain_report.csv", d.iter().map(|r| r.trained_param_pct))?;
        write_csv(&dir.join("domain_report.csv"), DOMAIN_COLUMNS, d)?;
        files.push("domain_report.csv");
    }
    if let Some(set) = &m.checkpoint {
        set.save(&dir.join("checkpoint"))?;
        files.push("checkpoint");
    }
    Ok(files)
}

/// Write every method's files plus `config_resolved.json` and
/// `bundle.json` under `root`.
pub fn write_bundle(bundle: &ResultsBundle, root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    fs::write(root.join("config_resolved.json"), serde_json::to_string_pretty(&bundle.config)? + "\n")?;
    let mut methods = Vec::new();
    for m in &bundle.methods {
        let files = write_method(root, m)?;
        let dir = if m.name == "splitmix" { ".".to_string() } else { m.name.clone() };
        methods.push(json!({ "name": m.name, "dir": dir, "files": files }));
    }
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "seed": bundle.config.seed,
        "columns": {
            "rounds.csv": ROUNDS_COLUMNS,
            "final_table.csv": FINAL_COLUMNS,
            "tradeoff.csv": TRADEOFF_COLUMNS,
            "domain_report.csv": DOMAIN_COLUMNS,
        },
        "methods": methods,
    });
    fs::write(root.join("bundle.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
