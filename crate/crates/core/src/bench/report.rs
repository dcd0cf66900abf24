//! Text rendering of a results directory.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::output::method_dir;
use crate::error::{Error, Result};

const METHODS: &[&str] = &["splitmix", "sheterofl", "fedavg_individual"];

struct Table {
    method: &'static str,
    /// `(width, acc, macs, params)` as written.
    rows: Vec<[String; 4]>,
}

fn read_rows(path: &Path, cols: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| Error::Invalid(format!("{}: missing column {c}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect());
    }
    Ok(out)
}

fn short(v: &str) -> String {
    match v.parse::<f64>() {
        Ok(x) if x.fract() != 0.0 => format!("{x:.4}"),
        _ => v.to_string(),
    }
}

fn human(v: &str) -> String {
    match v.parse::<f64>() {
        Ok(x) if x >= 1e6 => format!("{:.2}M", x / 1e6),
        Ok(x) if x >= 1e3 => format!("{:.1}K", x / 1e3),
        _ => v.to_string(),
    }
}

/// Render the width table (methods side by side) and per-domain report of
/// a results directory. Missing pieces produce warnings; a directory with
/// no final table at all is an error.
pub fn render_report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a results directory", dir.display())));
    }
    let mut tables = Vec::new();
    for &m in METHODS {
        let path = method_dir(dir, m).join("final_table.csv");
        if !path.exists() {
            continue;
        }
        match read_rows(&path, &["width", "acc", "macs", "params"]) {
            Ok(rows) => tables.push(Table {
                method: m,
                rows: rows.into_iter().map(|r| [r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone()]).collect(),
            }),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if tables.is_empty() {
        return Err(Error::Config(format!("no final_table.csv under {}", dir.display())));
    }
    let mut widths: Vec<String> = Vec::new();
    for t in &tables {
        for r in &t.rows {
            if !widths.contains(&r[0]) {
                widths.push(r[0].clone());
            }
        }
    }
    widths.sort_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
    let mut out = String::new();
    let mut head = format!("{:>6}", "width");
    let mut rule = "-".repeat(6);
    for t in &tables {
        let _ = write!(head, " | {:^30}", t.method);
        rule.push_str(&format!("-+-{}", "-".repeat(30)));
    }
    let mut sub = format!("{:>6}", "");
    for _ in &tables {
        let _ = write!(sub, " | {:>8} {:>10} {:>10}", "acc", "MACs", "params");
    }
    let _ = writeln!(out, "{head}\n{sub}\n{rule}");
    for w in &widths {
        let mut line = format!("{:>6}", short(w));
        for t in &tables {
            match t.rows.iter().find(|r| &r[0] == w) {
                Some(r) => {
                    let _ = write!(line, " | {:>8} {:>10} {:>10}", short(&r[1]), human(&r[2]), human(&r[3]));
                }
                None => {
                    let _ = write!(line, " | {:>8} {:>10} {:>10}", "-", "-", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }
    for &m in METHODS {
        let path = method_dir(dir, m).join("domain_report.csv");
        if !path.exists() {
            continue;
        }
        match read_rows(&path, &["domain", "clients", "trained_param_pct"]) {
            Ok(rows) => {
                let _ = writeln!(out, "\n{m}: locally trained parameters per domain");
                for r in rows {
                    let _ = writeln!(out, "  domain {:>2} ({:>2} clients): {:>6.2}%", r[0], r[1], r[2].parse::<f64>().unwrap_or(f64::NAN));
                }
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    Ok(out)
}
