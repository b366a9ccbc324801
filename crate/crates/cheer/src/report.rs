//! Aggregation of per-seed result files into `aggregate.json` and
//! `table.txt`. Output depends only on the seed files, so re-running on an
//! unchanged directory reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cheer_core::experiment::{aggregate, Aggregate, MeanStd, Method, SeedResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::{read_json, write_json};

pub const SEEDS_DIR: &str = "seeds";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const TABLE_TXT: &str = "table.txt";

pub fn seed_file_name(seed: u64) -> String {
    format!("seed-{seed}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub seed: u64,
    /// Relative to the results directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    /// Every per-seed file summarized below.
    pub sources: Vec<Source>,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-seed files under `dir/seeds`, ordered by seed.
pub fn seed_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let seeds = dir.join(SEEDS_DIR);
    let entries = match fs::read_dir(&seeds) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::Io { path: seeds, source: e }),
    };
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(CliError::io(&seeds))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seed) = name
            .strip_prefix("seed-")
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<u64>().ok())
        {
            out.push((seed, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_results(dir: &Path) -> Result<(Vec<SeedResult>, Vec<Source>)> {
    let mut results = Vec::new();
    let mut sources = Vec::new();
    for (seed, path) in seed_files(dir)? {
        let bytes = fs::read(&path).map_err(CliError::io(&path))?;
        let r: SeedResult = serde_json::from_slice(&bytes).map_err(CliError::json(&path))?;
        if r.seed != seed {
            return Err(CliError::format(&path, format!("file holds seed {}", r.seed)));
        }
        sources.push(Source {
            seed,
            file: format!("{SEEDS_DIR}/{}", seed_file_name(seed)),
            sha256: sha256_hex(&bytes),
        });
        results.push(r);
    }
    Ok((results, sources))
}

/// Reads `dir/seeds/*.json`, writes `aggregate.json` and `table.txt`.
pub fn write_report(dir: &Path) -> Result<ReportFile> {
    let (results, sources) = read_results(dir)?;
    if results.is_empty() {
        return Err(CliError::Config(format!(
            "no per-seed results under {}",
            dir.join(SEEDS_DIR).display()
        )));
    }
    let report = ReportFile {
        sources,
        aggregate: aggregate(&results),
    };
    write_json(&dir.join(AGGREGATE_JSON), &report)?;
    let table = dir.join(TABLE_TXT);
    fs::write(&table, render_table(&report.aggregate)).map_err(CliError::io(&table))?;
    Ok(report)
}

pub fn load_report(dir: &Path) -> Result<ReportFile> {
    read_json(&dir.join(AGGREGATE_JSON))
}

fn cell(m: MeanStd) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

/// Mean ± std per metric and method; the last column is the one-tailed
/// p-value of CHEER beating that row's method on ROC-AUC.
pub fn render_table(a: &Aggregate) -> String {
    let with_p = !a.p_values.is_empty();
    let mut head = vec!["method", "seeds", "accuracy", "macro_f1", "roc_auc", "pr_auc"];
    if with_p {
        head.push("p(cheer>)");
    }
    let mut rows = vec![head.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for m in &a.methods {
        let mut row = vec![
            m.method.name().to_string(),
            m.seeds.len().to_string(),
            cell(m.accuracy),
            cell(m.macro_f1),
            cell(m.roc_auc),
            cell(m.pr_auc),
        ];
        if with_p {
            row.push(match a.p_values.get(m.method.name()) {
                Some(p) => format!("{p:.4}"),
                None if m.method == Method::Cheer => String::new(),
                None => "-".into(),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(
                |(i, (v, w))| {
                    if i == 0 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                },
            )
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    for w in &a.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
