//! Seed-parallel experiment runs and parameter sweeps.

use std::fs;
use std::path::Path;

use cheer_core::experiment::{run_seed_with_data, ChannelPolicy, Method, SeedResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_source_dir, RunConfig};
use crate::error::{CliError, Result};
use crate::io::write_json;
use crate::report::{seed_file_name, seed_files, write_report, ReportFile, SEEDS_DIR};

pub const CONFIG_JSON: &str = "config.json";
pub const FAILURES_JSON: &str = "failures.json";

/// One failed (seed, method) cell; `method` is absent when the seed failed
/// before any method ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub results: Vec<SeedResult>,
    pub failures: Vec<Failure>,
    /// `None` when every seed failed.
    pub report: Option<ReportFile>,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Runs every seed (in parallel, one seed per worker), writes
/// `config.json`, `seeds/seed-<s>.json`, `failures.json` and the report.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let seeds_dir = out.join(SEEDS_DIR);
    fs::create_dir_all(&seeds_dir).map_err(CliError::io(&seeds_dir))?;
    // results of an earlier run would leak into the report
    for (_, stale) in seed_files(out)? {
        fs::remove_file(&stale).map_err(CliError::io(&stale))?;
    }
    write_json(&out.join(CONFIG_JSON), cfg)?;

    let shared = cfg.data_dir.as_deref().map(load_source_dir).transpose()?;
    let e = &cfg.experiment;
    let outcomes: Vec<(u64, std::result::Result<SeedResult, String>)> = pool(cfg.workers)?.install(|| {
        e.seeds
            .par_iter()
            .map(|&seed| {
                let r = match &shared {
                    Some(d) => run_seed_with_data(e, &d.rich, &d.poor, &d.paired, seed).map_err(|e| e.to_string()),
                    None => cfg.source(seed).map_err(|e| e.to_string()).and_then(|d| {
                        run_seed_with_data(e, &d.rich, &d.poor, &d.paired, seed).map_err(|e| e.to_string())
                    }),
                };
                (seed, r)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(r) => {
                failures.extend(r.failures.iter().map(|f| Failure {
                    seed,
                    method: Some(f.method),
                    message: f.message.clone(),
                }));
                write_json(&seeds_dir.join(seed_file_name(seed)), &r)?;
                results.push(r);
            }
            Err(message) => failures.push(Failure {
                seed,
                method: None,
                message,
            }),
        }
    }
    write_json(&out.join(FAILURES_JSON), &failures)?;
    let report = if results.is_empty() {
        None
    } else {
        Some(write_report(out)?)
    };
    Ok(RunOutcome {
        results,
        failures,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Paired-set size relative to the available pairs.
    PairedRatio(Vec<f64>),
    /// Number of poor channels, taken in decreasing mutual-information order.
    ChannelCount(Vec<usize>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::PairedRatio(_) => "paired_ratio",
            Sweep::ChannelCount(_) => "channels",
        }
    }

    fn points(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            Sweep::PairedRatio(v) => v
                .iter()
                .map(|&r| {
                    let mut c = base.clone();
                    c.experiment.paired_ratio = r;
                    (r.to_string(), c)
                })
                .collect(),
            Sweep::ChannelCount(v) => v
                .iter()
                .map(|&n| {
                    let mut c = base.clone();
                    c.experiment.channels = ChannelPolicy::TopMi(n);
                    (n.to_string(), c)
                })
                .collect(),
        }
    }
}

pub const SWEEP_HEADER: [&str; 12] = [
    "parameter",
    "value",
    "method",
    "n_seeds",
    "accuracy_mean",
    "accuracy_std",
    "macro_f1_mean",
    "macro_f1_std",
    "roc_auc_mean",
    "roc_auc_std",
    "pr_auc_mean",
    "pr_auc_std",
];

/// One full run per sweep value under `out/<param>-<value>/`, then
/// `out/sweep_<param>.csv` with one row per value per method.
pub fn run_sweep(base: &RunConfig, sweep: &Sweep, out: &Path) -> Result<Vec<RunOutcome>> {
    let points = sweep.points(base);
    if points.is_empty() {
        return Err(CliError::Config("sweep has no values".into()));
    }
    for (_, c) in &points {
        c.validate()?;
    }
    let csv_path = out.join(format!("sweep_{}.csv", sweep.name()));
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let csv_err = |source| CliError::Csv {
        path: csv_path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    let mut outcomes = Vec::new();
    for (value, c) in points {
        let o = run_experiment(&c, &out.join(format!("{}-{value}", sweep.name())))?;
        if let Some(r) = &o.report {
            for m in &r.aggregate.methods {
                let f = |v: f64| format!("{v:.6}");
                w.write_record([
                    sweep.name().to_string(),
                    value.clone(),
                    m.method.name().to_string(),
                    m.seeds.len().to_string(),
                    f(m.accuracy.mean),
                    f(m.accuracy.std),
                    f(m.macro_f1.mean),
                    f(m.macro_f1.std),
                    f(m.roc_auc.mean),
                    f(m.roc_auc.std),
                    f(m.pr_auc.mean),
                    f(m.pr_auc.std),
                ])
                .map_err(csv_err)?;
            }
        }
        outcomes.push(o);
    }
    w.flush().map_err(CliError::io(&csv_path))?;
    Ok(outcomes)
}
