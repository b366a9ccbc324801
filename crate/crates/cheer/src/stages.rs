//! The pipeline one stage at a time, each stage reading and writing
//! directories so runs can be resumed or inspected in between.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cheer_core::data::{generate_with_sample_seed, select_channels};
use cheer_core::experiment::{
    evaluate, prepare_poor, prepare_seed_data, train_method, train_rich, ChannelPolicy, Method, MethodResult,
};
use cheer_core::metrics::MetricsReport;
use cheer_core::model::TransferableModel;
use cheer_core::theory::{verify_agreement_bound, BoundCheckConfig, TheoryReport};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_model, save_model, MODEL_JSON};
use crate::config::{RunConfig, PAIRED_DIR, POOR_DIR, RICH_DIR};
use crate::error::{CliError, Result};
use crate::io::{load_dataset, save_dataset, save_paired, write_json};

pub const MODEL_DIR: &str = "model";
pub const RESULT_JSON: &str = "result.json";
pub const SPEC_JSON: &str = "spec.json";
pub const THEORY_JSON: &str = "theory.json";
pub const THEORY_TXT: &str = "theory.txt";

/// What a training stage leaves next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    /// Poor-channel positions used (all rich channels for the rich model).
    pub channels: Vec<usize>,
    pub n_pairs: usize,
    pub paired_ratio: f64,
    pub result: MethodResult,
}

/// Draws the synthetic datasets for `seed` into `rich/`, `poor/` and
/// `paired/`, with the spec alongside.
pub fn gen_data(cfg: &RunConfig, seed: u64, out: &Path, binary: bool) -> Result<()> {
    let d = generate_with_sample_seed(&cfg.experiment.spec, seed)?;
    save_dataset(&d.rich, &out.join(RICH_DIR), binary)?;
    save_dataset(&d.poor, &out.join(POOR_DIR), binary)?;
    save_paired(&d.paired, &out.join(PAIRED_DIR), binary)?;
    write_json(&out.join(SPEC_JSON), &cfg.experiment.spec)
}

fn finish(out: &Path, model: &TransferableModel, record: StageRecord) -> Result<StageRecord> {
    save_model(model, &out.join(MODEL_DIR))?;
    write_json(&out.join(RESULT_JSON), &record)?;
    Ok(record)
}

/// Trains the rich model on the seed's rich split; metrics are on the rich
/// test split.
pub fn train_rich_stage(cfg: &RunConfig, seed: u64, out: &Path) -> Result<StageRecord> {
    let e = &cfg.experiment;
    let src = cfg.source(seed)?;
    let data = prepare_seed_data(&src.rich, &src.poor, &src.paired, e.paired_ratio, seed)?;
    let (model, result) = train_rich(e, &data, seed)?;
    let record = StageRecord {
        seed,
        channels: (0..src.rich.n_channels).collect(),
        n_pairs: data.paired.len(),
        paired_ratio: e.paired_ratio,
        result,
    };
    finish(out, &model, record)
}

/// Accepts a stage output directory or the checkpoint directory itself.
pub fn resolve_model_dir(dir: &Path) -> PathBuf {
    if dir.join(MODEL_JSON).exists() {
        dir.to_path_buf()
    } else {
        dir.join(MODEL_DIR)
    }
}

/// Trains one poor-side method (`cheer` for infusion, or a baseline);
/// metrics are on the poor test split.
pub fn poor_stage(cfg: &RunConfig, method: Method, rich: Option<&Path>, seed: u64, out: &Path) -> Result<StageRecord> {
    if method == Method::Rich {
        return Err(CliError::Config("use train-rich for the rich model".into()));
    }
    let needs_rich = method != Method::Direct;
    if needs_rich && rich.is_none() {
        return Err(CliError::Config(format!("{} needs --rich <checkpoint>", method.name())));
    }
    let rich = rich.map(|d| load_model(&resolve_model_dir(d))).transpose()?;
    let e = &cfg.experiment;
    let src = cfg.source(seed)?;
    let data = prepare_seed_data(&src.rich, &src.poor, &src.paired, e.paired_ratio, seed)?;
    let poor = prepare_poor(e, &data)?;
    let (model, report) = train_method(e, method, &poor, rich.as_ref(), seed)?;
    let record = StageRecord {
        seed,
        channels: poor.keep.clone(),
        n_pairs: poor.h_o.len(),
        paired_ratio: e.paired_ratio,
        result: MethodResult {
            method,
            metrics: evaluate(&model, &poor.test)?,
            epochs_run: report.epochs_run,
            best_epoch: report.best_epoch,
        },
    };
    finish(out, &model, record)
}

/// Metrics of a checkpoint on a dataset directory, optionally after
/// channel selection.
pub fn evaluate_model(model: &Path, data: &Path, channels: Option<&ChannelPolicy>) -> Result<MetricsReport> {
    let model = load_model(&resolve_model_dir(model))?;
    let mut ds = load_dataset(data)?;
    if let Some(policy) = channels {
        let keep = policy.select(&ds)?;
        ds = select_channels(&ds, &keep)?;
    }
    if ds.n_channels != model.arch.n_channels {
        return Err(CliError::Config(format!(
            "model expects {} channels, dataset has {} (use --channels)",
            model.arch.n_channels, ds.n_channels
        )));
    }
    Ok(evaluate(&model, &ds)?)
}

pub fn verify_theory(cfg: &BoundCheckConfig, out: &Path) -> Result<TheoryReport> {
    let report = verify_agreement_bound(cfg)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_json(&out.join(THEORY_JSON), &report)?;
    let txt = out.join(THEORY_TXT);
    fs::write(&txt, render_theory(&report)).map_err(CliError::io(&txt))?;
    Ok(report)
}

pub fn render_theory(r: &TheoryReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "epsilon {}  delta {}  pairs per trial {}  eval pairs {}",
        r.epsilon, r.delta, r.k_required, r.n_eval
    );
    let _ = writeln!(s, "phi over: {}", r.phi_set);
    let _ = writeln!(
        s,
        "{:>5}  {:>8}  {:>10}  {:>8}  {:>9}  verdict",
        "trial", "phi", "alpha_hat", "bound", "agreement"
    );
    for (i, t) in r.trials.iter().enumerate() {
        let bound = t.bound.map_or("-".to_string(), |b| format!("{b:.4}"));
        let verdict = match (t.satisfied, t.vacuous) {
            (true, false) => "holds",
            (true, true) => "vacuous",
            (false, _) => "VIOLATED",
        };
        let _ = writeln!(
            s,
            "{i:>5}  {:>8.4}  {:>10.3e}  {bound:>8}  {:>9.4}  {verdict}",
            t.phi, t.alpha_hat, t.empirical_agreement
        );
    }
    let _ = writeln!(
        s,
        "satisfied {}/{}  vacuous {}  non-vacuous evidence {}",
        r.n_satisfied,
        r.trials.len(),
        r.n_vacuous,
        r.n_evidence
    );
    s
}
