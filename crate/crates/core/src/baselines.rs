//! Comparison trainers: Direct (poor data only), knowledge distillation and
//! attention transfer. Teacher signals exist only where both views do, so
//! KD soft labels and AT attention targets come from the paired set.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{holdout, split_paired, Dataset, PairedDataset};
use crate::error::{Error, Result};
use crate::infusion::HOLDOUT_FRACTION;
use crate::model::{train_supervised, Architecture, ParamGroup, TransferableModel};
use crate::rng::{derive_seed, streams};
use crate::train::{fit, LabeledLoss, Objective, PairedLoss, PairedTargets, TrainConfig, TrainData, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub distill_temperature: f64,
    pub soft_weight: f64,
    pub hard_weight: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            distill_temperature: 5.0,
            soft_weight: 1.0,
            hard_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtConfig {
    /// Weight of the mean attention-matching term.
    pub beta: f64,
}

impl Default for AtConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

/// Poor-data split shared by every method so they see identical data.
fn poor_split(h_p: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if h_p.is_empty() {
        return Err(Error::EmptyDataset("poor set".into()));
    }
    holdout(h_p, HOLDOUT_FRACTION, seed)
}

fn paired_split(h_o: &PairedDataset, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    let (a, b, _) = split_paired(
        h_o,
        [1.0 - HOLDOUT_FRACTION, HOLDOUT_FRACTION, 0.0],
        derive_seed(seed, streams::HOLDOUT, 1),
    )?;
    Ok((a, b))
}

/// Trains on poor data alone.
pub fn train_direct(h_p: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<(TransferableModel, TrainReport)> {
    let (train, val) = poor_split(h_p, cfg.seed)?;
    train_supervised(&train, &val, arch, cfg)
}

/// `softmax(logits / temperature)` per row.
pub fn soften(logits: &[Vec<f64>], temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len() * logits.first().map_or(0, |r| r.len()));
    for row in logits {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| libm::exp((v - max) / temperature)).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

pub fn kd_targets(h_o: &PairedDataset, rich: &TransferableModel, temperature: f64) -> Result<PairedTargets> {
    let logits = if h_o.is_empty() {
        Vec::new()
    } else {
        rich.forward_dataset(&h_o.rich)?.logits
    };
    PairedTargets::new(h_o.poor.clone(), soften(&logits, temperature), rich.arch.n_classes)
}

/// Rich scores scaled to unit length; a zero vector is reported by position.
pub fn attention_targets(h_o: &PairedDataset, rich: &TransferableModel) -> Result<PairedTargets> {
    let d = rich.arch.d();
    let scores = if h_o.is_empty() {
        Vec::new()
    } else {
        rich.forward_dataset(&h_o.rich)?.scores
    };
    let mut flat = Vec::with_capacity(scores.len() * d);
    for (i, s) in scores.iter().enumerate() {
        let norm = libm::sqrt(s.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return Err(Error::ZeroNormAttention(i));
        }
        flat.extend(s.iter().map(|v| v / norm));
    }
    PairedTargets::new(h_o.poor.clone(), flat, d)
}

/// `‖a/‖a‖ − t/‖t‖‖²` for one sample.
pub fn attention_distance(a: &[f64], t: &[f64]) -> Result<f64> {
    let na = libm::sqrt(a.iter().map(|v| v * v).sum::<f64>());
    let nt = libm::sqrt(t.iter().map(|v| v * v).sum::<f64>());
    if na == 0.0 || nt == 0.0 {
        return Err(Error::ZeroNormAttention(0));
    }
    Ok(a.iter()
        .zip(t)
        .map(|(x, y)| (x / na - y / nt) * (x / na - y / nt))
        .sum())
}

fn teacher_fit(
    h_p: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    objective: Objective,
    train_targets: &PairedTargets,
    val_targets: &PairedTargets,
) -> Result<(TransferableModel, TrainReport)> {
    let (p_train, p_val) = poor_split(h_p, cfg.seed)?;
    let model = TransferableModel::init(arch.clone(), cfg.seed)?;
    fit(
        model,
        &objective,
        &TrainData {
            labeled: Some(&p_train),
            paired: Some(train_targets),
        },
        &TrainData {
            labeled: Some(&p_val),
            paired: Some(val_targets),
        },
        &ParamGroup::ALL,
        cfg,
    )
}

pub fn train_kd(
    rich: &TransferableModel,
    h_o: &PairedDataset,
    h_p: &Dataset,
    arch: &Architecture,
    kd: &KdConfig,
    cfg: &TrainConfig,
) -> Result<(TransferableModel, TrainReport)> {
    if !(kd.distill_temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "distillation temperature {} must be positive",
            kd.distill_temperature
        )));
    }
    if kd.soft_weight < 0.0 || kd.hard_weight < 0.0 || kd.soft_weight + kd.hard_weight == 0.0 {
        return Err(Error::InvalidConfig("KD weights must be >= 0 and not both 0".into()));
    }
    if h_o.is_empty() {
        return Err(Error::EmptyDataset("paired set (KD soft labels)".into()));
    }
    let (o_train, o_val) = paired_split(h_o, cfg.seed)?;
    let objective = Objective {
        labeled: Some((LabeledLoss::CrossEntropy, kd.hard_weight)),
        paired: Some((PairedLoss::SoftCrossEntropy, kd.soft_weight)),
    };
    teacher_fit(
        h_p,
        arch,
        cfg,
        objective,
        &kd_targets(&o_train, rich, kd.distill_temperature)?,
        &kd_targets(&o_val, rich, kd.distill_temperature)?,
    )
}

pub fn train_at(
    rich: &TransferableModel,
    h_o: &PairedDataset,
    h_p: &Dataset,
    arch: &Architecture,
    at: &AtConfig,
    cfg: &TrainConfig,
) -> Result<(TransferableModel, TrainReport)> {
    if !(at.beta >= 0.0) {
        return Err(Error::InvalidConfig(format!("AT weight {} must be >= 0", at.beta)));
    }
    if rich.arch.d() != arch.d() {
        return Err(Error::DimensionMismatch(format!(
            "teacher has {} scores, student {}",
            rich.arch.d(),
            arch.d()
        )));
    }
    if h_o.is_empty() {
        return Err(Error::EmptyDataset("paired set (attention targets)".into()));
    }
    let (o_train, o_val) = paired_split(h_o, cfg.seed)?;
    let objective = Objective {
        labeled: Some((LabeledLoss::CrossEntropy, 1.0)),
        paired: Some((PairedLoss::AttentionMatch, at.beta)),
    };
    // positions in the error refer to the full paired set
    let remap = |e: Error, part: &PairedDataset| match e {
        Error::ZeroNormAttention(i) => {
            let id = part.rich.samples[i].id;
            Error::ZeroNormAttention(h_o.ids().iter().position(|&x| x == id).unwrap_or(i))
        }
        e => e,
    };
    let t_train = attention_targets(&o_train, rich).map_err(|e| remap(e, &o_train))?;
    let t_val = attention_targets(&o_val, rich).map_err(|e| remap(e, &o_val))?;
    teacher_fit(h_p, arch, cfg, objective, &t_train, &t_val).map_err(|e| remap(e, &o_train))
}
