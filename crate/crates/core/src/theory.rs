//! Target-fitting losses, the robustness constant, the paired-sample
//! requirement, the pointwise agreement condition and a Monte-Carlo check
//! of the agreement bound `Pr(agree) ≥ 1 − (α + 2ε)/φ²`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_with_sample_seed, holdout, Dataset, PairedDataset, SyntheticData, SyntheticSpec, TimeSeriesSample,
};
use crate::error::{Error, Result};
use crate::infusion::{cheer, BehaviorFitConfig};
use crate::model::{argmax, train_supervised, Architecture, ConvLayer, ExtractorConfig, ScorerMode, TransferableModel};
use crate::rng::{derive_seed, streams};
use crate::train::TrainConfig;

/// Poor-data term `(1/m) Σ_t (1 − S(y_t|x_t))²`, or `None` when `h_p` is
/// empty (the term is then taken as 0).
pub fn poor_fit_term(poor: &TransferableModel, h_p: &Dataset) -> Result<Option<f64>> {
    if h_p.is_empty() {
        return Ok(None);
    }
    let probs = poor.forward_dataset(h_p)?.probs;
    let total: f64 = probs
        .iter()
        .zip(&h_p.samples)
        .map(|(p, s)| (1.0 - p[s.label]) * (1.0 - p[s.label]))
        .sum();
    Ok(Some(total / h_p.len() as f64))
}

/// `Σ_y (T_y − S_y)² + poor_term`.
pub fn particular_loss_from_probs(rich: &[f64], poor: &[f64], poor_term: f64) -> f64 {
    rich.iter().zip(poor).map(|(t, s)| (t - s) * (t - s)).sum::<f64>() + poor_term
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticularLoss {
    pub value: f64,
    /// `h_p` was empty, so the poor-data term was taken as 0.
    pub empty_poor_set: bool,
}

pub fn particular_loss(
    poor: &TransferableModel,
    rich: &TransferableModel,
    x_rich: &TimeSeriesSample,
    x_poor: &TimeSeriesSample,
    h_p: &Dataset,
) -> Result<ParticularLoss> {
    let term = poor_fit_term(poor, h_p)?;
    let t = rich.predict_proba(x_rich)?;
    let s = poor.predict_proba(x_poor)?;
    Ok(ParticularLoss {
        value: particular_loss_from_probs(&t, &s, term.unwrap_or(0.0)),
        empty_poor_set: term.is_none(),
    })
}

/// Mean particular loss over the paired set.
pub fn empirical_loss(
    poor: &TransferableModel,
    rich: &TransferableModel,
    h_o: &PairedDataset,
    h_p: &Dataset,
) -> Result<f64> {
    if h_o.is_empty() {
        return Err(Error::EmptyDataset("paired set".into()));
    }
    let term = poor_fit_term(poor, h_p)?.unwrap_or(0.0);
    let t = rich.forward_dataset(&h_o.rich)?.probs;
    let s = poor.forward_dataset(&h_o.poor)?.probs;
    let total: f64 = t
        .iter()
        .zip(&s)
        .map(|(t, s)| particular_loss_from_probs(t, s, term))
        .sum();
    Ok(total / h_o.len() as f64)
}

/// Half the smallest gap between the top two probabilities.
pub fn robustness_from_probs(probs: &[Vec<f64>]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyDataset("robustness evaluation set".into()));
    }
    let mut min_margin = f64::INFINITY;
    for p in probs {
        if p.len() < 2 {
            return Err(Error::InvalidConfig("robustness needs at least two classes".into()));
        }
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &v in p {
            if v > a {
                b = a;
                a = v;
            } else if v > b {
                b = v;
            }
        }
        min_margin = min_margin.min(a - b);
    }
    Ok(0.5 * min_margin)
}

pub fn robustness_constant(rich: &TransferableModel, eval: &Dataset) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::EmptyDataset("robustness evaluation set".into()));
    }
    robustness_from_probs(&rich.forward_dataset(eval)?.probs)
}

/// `ceil(((c+1)² / (2ε²)) · ln(2/δ))`.
pub fn required_pairs(c: usize, epsilon: f64, delta: f64) -> Result<u64> {
    if c < 2 {
        return Err(Error::Domain(format!("class count {c} must be at least 2")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("ε = {epsilon} must lie in (0, 1)")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("δ = {delta} must lie in (0, 1)")));
    }
    let c1 = (c + 1) as f64;
    let k = c1 * c1 / (2.0 * epsilon * epsilon) * libm::log(2.0 / delta);
    // guard against k landing a rounding error above an integer
    let r = libm::round(k);
    let k = if (k - r).abs() < 1e-9 * k.max(1.0) {
        r
    } else {
        libm::ceil(k)
    };
    Ok(k as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementVerdict {
    /// Particular loss at most `φ²`.
    pub condition_met: bool,
    pub agree: bool,
}

impl AgreementVerdict {
    pub fn violated(&self) -> bool {
        self.condition_met && !self.agree
    }
}

pub fn check_agreement_from_probs(rich: &[f64], poor: &[f64], poor_term: f64, phi: f64) -> AgreementVerdict {
    AgreementVerdict {
        condition_met: particular_loss_from_probs(rich, poor, poor_term) <= phi * phi,
        agree: argmax(rich) == argmax(poor),
    }
}

pub fn check_agreement(
    poor: &TransferableModel,
    rich: &TransferableModel,
    x_rich: &TimeSeriesSample,
    x_poor: &TimeSeriesSample,
    h_p: &Dataset,
    phi: f64,
) -> Result<AgreementVerdict> {
    let term = poor_fit_term(poor, h_p)?.unwrap_or(0.0);
    Ok(check_agreement_from_probs(
        &rich.predict_proba(x_rich)?,
        &poor.predict_proba(x_poor)?,
        term,
        phi,
    ))
}

/// `1 − (α + 2ε)/φ²`; may be negative.
pub fn agreement_bound(alpha: f64, epsilon: f64, phi: f64) -> Result<f64> {
    if !(phi > 0.0) {
        return Err(Error::VacuousBound);
    }
    Ok(1.0 - (alpha + 2.0 * epsilon) / (phi * phi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckConfig {
    /// Must describe identical rich and poor views for the realizable case.
    pub spec: SyntheticSpec,
    pub rich_arch: Architecture,
    pub poor_arch: Architecture,
    /// Samples used once to train the rich model.
    pub n_rich_train: usize,
    /// Poor samples per trial.
    pub n_poor: usize,
    /// Fresh evaluation pairs per trial (also the set `φ` is measured on).
    pub n_eval: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub rich_train: TrainConfig,
    pub poor_train: TrainConfig,
    pub behavior: BehaviorFitConfig,
}

impl BoundCheckConfig {
    /// Realizable setting: one mirrored channel, two classes, the same small
    /// architecture on both sides, 20 trials at `ε = δ = 0.05`.
    pub fn realizable(seed: u64) -> Self {
        let spec = SyntheticSpec {
            n_classes: 2,
            seq_len: 16,
            n_latent: 1,
            rich_channels: 1,
            poor_channels: 1,
            rich_noise: vec![0.5],
            poor_noise: vec![0.5],
            rich_informativeness: vec![1.0],
            poor_informativeness: vec![1.0],
            class_separation: 1.5,
            latent_noise: 0.3,
            mirror_views: true,
            ..SyntheticSpec::benchmark(seed)
        };
        let arch = Architecture {
            n_channels: 1,
            seq_len: 16,
            n_classes: 2,
            extractor: ExtractorConfig {
                n_segments: 4,
                conv_layers: vec![ConvLayer {
                    filters: 4,
                    kernel: 2,
                    stride: 1,
                }],
                rnn_hidden: 4,
            },
            scorer: ScorerMode::RawLinear,
            temperature: 1.0,
        };
        Self {
            spec,
            rich_arch: arch.clone(),
            poor_arch: arch,
            n_rich_train: 500,
            n_poor: 200,
            n_eval: 500,
            epsilon: 0.05,
            delta: 0.05,
            trials: 20,
            seed,
            rich_train: TrainConfig::default(),
            poor_train: TrainConfig {
                max_epochs: 30,
                patience: 5,
                ..TrainConfig::default()
            },
            behavior: BehaviorFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub phi: f64,
    /// Empirical loss of the trained poor model (an estimate of `α`).
    pub alpha_hat: f64,
    /// `None` when `φ = 0`.
    pub bound: Option<f64>,
    pub empirical_agreement: f64,
    /// Bound `≤ 0` or undefined: holds trivially, not evidence.
    pub vacuous: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub epsilon: f64,
    pub delta: f64,
    pub k_required: u64,
    pub n_eval: usize,
    /// What `φ` was minimized over.
    pub phi_set: alloc::string::String,
    pub trials: Vec<TrialOutcome>,
    pub n_satisfied: usize,
    pub n_vacuous: usize,
    /// Satisfied and non-vacuous.
    pub n_evidence: usize,
}

fn draw(spec: &SyntheticSpec, seed: u64, poor: usize, paired: usize) -> Result<SyntheticData> {
    // class structure stays fixed; only the sample draws move
    generate_with_sample_seed(
        &SyntheticSpec {
            n_rich: 0,
            n_poor: poor,
            n_paired: paired,
            ..spec.clone()
        },
        seed,
    )
}

/// Per trial: draw `H_o` with the required number of pairs and `H_p`, run
/// the infusion pipeline, then compare the bound with the agreement rate
/// on a fresh evaluation draw from the same distribution.
pub fn verify_agreement_bound(cfg: &BoundCheckConfig) -> Result<TheoryReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    if cfg.n_eval == 0 || cfg.n_poor == 0 {
        return Err(Error::InvalidConfig("evaluation and poor sets must be nonempty".into()));
    }
    let k = required_pairs(cfg.spec.n_classes, cfg.epsilon, cfg.delta)? as usize;
    let rich_data = draw(&cfg.spec, derive_seed(cfg.seed, streams::TRIAL, 0), 0, cfg.n_rich_train)?;
    let (train, val) = holdout(&rich_data.paired.rich, 0.1, cfg.seed)?;
    let (rich, _) = train_supervised(&train, &val, &cfg.rich_arch, &cfg.rich_train)?;

    let mut trials = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let seed = derive_seed(cfg.seed, streams::TRIAL, 1 + t as u64);
        let d = draw(&cfg.spec, seed, cfg.n_poor, k + cfg.n_eval)?;
        let h_o = d.paired.take(&(0..k).collect::<Vec<_>>());
        let eval = d.paired.take(&(k..k + cfg.n_eval).collect::<Vec<_>>());
        let template = TransferableModel::init(cfg.poor_arch.clone(), seed)?;
        let (poor, _) = cheer(
            &d.poor,
            &rich,
            &h_o,
            template,
            &cfg.behavior,
            &cfg.poor_train.with_seed(seed),
        )?;
        let rich_probs = rich.forward_dataset(&eval.rich)?.probs;
        let poor_probs = poor.forward_dataset(&eval.poor)?.probs;
        let phi = robustness_from_probs(&rich_probs)?;
        let alpha_hat = empirical_loss(&poor, &rich, &h_o, &d.poor)?;
        let agree = rich_probs
            .iter()
            .zip(&poor_probs)
            .filter(|(r, p)| argmax(r) == argmax(p))
            .count() as f64
            / cfg.n_eval as f64;
        let bound = agreement_bound(alpha_hat, cfg.epsilon, phi).ok();
        let vacuous = bound.is_none_or(|b| b <= 0.0);
        trials.push(TrialOutcome {
            seed,
            phi,
            alpha_hat,
            bound,
            empirical_agreement: agree,
            vacuous,
            satisfied: bound.is_none_or(|b| agree >= b),
        });
    }
    let n_satisfied = trials.iter().filter(|t| t.satisfied).count();
    let n_vacuous = trials.iter().filter(|t| t.vacuous).count();
    let n_evidence = trials.iter().filter(|t| t.satisfied && !t.vacuous).count();
    Ok(TheoryReport {
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        k_required: k as u64,
        n_eval: cfg.n_eval,
        phi_set: format!("rich views of the {} fresh evaluation pairs of each trial", cfg.n_eval),
        trials,
        n_satisfied,
        n_vacuous,
        n_evidence,
    })
}

#[cfg(test)]
mod tests;
