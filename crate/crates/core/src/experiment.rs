//! Per-seed comparison pipeline: split, train the rich model, pick poor
//! channels, run every requested method and score it on held-out poor data.
//! Scheduling across seeds and all file output live in the std crate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::baselines::{train_at, train_direct, train_kd, AtConfig, KdConfig};
use crate::data::{
    generate_with_sample_seed, rank_by_entropy, rank_by_mutual_info, select_channels, select_paired_channels, split,
    subsample_pairs, Dataset, PairedDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::infusion::{cheer, BehaviorFitConfig};
use crate::metrics::{welch_t_test, MetricsReport};
use crate::model::{train_supervised, Architecture, ConvLayer, ExtractorConfig, ScorerMode, TransferableModel};
use crate::rng::{derive_seed, streams};
use crate::train::{TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Direct,
    Kd,
    At,
    Cheer,
    /// The rich model on rich test data (an upper reference).
    Rich,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Direct, Method::Kd, Method::At, Method::Cheer, Method::Rich];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Kd => "kd",
            Method::At => "at",
            Method::Cheer => "cheer",
            Method::Rich => "rich",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Which poor channels to keep, ranked on the poor training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "count")]
pub enum ChannelPolicy {
    All,
    Explicit(Vec<usize>),
    TopMi(usize),
    BottomMi(usize),
    TopEntropy(usize),
    MiddleEntropy(usize),
    BottomEntropy(usize),
}

impl ChannelPolicy {
    fn count(&self, available: usize) -> usize {
        match self {
            ChannelPolicy::All => available,
            ChannelPolicy::Explicit(v) => v.len(),
            ChannelPolicy::TopMi(n)
            | ChannelPolicy::BottomMi(n)
            | ChannelPolicy::TopEntropy(n)
            | ChannelPolicy::MiddleEntropy(n)
            | ChannelPolicy::BottomEntropy(n) => *n,
        }
    }

    /// Channel positions within `ds`, in ranking order.
    pub fn select(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let n = self.count(ds.n_channels);
        if n == 0 || n > ds.n_channels {
            return Err(Error::InvalidConfig(format!(
                "cannot keep {n} of {} poor channels",
                ds.n_channels
            )));
        }
        let ranked = |r: Vec<crate::data::ChannelScore>| r.into_iter().map(|c| c.index).collect::<Vec<_>>();
        Ok(match self {
            ChannelPolicy::All => (0..n).collect(),
            ChannelPolicy::Explicit(v) => v.clone(),
            ChannelPolicy::TopMi(_) => ranked(rank_by_mutual_info(ds)?)[..n].to_vec(),
            ChannelPolicy::BottomMi(_) => {
                let r = ranked(rank_by_mutual_info(ds)?);
                r[r.len() - n..].to_vec()
            }
            ChannelPolicy::TopEntropy(_) => ranked(rank_by_entropy(ds)?)[..n].to_vec(),
            ChannelPolicy::MiddleEntropy(_) => {
                let r = ranked(rank_by_entropy(ds)?);
                let start = (r.len() - n) / 2;
                r[start..start + n].to_vec()
            }
            ChannelPolicy::BottomEntropy(_) => {
                let r = ranked(rank_by_entropy(ds)?);
                r[r.len() - n..].to_vec()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One fixed distribution: class structure comes from `spec.seed`, each
    /// experiment seed draws fresh samples from it.
    pub spec: SyntheticSpec,
    pub rich_arch: Architecture,
    /// `n_channels` is overwritten with the selected channel count.
    pub poor_arch: Architecture,
    pub train: TrainConfig,
    #[serde(default)]
    pub kd: KdConfig,
    #[serde(default)]
    pub at: AtConfig,
    #[serde(default)]
    pub behavior: BehaviorFitConfig,
    pub paired_ratio: f64,
    pub channels: ChannelPolicy,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// The default comparison: 4 classes, 8 clean rich channels, 2 noisy poor
    /// channels, 30% of recorded labels replaced at random, half the pairs.
    pub fn benchmark(seeds: Vec<u64>) -> Self {
        let spec = SyntheticSpec {
            poor_noise: vec![2.0; 2],
            label_noise: 0.3,
            ..SyntheticSpec::benchmark(0)
        };
        let arch = |c| Architecture {
            n_channels: c,
            seq_len: spec.seq_len,
            n_classes: spec.n_classes,
            extractor: ExtractorConfig {
                n_segments: 4,
                conv_layers: vec![ConvLayer {
                    filters: 8,
                    kernel: 3,
                    stride: 1,
                }],
                rnn_hidden: 8,
            },
            scorer: ScorerMode::RawLinear,
            temperature: 1.0,
        };
        Self {
            rich_arch: arch(spec.rich_channels),
            poor_arch: arch(spec.poor_channels),
            spec,
            train: TrainConfig::default(),
            kd: KdConfig::default(),
            at: AtConfig::default(),
            behavior: BehaviorFitConfig::default(),
            paired_ratio: 0.5,
            channels: ChannelPolicy::All,
            methods: Method::ALL.to_vec(),
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds given".into()));
        }
        if !(self.paired_ratio > 0.0 && self.paired_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "paired ratio {} must lie in (0, 1]",
                self.paired_ratio
            )));
        }
        self.spec.validate()?;
        self.train.validate()?;
        self.rich_arch.validate()?;
        Ok(())
    }
}

/// Data for one seed, already split.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedData {
    /// Rich (train, validation, test).
    pub rich: (Dataset, Dataset, Dataset),
    /// Poor development (train + validation) and test sets.
    pub poor_dev: Dataset,
    pub poor_test: Dataset,
    pub paired: PairedDataset,
}

/// 80/10/10 splits of the rich and poor sets; paired data is subsampled at
/// `ratio` and used whole (methods hold out their own validation part).
pub fn prepare_seed_data(
    rich: &Dataset,
    poor: &Dataset,
    paired: &PairedDataset,
    ratio: f64,
    seed: u64,
) -> Result<SeedData> {
    let rich = split(rich, [0.8, 0.1, 0.1], derive_seed(seed, streams::SPLIT, 0))?;
    let (p_train, p_val, p_test) = split(poor, [0.8, 0.1, 0.1], derive_seed(seed, streams::SPLIT, 1))?;
    let poor_dev = p_train.concat(&p_val)?;
    let paired = subsample_pairs(paired, ratio, derive_seed(seed, streams::SUBSAMPLE, 0))?;
    Ok(SeedData {
        rich,
        poor_dev,
        poor_test: p_test,
        paired,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub metrics: MetricsReport,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Poor-channel positions that were kept.
    pub channels: Vec<usize>,
    pub n_pairs: usize,
    pub results: Vec<MethodResult>,
    /// Methods that errored; the others still ran.
    #[serde(default)]
    pub failures: Vec<MethodFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub message: String,
}

impl SeedResult {
    pub fn get(&self, m: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == m)
    }
}

/// Metrics of `model` on `test`.
pub fn evaluate(model: &TransferableModel, test: &Dataset) -> Result<MetricsReport> {
    let probs = model.forward_dataset(test)?.probs;
    MetricsReport::compute(&probs, &test.labels(), test.n_classes)
}

/// Trains the rich model on the seed's rich split.
pub fn train_rich(cfg: &ExperimentConfig, data: &SeedData, seed: u64) -> Result<(TransferableModel, MethodResult)> {
    let (train, val, test) = &data.rich;
    let (rich, report) = train_supervised(
        train,
        val,
        &cfg.rich_arch,
        &cfg.train.with_seed(derive_seed(seed, streams::INIT, 100)),
    )?;
    let metrics = evaluate(&rich, test)?;
    Ok((
        rich,
        MethodResult {
            method: Method::Rich,
            metrics,
            epochs_run: report.epochs_run,
            best_epoch: report.best_epoch,
        },
    ))
}

/// Poor-side data after channel selection.
#[derive(Debug, Clone, PartialEq)]
pub struct PoorSplit {
    /// Kept channel positions.
    pub keep: Vec<usize>,
    pub h_p: Dataset,
    pub test: Dataset,
    pub h_o: PairedDataset,
    pub arch: Architecture,
}

pub fn prepare_poor(cfg: &ExperimentConfig, data: &SeedData) -> Result<PoorSplit> {
    let keep = cfg.channels.select(&data.poor_dev)?;
    let arch = Architecture {
        n_channels: keep.len(),
        ..cfg.poor_arch.clone()
    };
    arch.validate()?;
    Ok(PoorSplit {
        h_p: select_channels(&data.poor_dev, &keep)?,
        test: select_channels(&data.poor_test, &keep)?,
        h_o: select_paired_channels(&data.paired, &keep)?,
        arch,
        keep,
    })
}

/// Trains one poor-side method. `Method::Rich` is not a poor-side method.
pub fn train_method(
    cfg: &ExperimentConfig,
    m: Method,
    poor: &PoorSplit,
    rich: Option<&TransferableModel>,
    seed: u64,
) -> Result<(TransferableModel, TrainReport)> {
    let teacher = || rich.ok_or_else(|| Error::InvalidConfig(format!("{} needs a rich model", m.name())));
    // every poor-side method starts from the same initialization seed
    let train = cfg.train.with_seed(derive_seed(seed, streams::INIT, 200));
    let (h_p, h_o, arch) = (&poor.h_p, &poor.h_o, &poor.arch);
    match m {
        Method::Rich => Err(Error::InvalidConfig(
            "the rich model is not trained on poor data".into(),
        )),
        Method::Direct => train_direct(h_p, arch, &train),
        Method::Kd => train_kd(teacher()?, h_o, h_p, arch, &cfg.kd, &train),
        Method::At => train_at(teacher()?, h_o, h_p, arch, &cfg.at, &train),
        Method::Cheer => {
            let template = TransferableModel::init(arch.clone(), train.seed)?;
            let (model, report) = cheer(h_p, teacher()?, h_o, template, &cfg.behavior, &train)?;
            Ok((model, report.target))
        }
    }
}

/// Runs the requested poor-side methods against a trained rich model. A
/// failing method is recorded and the remaining ones still run.
pub fn run_methods(
    cfg: &ExperimentConfig,
    data: &SeedData,
    rich: Option<&TransferableModel>,
    seed: u64,
) -> Result<(Vec<usize>, Vec<MethodResult>, Vec<MethodFailure>)> {
    let poor = prepare_poor(cfg, data)?;
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for &m in cfg.methods.iter().filter(|&&m| m != Method::Rich) {
        let result = train_method(cfg, m, &poor, rich, seed).and_then(|(model, report)| {
            Ok(MethodResult {
                method: m,
                metrics: evaluate(&model, &poor.test)?,
                epochs_run: report.epochs_run,
                best_epoch: report.best_epoch,
            })
        });
        match result {
            Ok(r) => out.push(r),
            Err(e) => failures.push(MethodFailure {
                method: m,
                message: format!("{e}"),
            }),
        }
    }
    Ok((poor.keep, out, failures))
}

/// The full pipeline for one seed on synthetic data.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let d = generate_with_sample_seed(&cfg.spec, seed)?;
    run_seed_with_data(cfg, &d.rich, &d.poor, &d.paired, seed)
}

pub fn run_seed_with_data(
    cfg: &ExperimentConfig,
    rich: &Dataset,
    poor: &Dataset,
    paired: &PairedDataset,
    seed: u64,
) -> Result<SeedResult> {
    let data = prepare_seed_data(rich, poor, paired, cfg.paired_ratio, seed)?;
    let needs_rich = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Kd | Method::At | Method::Cheer | Method::Rich));
    let mut results = Vec::new();
    let rich_model = if needs_rich {
        let (model, r) = train_rich(cfg, &data, seed).map_err(|e| Error::MethodFailed {
            method: Method::Rich.name().into(),
            message: format!("{e}"),
        })?;
        if cfg.methods.contains(&Method::Rich) {
            results.push(r);
        }
        Some(model)
    } else {
        None
    };
    let (channels, poor_results, failures) = run_methods(cfg, &data, rich_model.as_ref(), seed)?;
    results.extend(poor_results);
    results.sort_by_key(|r| r.method);
    Ok(SeedResult {
        seed,
        channels,
        n_pairs: data.paired.len(),
        results,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
}

impl MeanStd {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = if x.len() < 2 {
            0.0
        } else {
            libm::sqrt(x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub roc_auc: MeanStd,
    pub pr_auc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub methods: Vec<MethodSummary>,
    /// One-tailed p of CHEER > baseline on ROC-AUC, per baseline.
    pub p_values: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

pub fn aggregate(results: &[SeedResult]) -> Aggregate {
    let mut by_method: BTreeMap<Method, Vec<(u64, &MetricsReport)>> = BTreeMap::new();
    for s in results {
        for r in &s.results {
            by_method.entry(r.method).or_default().push((s.seed, &r.metrics));
        }
    }
    let pick = |v: &[(u64, &MetricsReport)], f: fn(&MetricsReport) -> f64| -> MeanStd {
        MeanStd::of(&v.iter().map(|(_, m)| f(m)).collect::<Vec<_>>())
    };
    let methods = by_method
        .iter()
        .map(|(&method, v)| MethodSummary {
            method,
            seeds: v.iter().map(|(s, _)| *s).collect(),
            accuracy: pick(v, |m| m.accuracy),
            macro_f1: pick(v, |m| m.macro_f1),
            roc_auc: pick(v, |m| m.roc_auc),
            pr_auc: pick(v, |m| m.pr_auc),
        })
        .collect();
    let mut p_values = BTreeMap::new();
    let mut warnings = Vec::new();
    let auc = |m: Method| -> Vec<f64> {
        by_method
            .get(&m)
            .map(|v| v.iter().map(|(_, r)| r.roc_auc).collect())
            .unwrap_or_default()
    };
    let cheer_auc = auc(Method::Cheer);
    if !cheer_auc.is_empty() {
        for base in [Method::Direct, Method::Kd, Method::At] {
            let b = auc(base);
            if b.is_empty() {
                continue;
            }
            match welch_t_test(&cheer_auc, &b) {
                Ok(t) => {
                    p_values.insert(String::from(base.name()), t.p);
                }
                Err(Error::ZeroVariance(_)) if cheer_auc == b => {
                    // identical per-seed scores: zero mean difference
                    p_values.insert(String::from(base.name()), 0.5);
                }
                Err(e) => warnings.push(format!("no p-value for cheer vs {}: {e}", base.name())),
            }
        }
    }
    Aggregate {
        methods,
        p_values,
        warnings,
    }
}

#[cfg(test)]
mod tests;
