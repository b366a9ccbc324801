//! The transferable classifier: feature extraction `Q` (segments → stacked
//! conv + mean pool → LSTM across segments), feature scoring `A` (one score
//! per feature dimension) and aggregation `O` (`Qᵀa` → dense → tempered
//! softmax).

mod forward;
mod params;

pub use forward::{build_forward, input_tensor, ForwardNodes};
pub use params::{AggregatorParams, ParamGroup, ScorerParams};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::tensor::{Bindings, ExprGraph, Tensor};
use crate::train::{fit, LabeledLoss, Objective, TrainConfig, TrainData, TrainReport};

/// Rows per forward pass when evaluating whole datasets.
pub(crate) const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// `l`
    pub n_segments: usize,
    pub conv_layers: Vec<ConvLayer>,
    /// `d`, also the number of scorer heads.
    pub rnn_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerMode {
    /// `a_i = ω_i · flatten(x) + b_i`
    RawLinear,
    /// `a_i = tanh(ω_i · flatten(x) + b_i)`
    RawTanh,
    /// `a_i = tanh(ω_i · vec(Q) + b_i)`
    FeatureAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_channels: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub extractor: ExtractorConfig,
    pub scorer: ScorerMode,
    /// Softmax temperature `τ`.
    pub temperature: f64,
}

impl Architecture {
    pub fn segment_len(&self) -> usize {
        self.seq_len / self.extractor.n_segments.max(1)
    }

    /// Width of the pooled per-segment feature (filters of the last conv
    /// layer, or the channel count without conv layers).
    pub fn pooled_width(&self) -> usize {
        self.extractor.conv_layers.last().map_or(self.n_channels, |c| c.filters)
    }

    pub fn d(&self) -> usize {
        self.extractor.rnn_hidden
    }

    pub fn l(&self) -> usize {
        self.extractor.n_segments
    }

    pub fn scorer_input_dim(&self) -> usize {
        match self.scorer {
            ScorerMode::RawLinear | ScorerMode::RawTanh => self.n_channels * self.seq_len,
            ScorerMode::FeatureAttention => self.l() * self.d(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ex = &self.extractor;
        if self.n_channels == 0 || self.seq_len == 0 || ex.rnn_hidden == 0 || ex.n_segments == 0 {
            return Err(Error::InvalidConfig(
                "channels, length, segments and hidden size must be positive".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least two classes, got {}",
                self.n_classes
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "softmax temperature {} must be positive",
                self.temperature
            )));
        }
        if self.seq_len < ex.n_segments {
            return Err(Error::SegmentTooShort(format!(
                "{} steps cannot form {} segments",
                self.seq_len, ex.n_segments
            )));
        }
        let mut len = self.segment_len();
        for (i, c) in ex.conv_layers.iter().enumerate() {
            if c.filters == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::InvalidConfig(format!(
                    "conv layer {i} needs positive filters, kernel and stride"
                )));
            }
            if len < c.kernel {
                return Err(Error::SegmentTooShort(format!(
                    "conv layer {i} has kernel {} but its input has length {len}",
                    c.kernel
                )));
            }
            len = (len - c.kernel) / c.stride + 1;
        }
        Ok(())
    }
}

/// `Q ∈ R^{d×l}` stored column by column (column `m` belongs to segment `m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub d: usize,
    pub l: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn column(&self, m: usize) -> &[f64] {
        &self.values[m * self.d..(m + 1) * self.d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferableModel {
    pub arch: Architecture,
    pub seed: u64,
    /// Extractor parameters keyed `q.conv{i}.w`, `q.conv{i}.b`, `q.lstm.wx`,
    /// `q.lstm.wh`, `q.lstm.b`.
    pub extractor: BTreeMap<String, Tensor>,
    pub scorer: ScorerParams,
    pub aggregator: AggregatorParams,
}

/// One forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// `[n, c]`
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    /// `[n, d]`
    pub scores: Vec<Vec<f64>>,
}

impl TransferableModel {
    /// Fresh model with uniform `±1/√fan_in` weights.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (extractor, scorer, aggregator) = params::init(&arch, seed);
        Ok(Self {
            arch,
            seed,
            extractor,
            scorer,
            aggregator,
        })
    }

    /// All parameters keyed by graph input name.
    pub fn bindings(&self) -> Bindings {
        let mut b = self.extractor.clone();
        b.insert(params::SCORER_W.into(), self.scorer.weights.clone());
        b.insert(params::SCORER_B.into(), self.scorer.bias.clone());
        b.insert(params::DENSE_W.into(), self.aggregator.weights.clone());
        b.insert(params::DENSE_B.into(), self.aggregator.bias.clone());
        b
    }

    /// Overwrites the parameters named in `values`; other entries are ignored.
    pub fn set_params(&mut self, values: &Bindings) {
        for (name, t) in values {
            match name.as_str() {
                params::SCORER_W => self.scorer.weights = t.clone(),
                params::SCORER_B => self.scorer.bias = t.clone(),
                params::DENSE_W => self.aggregator.weights = t.clone(),
                params::DENSE_B => self.aggregator.bias = t.clone(),
                n if self.extractor.contains_key(n) => {
                    self.extractor.insert(name.clone(), t.clone());
                }
                _ => {}
            }
        }
    }

    /// Replaces the scorer after checking it fits this architecture.
    pub fn with_scorer(mut self, scorer: ScorerParams) -> Result<Self> {
        if scorer.mode != self.arch.scorer {
            return Err(Error::ModeMismatch(format!(
                "scorer is {:?}, model expects {:?}",
                scorer.mode, self.arch.scorer
            )));
        }
        if scorer.n_heads() != self.arch.d() || scorer.input_dim() != self.arch.scorer_input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "scorer is {}x{}, model expects {}x{}",
                scorer.input_dim(),
                scorer.n_heads(),
                self.arch.scorer_input_dim(),
                self.arch.d()
            )));
        }
        self.scorer = scorer;
        Ok(self)
    }

    pub fn check_sample(&self, s: &TimeSeriesSample) -> Result<()> {
        if s.n_channels != self.arch.n_channels || s.seq_len != self.arch.seq_len {
            return Err(Error::DimensionMismatch(format!(
                "sample {} is {}x{}, model expects {}x{}",
                s.id, s.n_channels, s.seq_len, self.arch.n_channels, self.arch.seq_len
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.n_classes != self.arch.n_classes {
            return Err(Error::DimensionMismatch(format!(
                "dataset `{}` has {} classes, model has {}",
                ds.name, ds.n_classes, self.arch.n_classes
            )));
        }
        match ds.samples.first() {
            Some(s) => self.check_sample(s),
            None => Ok(()),
        }
    }

    /// Runs the graph on a batch of samples, chunked.
    pub fn forward_batch(&self, samples: &[&TimeSeriesSample]) -> Result<BatchOutput> {
        for s in samples {
            self.check_sample(s)?;
        }
        let mut g = ExprGraph::new();
        let x = g.input(forward::INPUT);
        let nodes = build_forward(&mut g, &self.arch, x);
        let mut out = BatchOutput {
            logits: Vec::with_capacity(samples.len()),
            probs: Vec::with_capacity(samples.len()),
            scores: Vec::with_capacity(samples.len()),
        };
        let mut bindings = self.bindings();
        let c = self.arch.n_classes;
        let d = self.arch.d();
        for chunk in samples.chunks(EVAL_CHUNK) {
            bindings.insert(forward::INPUT.into(), input_tensor(chunk)?);
            let ev = g.forward(&bindings, &[nodes.logits, nodes.probs, nodes.scores])?;
            let rows = |id, w: usize| -> Vec<Vec<f64>> {
                ev.value(id).unwrap().values().chunks(w).map(|r| r.to_vec()).collect()
            };
            out.logits.extend(rows(nodes.logits, c));
            out.probs.extend(rows(nodes.probs, c));
            out.scores.extend(rows(nodes.scores, d));
        }
        Ok(out)
    }

    pub fn forward_dataset(&self, ds: &Dataset) -> Result<BatchOutput> {
        self.check_dataset(ds)?;
        let refs: Vec<&TimeSeriesSample> = ds.samples.iter().collect();
        self.forward_batch(&refs)
    }

    /// `Q` for one sample.
    pub fn extract_features(&self, sample: &TimeSeriesSample) -> Result<FeatureMatrix> {
        self.check_sample(sample)?;
        let mut g = ExprGraph::new();
        let x = g.input(forward::INPUT);
        let nodes = build_forward(&mut g, &self.arch, x);
        let mut bindings = self.bindings();
        bindings.insert(forward::INPUT.into(), input_tensor(&[sample])?);
        let ev = g.forward(&bindings, &[nodes.q])?;
        Ok(FeatureMatrix {
            d: self.arch.d(),
            l: self.arch.l(),
            values: ev.value(nodes.q).unwrap().values().to_vec(),
        })
    }

    /// Score vector `a ∈ R^d`, computed directly from the scorer heads.
    pub fn score_features(&self, sample: &TimeSeriesSample, q: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let input: &[f64] = match self.scorer.mode {
            ScorerMode::RawLinear | ScorerMode::RawTanh => &sample.values,
            ScorerMode::FeatureAttention => {
                if q.d != self.arch.d() || q.l != self.arch.l() {
                    return Err(Error::DimensionMismatch(format!(
                        "feature matrix is {}x{}, model expects {}x{}",
                        q.d,
                        q.l,
                        self.arch.d(),
                        self.arch.l()
                    )));
                }
                &q.values
            }
        };
        self.scorer.scores(input)
    }

    pub fn predict_proba(&self, sample: &TimeSeriesSample) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[sample])?.probs.remove(0))
    }

    pub fn predict(&self, sample: &TimeSeriesSample) -> Result<usize> {
        Ok(argmax(&self.predict_proba(sample)?))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<usize>> {
        Ok(self.forward_dataset(ds)?.probs.iter().map(|p| argmax(p)).collect())
    }

    /// Number of scalar parameters in the given groups.
    pub fn count_params(&self, groups: &[ParamGroup]) -> usize {
        self.bindings()
            .iter()
            .filter(|(n, _)| groups.contains(&ParamGroup::of(n)))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Parameters as one vector in checkpoint order: conv layers (weights,
    /// bias) in order, LSTM input weights, recurrent weights, bias, scorer
    /// heads `1..=d` (each `ω_i` then `b_i`), dense weights, dense bias.
    pub fn to_flat(&self) -> Vec<f64> {
        params::to_flat(self)
    }

    /// Inverse of [`to_flat`](Self::to_flat) for a model of the same
    /// architecture.
    /// Named segments of [`to_flat`](Self::to_flat), in order.
    pub fn flat_layout(&self) -> Vec<(String, usize)> {
        params::flat_layout(self)
    }

    pub fn from_flat(arch: Architecture, seed: u64, flat: &[f64]) -> Result<Self> {
        let mut m = Self::init(arch, seed)?;
        params::load_flat(&mut m, flat)?;
        Ok(m)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh model on labeled data by cross-entropy with early
/// stopping on the validation loss.
pub fn train_supervised(
    train: &Dataset,
    val: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(TransferableModel, TrainReport)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset(format!("training set `{}`", train.name)));
    }
    let model = TransferableModel::init(arch.clone(), cfg.seed)?;
    model.check_dataset(train)?;
    model.check_dataset(val)?;
    let objective = Objective {
        labeled: Some((LabeledLoss::CrossEntropy, 1.0)),
        paired: None,
    };
    fit(
        model,
        &objective,
        &TrainData::labeled(train),
        &TrainData::labeled(val),
        &ParamGroup::ALL,
        cfg,
    )
}
