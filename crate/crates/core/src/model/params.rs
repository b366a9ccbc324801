use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Architecture, ScorerMode, TransferableModel};
use crate::error::{Error, Result};
use crate::rng::{rng_from, streams, Rng};
use crate::tensor::Tensor;

pub(crate) const SCORER_W: &str = "a.w";
pub(crate) const SCORER_B: &str = "a.b";
pub(crate) const DENSE_W: &str = "o.w";
pub(crate) const DENSE_B: &str = "o.b";
pub(crate) const LSTM_WX: &str = "q.lstm.wx";
pub(crate) const LSTM_WH: &str = "q.lstm.wh";
pub(crate) const LSTM_B: &str = "q.lstm.b";

pub(crate) fn conv_w(i: usize) -> String {
    format!("q.conv{i}.w")
}

pub(crate) fn conv_b(i: usize) -> String {
    format!("q.conv{i}.b")
}

/// Which of `Q`, `A`, `O` a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Extractor,
    Scorer,
    Aggregator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [Self::Extractor, Self::Scorer, Self::Aggregator];

    pub fn of(name: &str) -> Self {
        match name.as_bytes().first() {
            Some(b'a') => Self::Scorer,
            Some(b'o') => Self::Aggregator,
            _ => Self::Extractor,
        }
    }
}

/// `d` scoring heads; head `i` owns column `i` of `weights` and `bias[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub mode: ScorerMode,
    /// `[input_dim, d]`
    pub weights: Tensor,
    /// `[d]`
    pub bias: Tensor,
}

impl ScorerParams {
    pub fn zeros(mode: ScorerMode, input_dim: usize, d: usize) -> Self {
        Self {
            mode,
            weights: Tensor::zeros(&[input_dim, d]),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn n_heads(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    fn check_head(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n_heads() {
            return Err(Error::HeadIndex {
                index: i,
                d: self.n_heads(),
            });
        }
        Ok(())
    }

    /// `(ω_i, b_i)` for the 1-based head `i`.
    pub fn head(&self, i: usize) -> Result<(Vec<f64>, f64)> {
        self.check_head(i)?;
        let d = self.n_heads();
        let w = self.weights.values().iter().skip(i - 1).step_by(d).copied().collect();
        Ok((w, self.bias.values()[i - 1]))
    }

    pub fn set_head(&mut self, i: usize, w: &[f64], b: f64) -> Result<()> {
        self.check_head(i)?;
        if w.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                actual: w.len(),
            });
        }
        let d = self.n_heads();
        let values = self.weights.values_mut();
        for (j, &wj) in w.iter().enumerate() {
            values[j * d + i - 1] = wj;
        }
        self.bias.values_mut()[i - 1] = b;
        Ok(())
    }

    /// Pre-activation `ω_i · input + b_i` for every head.
    pub fn linear_scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "scorer expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let d = self.n_heads();
        let mut out = self.bias.values().to_vec();
        for (row, &x) in self.weights.values().chunks(d).zip(input) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        Ok(out)
    }

    /// Scores with the mode's link applied.
    pub fn scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.linear_scores(input)?;
        if self.mode != ScorerMode::RawLinear {
            s.iter_mut().for_each(|v| *v = libm::tanh(*v));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    /// `[l, c]`
    pub weights: Tensor,
    /// `[c]`
    pub bias: Tensor,
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), values).expect("positive shape")
}

pub(crate) fn init(arch: &Architecture, seed: u64) -> (BTreeMap<String, Tensor>, ScorerParams, AggregatorParams) {
    let mut ext = BTreeMap::new();
    let mut cin = arch.n_channels;
    let mut layer = 0u64;
    let mut next = || {
        layer += 1;
        rng_from(seed, streams::INIT, layer)
    };
    for (i, c) in arch.extractor.conv_layers.iter().enumerate() {
        let fan = cin * c.kernel;
        let mut rng = next();
        ext.insert(conv_w(i), uniform(&[c.filters, cin, c.kernel], fan, &mut rng));
        ext.insert(conv_b(i), uniform(&[c.filters], fan, &mut rng));
        cin = c.filters;
    }
    let d = arch.d();
    let mut rng = next();
    ext.insert(LSTM_WX.into(), uniform(&[cin, 4 * d], cin, &mut rng));
    ext.insert(LSTM_WH.into(), uniform(&[d, 4 * d], d, &mut rng));
    ext.insert(LSTM_B.into(), uniform(&[4 * d], d, &mut rng));
    let input_dim = arch.scorer_input_dim();
    let mut rng = next();
    let scorer = ScorerParams {
        mode: arch.scorer,
        weights: uniform(&[input_dim, d], input_dim, &mut rng),
        bias: uniform(&[d], input_dim, &mut rng),
    };
    let l = arch.l();
    let mut rng = next();
    let aggregator = AggregatorParams {
        weights: uniform(&[l, arch.n_classes], l, &mut rng),
        bias: uniform(&[arch.n_classes], l, &mut rng),
    };
    (ext, scorer, aggregator)
}

fn extractor_order(m: &TransferableModel) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..m.arch.extractor.conv_layers.len() {
        names.push(conv_w(i));
        names.push(conv_b(i));
    }
    names.extend([LSTM_WX.into(), LSTM_WH.into(), LSTM_B.into()]);
    names
}

pub(crate) fn to_flat(m: &TransferableModel) -> Vec<f64> {
    let mut out = Vec::new();
    for name in extractor_order(m) {
        out.extend_from_slice(m.extractor[&name].values());
    }
    for i in 1..=m.scorer.n_heads() {
        let (w, b) = m.scorer.head(i).expect("head in range");
        out.extend(w);
        out.push(b);
    }
    out.extend_from_slice(m.aggregator.weights.values());
    out.extend_from_slice(m.aggregator.bias.values());
    out
}

/// `(segment, length)` in the order [`to_flat`] writes them.
pub(crate) fn flat_layout(m: &TransferableModel) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = extractor_order(m)
        .into_iter()
        .map(|name| {
            let n = m.extractor[&name].len();
            (name, n)
        })
        .collect();
    for i in 1..=m.scorer.n_heads() {
        out.push((format!("a.head{i}.w"), m.scorer.input_dim()));
        out.push((format!("a.head{i}.b"), 1));
    }
    out.push((DENSE_W.into(), m.aggregator.weights.len()));
    out.push((DENSE_B.into(), m.aggregator.bias.len()));
    out
}

pub(crate) fn load_flat(m: &mut TransferableModel, flat: &[f64]) -> Result<()> {
    let expected = to_flat(m).len();
    if flat.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: flat.len(),
        });
    }
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &flat[pos..pos + n];
        pos += n;
        s
    };
    for name in extractor_order(m) {
        let t = m.extractor.get_mut(&name).expect("initialized");
        let n = t.len();
        t.values_mut().copy_from_slice(take(n));
    }
    let input_dim = m.scorer.input_dim();
    for i in 1..=m.scorer.n_heads() {
        let w = take(input_dim).to_vec();
        let b = take(1)[0];
        m.scorer.set_head(i, &w, b)?;
    }
    let n = m.aggregator.weights.len();
    m.aggregator.weights.values_mut().copy_from_slice(take(n));
    let n = m.aggregator.bias.len();
    m.aggregator.bias.values_mut().copy_from_slice(take(n));
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(())
}
