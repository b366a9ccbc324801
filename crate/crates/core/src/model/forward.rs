use alloc::vec;
use alloc::vec::Vec;

use super::params::{self, conv_b, conv_w};
use super::{Architecture, ScorerMode};
use crate::data::TimeSeriesSample;
use crate::error::{Error, Result};
use crate::tensor::{ExprGraph, NodeId, Tensor};

pub(crate) const INPUT: &str = "x";

/// Nodes of one model application inside a larger graph.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `[n, l, d]`
    pub q: NodeId,
    /// `[n, d]`
    pub scores: NodeId,
    /// `[n, c]`
    pub logits: NodeId,
    pub probs: NodeId,
}

/// `[n, C, T]` batch tensor.
pub fn input_tensor(samples: &[&TimeSeriesSample]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::EmptyDataset("batch".into()))?;
    let mut values = Vec::with_capacity(samples.len() * first.values.len());
    for s in samples {
        values.extend_from_slice(&s.values);
    }
    Tensor::new(vec![samples.len(), first.n_channels, first.seq_len], values)
}

/// Appends the model applied to `x` (`[n, C, T]`). Parameters are graph
/// inputs named as in [`TransferableModel::bindings`](super::TransferableModel::bindings),
/// so applying the model twice in one graph shares them.
pub fn build_forward(g: &mut ExprGraph, arch: &Architecture, x: NodeId) -> ForwardNodes {
    let l = arch.l();
    let d = arch.d();
    let mut h = g.segment(x, l);
    for (i, _) in arch.extractor.conv_layers.iter().enumerate() {
        let w = g.input(&conv_w(i));
        let b = g.input(&conv_b(i));
        let c = g.conv1d(h, w, b, arch.extractor.conv_layers[i].stride);
        h = g.relu(c);
    }
    let pooled = g.mean_pool(h);
    let seq = g.reshape_tail(pooled, &[l, arch.pooled_width()]);
    let wx = g.input(params::LSTM_WX);
    let wh = g.input(params::LSTM_WH);
    let bl = g.input(params::LSTM_B);
    let mut state = None;
    let mut hs = Vec::with_capacity(l);
    for m in 0..l {
        let xm = g.select(seq, 1, m);
        let (hm, cm) = g.lstm_step(xm, state, wx, wh, bl, d);
        state = Some((hm, cm));
        hs.push(hm);
    }
    let q = g.stack(&hs);
    g.label(q, "Q");

    let sw = g.input(params::SCORER_W);
    let sb = g.input(params::SCORER_B);
    let scores = match arch.scorer {
        ScorerMode::RawLinear => {
            let flat = g.reshape_tail(x, &[arch.n_channels * arch.seq_len]);
            g.affine(flat, sw, sb)
        }
        ScorerMode::RawTanh => {
            let flat = g.reshape_tail(x, &[arch.n_channels * arch.seq_len]);
            let z = g.affine(flat, sw, sb);
            g.tanh(z)
        }
        ScorerMode::FeatureAttention => {
            let flat = g.reshape_tail(q, &[l * d]);
            let z = g.affine(flat, sw, sb);
            g.tanh(z)
        }
    };
    g.label(scores, "scores");
    let combined = g.batch_matvec(q, scores);
    let ow = g.input(params::DENSE_W);
    let ob = g.input(params::DENSE_B);
    let logits = g.affine(combined, ow, ob);
    g.label(logits, "logits");
    let probs = g.softmax(logits, arch.temperature);
    ForwardNodes {
        q,
        scores,
        logits,
        probs,
    }
}
