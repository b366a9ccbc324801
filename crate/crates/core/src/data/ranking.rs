//! Channel rankings by class-averaged entropy and by mutual information with
//! the label. Each channel is summarized by its per-sample time mean and
//! discretized into [`N_BINS`] equal-width bins over its observed range.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const N_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    /// Position of the channel within the dataset.
    pub index: usize,
    /// Bits.
    pub score: f64,
}

/// `[channel][sample]` time means.
pub fn channel_summaries(ds: &Dataset) -> Vec<Vec<f64>> {
    (0..ds.n_channels)
        .map(|c| {
            ds.samples
                .iter()
                .map(|s| s.channel(c).iter().sum::<f64>() / s.seq_len as f64)
                .collect()
        })
        .collect()
}

/// Equal-width bin index of each value over the observed range.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    values
        .iter()
        .map(|&v| {
            if width <= 0.0 {
                0
            } else {
                let b = libm::floor((v - lo) / width * bins as f64) as usize;
                b.min(bins - 1)
            }
        })
        .collect()
}

fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * libm::log2(p)
        })
        .sum()
}

fn sorted(mut scores: Vec<ChannelScore>) -> Vec<ChannelScore> {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    scores
}

/// Average over classes of each channel's histogram entropy, decreasing.
pub fn rank_by_entropy(ds: &Dataset) -> Result<Vec<ChannelScore>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("entropy ranking".into()));
    }
    let labels = ds.labels();
    let scores = channel_summaries(ds)
        .iter()
        .enumerate()
        .map(|(index, summary)| {
            let bins = discretize(summary, N_BINS);
            let mut per_class = vec![vec![0usize; N_BINS]; ds.n_classes];
            for (&b, &y) in bins.iter().zip(&labels) {
                per_class[y][b] += 1;
            }
            let present: Vec<&Vec<usize>> = per_class.iter().filter(|h| h.iter().any(|&c| c > 0)).collect();
            let score = present.iter().map(|h| entropy_bits(h)).sum::<f64>() / present.len() as f64;
            ChannelScore { index, score }
        })
        .collect();
    Ok(sorted(scores))
}

/// Plug-in mutual information between the discretized summary and the label,
/// decreasing.
pub fn rank_by_mutual_info(ds: &Dataset) -> Result<Vec<ChannelScore>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("mutual information ranking".into()));
    }
    let labels = ds.labels();
    let mut present = vec![false; ds.n_classes];
    labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidConfig(
            "mutual information needs at least two classes".into(),
        ));
    }
    let n = labels.len() as f64;
    let scores = channel_summaries(ds)
        .iter()
        .enumerate()
        .map(|(index, summary)| {
            let bins = discretize(summary, N_BINS);
            let mut joint = vec![vec![0usize; ds.n_classes]; N_BINS];
            for (&b, &y) in bins.iter().zip(&labels) {
                joint[b][y] += 1;
            }
            let pb: Vec<f64> = joint.iter().map(|r| r.iter().sum::<usize>() as f64 / n).collect();
            let py: Vec<f64> = (0..ds.n_classes)
                .map(|y| joint.iter().map(|r| r[y]).sum::<usize>() as f64 / n)
                .collect();
            let mut mi = 0.0;
            for (b, row) in joint.iter().enumerate() {
                for (y, &cnt) in row.iter().enumerate() {
                    if cnt > 0 {
                        let p = cnt as f64 / n;
                        mi += p * libm::log2(p / (pb[b] * py[y]));
                    }
                }
            }
            ChannelScore {
                index,
                score: mi.max(0.0),
            }
        })
        .collect();
    Ok(sorted(scores))
}
