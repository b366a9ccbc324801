use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{Dataset, PairedDataset};
use crate::error::{Error, Result};
use crate::rng::{rng_from, streams};

fn seeded_permutation(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, stream, n as u64));
    idx
}

/// Part sizes: floor each fraction, leftovers go to the first part.
fn part_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Domain(format!(
            "split fractions {fractions:?} must lie in [0, 1]"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("split fractions sum to {total}, not 1")));
    }
    let floor = |f: f64| libm::floor(f * n as f64 + 1e-9) as usize;
    let val = floor(fractions[1]);
    let test = floor(fractions[2]);
    Ok([n - val - test, val, test])
}

fn partition(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let sizes = part_sizes(n, fractions)?;
    let perm = seeded_permutation(n, seed, streams::SPLIT);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut start = 0;
    for (part, size) in parts.iter_mut().zip(sizes) {
        *part = perm[start..start + size].to_vec();
        part.sort_unstable();
        start += size;
    }
    Ok(parts)
}

/// Seeded disjoint train/validation/test partition.
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = partition(ds.len(), fractions, seed)?;
    let take = |idx: &[usize]| ds.with_samples(idx.iter().map(|&i| ds.samples[i].clone()).collect());
    Ok((take(&a), take(&b), take(&c)))
}

/// Paired split; both views of an id always land in the same part.
pub fn split_paired(
    ds: &PairedDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(PairedDataset, PairedDataset, PairedDataset)> {
    let [a, b, c] = partition(ds.len(), fractions, seed)?;
    Ok((ds.take(&a), ds.take(&b), ds.take(&c)))
}

/// `(train, validation)` with `frac` of the samples held out.
pub fn holdout(ds: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val, _) = split(ds, [1.0 - frac, frac, 0.0], seed ^ streams::HOLDOUT)?;
    Ok((train, val))
}

/// First `floor(ratio * k)` entries of a seeded permutation, so smaller
/// ratios under one seed are subsets of larger ones.
pub fn subsample_pairs(ds: &PairedDataset, ratio: f64, seed: u64) -> Result<PairedDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("paired ratio {ratio} must lie in (0, 1]")));
    }
    let k = ds.len();
    let keep = libm::floor(ratio * k as f64 + 1e-9) as usize;
    let perm = seeded_permutation(k, seed, streams::SUBSAMPLE);
    let mut chosen = perm[..keep].to_vec();
    chosen.sort_unstable();
    Ok(ds.take(&chosen))
}

fn check_indices(ds: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Domain("channel selection is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for &i in indices {
        if i >= ds.n_channels {
            return Err(Error::Domain(format!(
                "channel index {i} out of range for {} channels",
                ds.n_channels
            )));
        }
        if !seen.insert(i) {
            return Err(Error::Domain(format!("channel index {i} selected twice")));
        }
    }
    Ok(())
}

/// Restricts every sample to the channels at `indices` (positions within
/// the dataset, in the given order).
pub fn select_channels(ds: &Dataset, indices: &[usize]) -> Result<Dataset> {
    check_indices(ds, indices)?;
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut v = Vec::with_capacity(indices.len() * s.seq_len);
            for &c in indices {
                v.extend_from_slice(s.channel(c));
            }
            let mut out = s.clone();
            out.values = v;
            out.n_channels = indices.len();
            out
        })
        .collect();
    let mut out = ds.with_samples(samples);
    out.n_channels = indices.len();
    out.channels = indices.iter().map(|&i| ds.channels[i]).collect();
    Ok(out)
}

/// Channel selection applied to the poor view of a paired dataset.
pub fn select_paired_channels(ds: &PairedDataset, indices: &[usize]) -> Result<PairedDataset> {
    Ok(PairedDataset {
        rich: ds.rich.clone(),
        poor: select_channels(&ds.poor, indices)?,
        mirrored: ds.mirrored,
    })
}
