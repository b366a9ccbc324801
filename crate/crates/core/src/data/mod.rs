//! Rich, poor and paired datasets plus the tooling around them.

mod ranking;
mod split;
mod synthetic;

pub use ranking::{channel_summaries, discretize, rank_by_entropy, rank_by_mutual_info, ChannelScore, N_BINS};
pub use split::{holdout, select_channels, select_paired_channels, split, split_paired, subsample_pairs};
pub use synthetic::{generate_synthetic, generate_with_sample_seed, SyntheticData, SyntheticSpec};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// One labeled multichannel series; `values` is channel-major (`C x T`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub id: u64,
    pub label: usize,
    pub n_channels: usize,
    pub seq_len: usize,
    pub values: Vec<f64>,
}

impl TimeSeriesSample {
    pub fn new(id: u64, label: usize, n_channels: usize, seq_len: usize, values: Vec<f64>) -> Result<Self> {
        if n_channels == 0 || seq_len == 0 {
            return Err(Error::DimensionMismatch(format!(
                "sample {id}: channels and steps must be positive"
            )));
        }
        if values.len() != n_channels * seq_len {
            return Err(Error::DimensionMismatch(format!(
                "sample {id}: {} values for {n_channels} x {seq_len}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {id}")));
        }
        Ok(Self {
            id,
            label,
            n_channels,
            seq_len,
            values,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.seq_len..(c + 1) * self.seq_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetRole {
    Rich,
    Poor,
    PairedRichView,
    PairedPoorView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub role: DatasetRole,
    pub n_channels: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Global channel identifiers, one per stored channel.
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub role: DatasetRole,
    pub n_channels: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub channels: Vec<usize>,
    pub samples: Vec<TimeSeriesSample>,
}

impl Dataset {
    pub fn new(
        name: &str,
        role: DatasetRole,
        n_classes: usize,
        channels: Vec<usize>,
        seq_len: usize,
        seed: u64,
        samples: Vec<TimeSeriesSample>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            role,
            n_channels: channels.len(),
            seq_len,
            n_classes,
            seed,
            channels,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_channels == 0 || self.seq_len == 0 {
            return Err(Error::InvalidConfig(format!(
                "dataset `{}` needs positive classes, channels and steps",
                self.name
            )));
        }
        if self.channels.len() != self.n_channels {
            return Err(Error::DimensionMismatch(format!(
                "dataset `{}` lists {} channel ids for {} channels",
                self.name,
                self.channels.len(),
                self.n_channels
            )));
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if s.n_channels != self.n_channels || s.seq_len != self.seq_len {
                return Err(Error::DimensionMismatch(format!(
                    "sample {} is {}x{}, dataset `{}` is {}x{}",
                    s.id, s.n_channels, s.seq_len, self.name, self.n_channels, self.seq_len
                )));
            }
            if s.label >= self.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    n_classes: self.n_classes,
                });
            }
            if !ids.insert(s.id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate sample id {} in `{}`",
                    s.id, self.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            role: self.role,
            n_channels: self.n_channels,
            seq_len: self.seq_len,
            n_classes: self.n_classes,
            n_samples: self.samples.len(),
            seed: self.seed,
            channels: self.channels.clone(),
        }
    }

    /// Same metadata, different samples.
    pub fn with_samples(&self, samples: Vec<TimeSeriesSample>) -> Self {
        Self {
            samples,
            ..self.without_samples()
        }
    }

    fn without_samples(&self) -> Self {
        Self {
            name: self.name.clone(),
            role: self.role,
            n_channels: self.n_channels,
            seq_len: self.seq_len,
            n_classes: self.n_classes,
            seed: self.seed,
            channels: self.channels.clone(),
            samples: Vec::new(),
        }
    }

    /// Concatenation of two datasets with identical metadata.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.n_channels != other.n_channels || self.seq_len != other.seq_len || self.n_classes != other.n_classes {
            return Err(Error::DimensionMismatch(
                "cannot concatenate datasets of different shapes".into(),
            ));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        let ds = self.with_samples(samples);
        ds.validate()?;
        Ok(ds)
    }
}

/// Aligned rich and poor views of the same subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub rich: Dataset,
    pub poor: Dataset,
    /// Poor view is a copy of the rich view (degenerate, used for the
    /// realizable setting); the disjoint-channel check is skipped.
    pub mirrored: bool,
}

impl PairedDataset {
    pub fn new(rich: Dataset, poor: Dataset) -> Result<Self> {
        let p = Self {
            rich,
            poor,
            mirrored: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn mirrored(rich: Dataset, poor: Dataset) -> Result<Self> {
        let p = Self {
            rich,
            poor,
            mirrored: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.rich.validate()?;
        self.poor.validate()?;
        if self.rich.len() != self.poor.len() {
            return Err(Error::LengthMismatch {
                expected: self.rich.len(),
                actual: self.poor.len(),
            });
        }
        if self.rich.n_classes != self.poor.n_classes {
            return Err(Error::DimensionMismatch("paired views disagree on class count".into()));
        }
        for (r, p) in self.rich.samples.iter().zip(&self.poor.samples) {
            if r.id != p.id {
                return Err(Error::InvalidConfig(format!(
                    "paired views misaligned: rich id {} vs poor id {}",
                    r.id, p.id
                )));
            }
            if r.label != p.label {
                return Err(Error::InvalidConfig(format!("paired sample {} has two labels", r.id)));
            }
        }
        if !self.mirrored {
            let rich: BTreeSet<_> = self.rich.channels.iter().collect();
            if let Some(c) = self.poor.channels.iter().find(|c| rich.contains(c)) {
                return Err(Error::InvalidConfig(format!(
                    "channel {c} appears in both the rich and the poor view"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rich.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rich.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.rich.samples.iter().map(|s| s.id).collect()
    }

    /// Keep the pairs at the given positions, in the given order.
    pub fn take(&self, positions: &[usize]) -> Self {
        Self {
            rich: self
                .rich
                .with_samples(positions.iter().map(|&i| self.rich.samples[i].clone()).collect()),
            poor: self
                .poor
                .with_samples(positions.iter().map(|&i| self.poor.samples[i].clone()).collect()),
            mirrored: self.mirrored,
        }
    }
}

#[cfg(test)]
mod tests;
