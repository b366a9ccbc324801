use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetRole, PairedDataset, TimeSeriesSample};
use crate::error::{Error, Result};
use crate::rng::{rng_from, streams, Rng};

/// Class-conditioned latent prototypes observed through per-channel linear
/// mixing plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    /// Prototype length, equal to the series length.
    pub seq_len: usize,
    pub n_latent: usize,
    pub rich_channels: usize,
    pub poor_channels: usize,
    pub rich_noise: Vec<f64>,
    pub poor_noise: Vec<f64>,
    pub rich_informativeness: Vec<f64>,
    pub poor_informativeness: Vec<f64>,
    pub class_separation: f64,
    pub latent_noise: f64,
    pub n_rich: usize,
    pub n_poor: usize,
    pub n_paired: usize,
    pub seed: u64,
    /// Poor view is an exact copy of the rich view (`poor_channels` must
    /// equal `rich_channels`).
    #[serde(default)]
    pub mirror_views: bool,
    /// Probability that a recorded label is replaced by a uniformly drawn
    /// class; the signal still follows the true class.
    #[serde(default)]
    pub label_noise: f64,
}

impl SyntheticSpec {
    /// Four classes, eight clean rich channels, two noisy poor channels.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            n_classes: 4,
            seq_len: 32,
            n_latent: 3,
            rich_channels: 8,
            poor_channels: 2,
            rich_noise: vec![0.6; 8],
            poor_noise: vec![1.5; 2],
            rich_informativeness: vec![1.0; 8],
            poor_informativeness: vec![0.6; 2],
            class_separation: 1.0,
            latent_noise: 0.3,
            n_rich: 4000,
            n_poor: 2000,
            n_paired: 1000,
            seed,
            mirror_views: false,
            label_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if self.n_classes < 1 || self.seq_len < 1 || self.n_latent < 1 {
            return bad("classes, length and latent size must be positive");
        }
        if self.poor_channels < 1 {
            return bad("need at least one poor channel");
        }
        if self.mirror_views {
            if self.rich_channels != self.poor_channels {
                return bad("mirrored views need equal channel counts");
            }
        } else if self.rich_channels <= self.poor_channels {
            return bad("rich channels must outnumber poor channels");
        }
        if self.rich_noise.len() != self.rich_channels
            || self.rich_informativeness.len() != self.rich_channels
            || self.poor_noise.len() != self.poor_channels
            || self.poor_informativeness.len() != self.poor_channels
        {
            return bad("per-channel noise/informativeness lists must match channel counts");
        }
        let all = self
            .rich_noise
            .iter()
            .chain(&self.poor_noise)
            .chain(&self.rich_informativeness)
            .chain(&self.poor_informativeness);
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label noise must lie in [0, 1]");
        }
        for v in all.chain([&self.latent_noise, &self.class_separation]) {
            if !(v.is_finite() && *v >= 0.0) {
                return bad("noise, informativeness and separation must be finite and >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub rich: Dataset,
    pub poor: Dataset,
    pub paired: PairedDataset,
}

struct Structure {
    /// `[class][latent][t]`
    prototypes: Vec<Vec<Vec<f64>>>,
    rich_mixing: Vec<Vec<f64>>,
    poor_mixing: Vec<Vec<f64>>,
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn structure(spec: &SyntheticSpec) -> Structure {
    let mut rng = rng_from(spec.seed, streams::STRUCTURE, 0);
    let t_len = spec.seq_len as f64;
    let prototypes = (0..spec.n_classes)
        .map(|_| {
            (0..spec.n_latent)
                .map(|_| {
                    let offset = normal(&mut rng);
                    let waves: Vec<(f64, f64, f64)> = (1..=3)
                        .map(|f| (normal(&mut rng) / 3f64.sqrt(), f as f64, rng.random::<f64>() * 2.0 * PI))
                        .collect();
                    (0..spec.seq_len)
                        .map(|t| {
                            let wave: f64 = waves
                                .iter()
                                .map(|(a, f, ph)| a * libm::sin(2.0 * PI * f * t as f64 / t_len + ph))
                                .sum();
                            spec.class_separation * (offset + wave)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let scale = 1.0 / libm::sqrt(spec.n_latent as f64);
    let mut mixing = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..spec.n_latent).map(|_| normal(&mut rng) * scale).collect())
            .collect()
    };
    let rich_mixing = mixing(spec.rich_channels);
    let poor_mixing = mixing(spec.poor_channels);
    Structure {
        prototypes,
        rich_mixing,
        poor_mixing,
    }
}

fn observe(latent: &[Vec<f64>], mixing: &[Vec<f64>], inform: &[f64], noise: &[f64], rng: &mut Rng) -> Vec<f64> {
    let t_len = latent[0].len();
    let mut out = Vec::with_capacity(mixing.len() * t_len);
    for (ch, row) in mixing.iter().enumerate() {
        for t in 0..t_len {
            let signal: f64 = row.iter().zip(latent).map(|(m, z)| m * z[t]).sum();
            out.push(inform[ch] * signal + noise[ch] * normal(rng));
        }
    }
    out
}

/// Draws `(H_r, H_p, H_o)`. Every sample has its own counter-derived seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    generate_with_sample_seed(spec, spec.seed)
}

/// Same class structure and channel mixing as `spec.seed`, but fresh
/// samples drawn from `sample_seed`: independent draws from one distribution.
pub fn generate_with_sample_seed(spec: &SyntheticSpec, sample_seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let st = structure(spec);
    let c = spec.n_classes;
    let latent_for = |rng: &mut Rng| -> (usize, Vec<Vec<f64>>) {
        let label = rng.random_range(0..c);
        let z = st.prototypes[label]
            .iter()
            .map(|p| p.iter().map(|v| v + spec.latent_noise * normal(rng)).collect())
            .collect();
        (label, z)
    };
    let rich_view =
        |z: &[Vec<f64>], rng: &mut Rng| observe(z, &st.rich_mixing, &spec.rich_informativeness, &spec.rich_noise, rng);
    let poor_view =
        |z: &[Vec<f64>], rng: &mut Rng| observe(z, &st.poor_mixing, &spec.poor_informativeness, &spec.poor_noise, rng);
    // drawn after the views so a zero rate leaves every other draw unchanged
    let recorded = |label: usize, rng: &mut Rng| {
        if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            rng.random_range(0..c)
        } else {
            label
        }
    };
    let (r, p, t) = (spec.rich_channels, spec.poor_channels, spec.seq_len);

    let mut rich = Vec::with_capacity(spec.n_rich);
    for i in 0..spec.n_rich {
        let mut rng = rng_from(sample_seed, streams::RICH, i as u64);
        let (label, z) = latent_for(&mut rng);
        let values = rich_view(&z, &mut rng);
        let label = recorded(label, &mut rng);
        rich.push(TimeSeriesSample::new(i as u64, label, r, t, values)?);
    }
    let poor_base = spec.n_rich as u64;
    let mut poor = Vec::with_capacity(spec.n_poor);
    for i in 0..spec.n_poor {
        let mut rng = rng_from(sample_seed, streams::POOR, i as u64);
        let (label, z) = latent_for(&mut rng);
        let values = if spec.mirror_views {
            rich_view(&z, &mut rng)
        } else {
            poor_view(&z, &mut rng)
        };
        let label = recorded(label, &mut rng);
        poor.push(TimeSeriesSample::new(poor_base + i as u64, label, p, t, values)?);
    }
    let pair_base = poor_base + spec.n_poor as u64;
    let mut pair_rich = Vec::with_capacity(spec.n_paired);
    let mut pair_poor = Vec::with_capacity(spec.n_paired);
    for i in 0..spec.n_paired {
        let mut rng = rng_from(sample_seed, streams::PAIRED, i as u64);
        let (label, z) = latent_for(&mut rng);
        let id = pair_base + i as u64;
        let rv = rich_view(&z, &mut rng);
        let pv = if spec.mirror_views {
            rv.clone()
        } else {
            poor_view(&z, &mut rng)
        };
        let label = recorded(label, &mut rng);
        pair_rich.push(TimeSeriesSample::new(id, label, r, t, rv)?);
        pair_poor.push(TimeSeriesSample::new(id, label, p, t, pv)?);
    }

    let rich_ids: Vec<usize> = (0..r).collect();
    let poor_ids: Vec<usize> = if spec.mirror_views {
        rich_ids.clone()
    } else {
        (r..r + p).collect()
    };
    let ds =
        |name: &str, role, ids: &Vec<usize>, samples| Dataset::new(name, role, c, ids.clone(), t, sample_seed, samples);
    let rich = ds("rich", DatasetRole::Rich, &rich_ids, rich)?;
    let poor = ds("poor", DatasetRole::Poor, &poor_ids, poor)?;
    let pr = ds("paired-rich", DatasetRole::PairedRichView, &rich_ids, pair_rich)?;
    let pp = ds("paired-poor", DatasetRole::PairedPoorView, &poor_ids, pair_poor)?;
    let paired = if spec.mirror_views {
        PairedDataset::mirrored(pr, pp)?
    } else {
        PairedDataset::new(pr, pp)?
    };
    Ok(SyntheticData { rich, poor, paired })
}
