//! Run configuration: an [`ExperimentConfig`] plus where the data comes
//! from and how many workers to use, with command-line overrides.

use std::path::{Path, PathBuf};

use cheer_core::data::generate_with_sample_seed;
use cheer_core::data::{Dataset, PairedDataset};
use cheer_core::experiment::{ChannelPolicy, ExperimentConfig, Method};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{load_dataset, load_paired, read_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    /// Directory written by `gen-data`; when set it replaces the synthetic
    /// draw and every seed resplits the same data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Parallel seeds; defaults to the number of cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::benchmark((0..10).collect()),
            data_dir: None,
            workers: None,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paired_ratio: Option<f64>,
    pub channels: Option<String>,
    pub methods: Vec<String>,
    pub data_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        let e = &mut self.experiment;
        if let Some(s) = o.seed {
            e.seeds = vec![s];
        }
        if let Some(r) = o.paired_ratio {
            e.paired_ratio = r;
        }
        if let Some(c) = &o.channels {
            e.channels = parse_channels(c)?;
        }
        if !o.methods.is_empty() {
            e.methods = parse_methods(&o.methods)?;
        }
        if o.data_dir.is_some() {
            self.data_dir.clone_from(&o.data_dir);
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        Ok(())
    }
}

/// `all`, an explicit list `0,2`, or `<rank>:<n>` with rank one of
/// `top-mi`, `bottom-mi`, `top-entropy`, `middle-entropy`, `bottom-entropy`.
pub fn parse_channels(s: &str) -> Result<ChannelPolicy> {
    let bad = || CliError::Config(format!("cannot parse channel selection `{s}`"));
    let s = s.trim();
    if s == "all" {
        return Ok(ChannelPolicy::All);
    }
    if let Some((kind, n)) = s.split_once(':') {
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        return Ok(match kind.trim() {
            "top-mi" => ChannelPolicy::TopMi(n),
            "bottom-mi" => ChannelPolicy::BottomMi(n),
            "top-entropy" => ChannelPolicy::TopEntropy(n),
            "middle-entropy" => ChannelPolicy::MiddleEntropy(n),
            "bottom-entropy" => ChannelPolicy::BottomEntropy(n),
            _ => return Err(bad()),
        });
    }
    let idx: std::result::Result<Vec<usize>, _> = s.split(',').map(|v| v.trim().parse()).collect();
    Ok(ChannelPolicy::Explicit(idx.map_err(|_| bad())?))
}

/// Accepts repeated flags and comma lists alike.
pub fn parse_methods(v: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in v.iter().flat_map(|s| s.split(',')) {
        let m = Method::parse(name.trim())?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

/// The three datasets a seed works from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceData {
    pub rich: Dataset,
    pub poor: Dataset,
    pub paired: PairedDataset,
}

/// Subdirectories of a `gen-data` output.
pub const RICH_DIR: &str = "rich";
pub const POOR_DIR: &str = "poor";
pub const PAIRED_DIR: &str = "paired";

pub fn load_source_dir(dir: &Path) -> Result<SourceData> {
    Ok(SourceData {
        rich: load_dataset(&dir.join(RICH_DIR))?,
        poor: load_dataset(&dir.join(POOR_DIR))?,
        paired: load_paired(&dir.join(PAIRED_DIR))?,
    })
}

impl RunConfig {
    /// Loads `data_dir`, or draws fresh synthetic samples for `seed`.
    pub fn source(&self, seed: u64) -> Result<SourceData> {
        match &self.data_dir {
            Some(d) => load_source_dir(d),
            None => {
                let d = generate_with_sample_seed(&self.experiment.spec, seed)?;
                Ok(SourceData {
                    rich: d.rich,
                    poor: d.poor,
                    paired: d.paired,
                })
            }
        }
    }
}
