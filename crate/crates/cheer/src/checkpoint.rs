//! Model checkpoints: `model.json` plus `params.bin` (little-endian f64 in
//! the order given by `layout`).

use std::fs;
use std::path::Path;

use cheer_core::model::{Architecture, ScorerMode, TransferableModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_json, write_json};

pub const MODEL_JSON: &str = "model.json";
pub const PARAMS_BIN: &str = "params.bin";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch: Architecture,
    pub seed: u64,
    // denormalized for readers that skip `arch`
    pub d: usize,
    pub l: usize,
    pub n_classes: usize,
    pub scorer: ScorerMode,
    pub temperature: f64,
    pub n_params: usize,
    pub layout: Vec<(String, usize)>,
}

pub fn save_model(m: &TransferableModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let flat = m.to_flat();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        arch: m.arch.clone(),
        seed: m.seed,
        d: m.arch.d(),
        l: m.arch.l(),
        n_classes: m.arch.n_classes,
        scorer: m.arch.scorer,
        temperature: m.arch.temperature,
        n_params: flat.len(),
        layout: m.flat_layout(),
    };
    write_json(&dir.join(MODEL_JSON), &manifest)?;
    let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();
    let p = dir.join(PARAMS_BIN);
    fs::write(&p, bytes).map_err(CliError::io(&p))
}

pub fn load_model(dir: &Path) -> Result<TransferableModel> {
    let path = dir.join(MODEL_JSON);
    let m: CheckpointManifest = read_json(&path)?;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(CliError::format(
            &path,
            format!("checkpoint version {}", m.format_version),
        ));
    }
    let p = dir.join(PARAMS_BIN);
    let bytes = fs::read(&p).map_err(CliError::io(&p))?;
    if bytes.len() != m.n_params * 8 {
        return Err(CliError::format(
            &p,
            format!("{} bytes for {} parameters", bytes.len(), m.n_params),
        ));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let model = TransferableModel::from_flat(m.arch, m.seed, &flat)?;
    if model.flat_layout() != m.layout {
        return Err(CliError::format(
            &path,
            "parameter layout does not match the architecture",
        ));
    }
    Ok(model)
}
