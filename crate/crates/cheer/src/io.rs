//! Dataset directories: `manifest.json`, long-format `data.csv` and an
//! optional little-endian `data.bin`; paired directories hold `rich/`,
//! `poor/` and `pairs.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cheer_core::data::{Dataset, DatasetManifest, PairedDataset, TimeSeriesSample, FORMAT_VERSION};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const DATA_CSV: &str = "data.csv";
pub const DATA_BIN: &str = "data.bin";
pub const PAIRS: &str = "pairs.json";

const HEADER: [&str; 5] = ["sample_id", "label", "channel", "time_index", "value"];

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(CliError::json(path))
}

/// Shortest text that round-trips: 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn sorted_samples(ds: &Dataset) -> Vec<&TimeSeriesSample> {
    let mut s: Vec<&TimeSeriesSample> = ds.samples.iter().collect();
    s.sort_by_key(|s| s.id);
    s
}

/// Writes `ds` in canonical order (sample id, channel, time). The channel
/// column is the position within the dataset; `manifest.channels` maps
/// positions to global channel ids.
pub fn save_dataset(ds: &Dataset, dir: &Path, binary: bool) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    write_json(&dir.join(MANIFEST), &ds.manifest())?;
    let csv_path = dir.join(DATA_CSV);
    let csv_err = |source| CliError::Csv {
        path: csv_path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(HEADER).map_err(csv_err)?;
    let mut blob = Vec::new();
    for s in sorted_samples(ds) {
        let (id, label) = (s.id.to_string(), s.label.to_string());
        for c in 0..s.n_channels {
            let ch = c.to_string();
            for (t, v) in s.channel(c).iter().enumerate() {
                w.write_record([
                    id.as_str(),
                    label.as_str(),
                    ch.as_str(),
                    &t.to_string(),
                    &format_value(*v),
                ])
                .map_err(csv_err)?;
                if binary {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    w.flush().map_err(CliError::io(&csv_path))?;
    let bin = dir.join(DATA_BIN);
    if binary {
        fs::write(&bin, blob).map_err(CliError::io(&bin))?;
    } else if bin.exists() {
        // a stale blob would contradict the new CSV
        fs::remove_file(&bin).map_err(CliError::io(&bin))?;
    }
    Ok(())
}

struct Partial {
    label: usize,
    values: Vec<Option<f64>>,
}

/// Reads a dataset directory. Row order in `data.csv` does not matter;
/// samples come back sorted by id. A `data.bin`, when present, must agree
/// bit for bit with the CSV values.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m: DatasetManifest = read_json(&dir.join(MANIFEST))?;
    if m.format_version != FORMAT_VERSION {
        return Err(CliError::format(
            dir.join(MANIFEST),
            format!("format version {} (expected {FORMAT_VERSION})", m.format_version),
        ));
    }
    let cells = m.n_channels * m.seq_len;
    let csv_path = dir.join(DATA_CSV);
    let bad = |detail: String| CliError::format(&csv_path, detail);
    let mut r = csv::Reader::from_path(&csv_path).map_err(|source| CliError::Csv {
        path: csv_path.clone(),
        source,
    })?;
    let header = r.headers().map_err(|source| CliError::Csv {
        path: csv_path.clone(),
        source,
    })?;
    if header.iter().ne(HEADER) {
        return Err(bad(format!("header {header:?}, expected {HEADER:?}")));
    }
    let mut samples: BTreeMap<u64, Partial> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|source| CliError::Csv {
            path: csv_path.clone(),
            source,
        })?;
        let row = line + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str| bad(format!("row {row}: bad {what}"));
        let id: u64 = field(0).parse().map_err(|_| parse_err("sample_id"))?;
        let label: usize = field(1).parse().map_err(|_| parse_err("label"))?;
        let ch: usize = field(2).parse().map_err(|_| parse_err("channel"))?;
        let t: usize = field(3).parse().map_err(|_| parse_err("time_index"))?;
        let v: f64 = field(4).parse().map_err(|_| parse_err("value"))?;
        if ch >= m.n_channels || t >= m.seq_len {
            return Err(bad(format!(
                "row {row}: cell ({ch}, {t}) outside {}x{}",
                m.n_channels, m.seq_len
            )));
        }
        let p = samples.entry(id).or_insert_with(|| Partial {
            label,
            values: vec![None; cells],
        });
        if p.label != label {
            return Err(bad(format!(
                "row {row}: sample {id} has labels {} and {label}",
                p.label
            )));
        }
        let slot = &mut p.values[ch * m.seq_len + t];
        if slot.is_some() {
            return Err(bad(format!("row {row}: duplicate cell ({id}, {ch}, {t})")));
        }
        *slot = Some(v);
    }
    if samples.len() != m.n_samples {
        return Err(bad(format!(
            "manifest declares {} samples, {} holds {}",
            m.n_samples,
            DATA_CSV,
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (id, p) in samples {
        let values: Option<Vec<f64>> = p.values.into_iter().collect();
        let values = values.ok_or_else(|| bad(format!("sample {id} is missing cells")))?;
        out.push(TimeSeriesSample::new(id, p.label, m.n_channels, m.seq_len, values)?);
    }
    let ds = Dataset::new(&m.name, m.role, m.n_classes, m.channels, m.seq_len, m.seed, out)?;
    let bin = dir.join(DATA_BIN);
    if bin.exists() {
        let bytes = fs::read(&bin).map_err(CliError::io(&bin))?;
        if bytes.len() != ds.len() * cells * 8 {
            return Err(CliError::format(
                &bin,
                format!("{} bytes, expected {}", bytes.len(), ds.len() * cells * 8),
            ));
        }
        let agrees = bytes
            .chunks_exact(8)
            .zip(ds.samples.iter().flat_map(|s| s.values.iter()))
            .all(|(b, v)| f64::from_le_bytes(b.try_into().expect("8 bytes")).to_bits() == v.to_bits());
        if !agrees {
            return Err(CliError::format(&bin, "values disagree with data.csv"));
        }
    }
    Ok(ds)
}

/// Reads only the binary blob, in canonical order.
pub fn load_values_bin(dir: &Path) -> Result<Vec<f64>> {
    let bin = dir.join(DATA_BIN);
    let bytes = fs::read(&bin).map_err(CliError::io(&bin))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::format(&bin, "length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsFile {
    pub format_version: u32,
    /// Shared sample ids, in pair order.
    pub ids: Vec<u64>,
    pub mirrored: bool,
}

pub fn save_paired(p: &PairedDataset, dir: &Path, binary: bool) -> Result<()> {
    p.validate()?;
    save_dataset(&p.rich, &dir.join("rich"), binary)?;
    save_dataset(&p.poor, &dir.join("poor"), binary)?;
    write_json(
        &dir.join(PAIRS),
        &PairsFile {
            format_version: FORMAT_VERSION,
            ids: p.ids(),
            mirrored: p.mirrored,
        },
    )
}

pub fn load_paired(dir: &Path) -> Result<PairedDataset> {
    let pairs: PairsFile = read_json(&dir.join(PAIRS))?;
    let rich = load_dataset(&dir.join("rich"))?;
    let poor = load_dataset(&dir.join("poor"))?;
    let order = |ds: &Dataset| -> Result<Vec<TimeSeriesSample>> {
        let by_id: BTreeMap<u64, &TimeSeriesSample> = ds.samples.iter().map(|s| (s.id, s)).collect();
        if by_id.len() != pairs.ids.len() {
            return Err(CliError::format(
                dir.join(PAIRS),
                format!(
                    "{} ids listed, view `{}` has {} samples",
                    pairs.ids.len(),
                    ds.name,
                    by_id.len()
                ),
            ));
        }
        pairs
            .ids
            .iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|s| (*s).clone())
                    .ok_or_else(|| CliError::format(dir.join(PAIRS), format!("id {id} missing from `{}`", ds.name)))
            })
            .collect()
    };
    let rich = rich.with_samples(order(&rich)?);
    let poor = poor.with_samples(order(&poor)?);
    Ok(if pairs.mirrored {
        PairedDataset::mirrored(rich, poor)?
    } else {
        PairedDataset::new(rich, poor)?
    })
}
