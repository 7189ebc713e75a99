//! Checkpoint container: `MATT1\n` magic, an 8-byte little-endian header
//! length, a JSON header describing the run and the tensor table, then raw
//! f32 little-endian tensor data at 64-byte-aligned offsets relative to
//! the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Rng, Tensor};
use crate::error::{Error, Result};
use crate::extraction::StandaloneModel;
use crate::matlayers::MatTAModel;
use crate::teacher_data::{streams, EvalMetrics};

use super::config::RunConfig;

pub const MAGIC: &[u8; 6] = b"MATT1\n";
pub const VERSION: u32 = 1;
const ALIGN: u64 = 64;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSummary {
    pub step: u64,
    pub student: EvalMetrics,
    pub ta: EvalMetrics,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: [usize; 2],
    offset: u64,
    byte_len: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: RunConfig,
    final_step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metrics_summary: Option<MetricsSummary>,
    /// Label of the extract config this file holds, if it is a materialized
    /// standalone model rather than a training run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extracted: Option<String>,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: config echo (seed pinned to the run's seed),
/// named tensor table, final step, and the last evaluation.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub final_step: u64,
    pub metrics_summary: Option<MetricsSummary>,
    pub extracted: Option<String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _)| n.as_str()).collect()
    }
}

fn align_up(v: u64) -> u64 {
    v.div_ceil(ALIGN) * ALIGN
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut cursor = 0u64;
    for (name, t) in &ckpt.tensors {
        let byte_len = (t.len() * 4) as u64;
        let offset = align_up(cursor);
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".to_string(),
            shape: [t.rows(), t.cols()],
            offset,
            byte_len,
        });
        cursor = offset + byte_len;
    }
    let header = Header {
        version: VERSION,
        config: ckpt.config.clone(),
        final_step: ckpt.final_step,
        metrics_summary: ckpt.metrics_summary,
        extracted: ckpt.extracted.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header_json.len() + cursor as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    let data_start = bytes.len();
    bytes.resize(data_start + cursor as usize, 0);
    for ((_, t), entry) in ckpt.tensors.iter().zip(&header.tensors) {
        let mut at = data_start + entry.offset as usize;
        for &v in t.data() {
            bytes[at..at + 4].copy_from_slice(&(v as f32).to_le_bytes());
            at += 4;
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Checkpoint(format!(
            "{}: file too short ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            &bytes[..MAGIC.len()]
        )));
    }
    let header_len =
        u64::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 8;
    let data_start = header_start
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            Error::Checkpoint(format!("{}: header length {header_len} exceeds file", path.display()))
        })?;
    let header: Header = serde_json::from_slice(&bytes[header_start..data_start])
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {} (expected {VERSION})",
            path.display(),
            header.version
        )));
    }
    let data = &bytes[data_start..];

    // offsets must be aligned, in-bounds, and non-overlapping
    let mut spans: Vec<(u64, u64, &str)> = header
        .tensors
        .iter()
        .map(|e| (e.offset, e.byte_len, e.name.as_str()))
        .collect();
    spans.sort();
    let mut prev_end = 0u64;
    for (offset, len, name) in spans {
        if offset % ALIGN != 0 {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: offset {offset} not {ALIGN}-byte aligned"
            )));
        }
        if offset < prev_end {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: data overlaps the previous tensor"
            )));
        }
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= data.len() as u64)
            .ok_or_else(|| {
                Error::Checkpoint(format!("tensor {name}: data span exceeds the file"))
            })?;
        prev_end = end;
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "tensor {}: unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let expected = (entry.shape[0] * entry.shape[1] * 4) as u64;
        if entry.byte_len != expected {
            return Err(Error::Checkpoint(format!(
                "tensor {}: byte_len {} does not match shape {}x{}",
                entry.name, entry.byte_len, entry.shape[0], entry.shape[1]
            )));
        }
        let start = entry.offset as usize;
        let raw = &data[start..start + entry.byte_len as usize];
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(entry.shape[0], entry.shape[1], values).map_err(|e| {
            Error::Checkpoint(format!("tensor {}: {e}", entry.name))
        })?;
        tensors.push((entry.name.clone(), t));
    }
    Ok(Checkpoint {
        config: header.config,
        final_step: header.final_step,
        metrics_summary: header.metrics_summary,
        extracted: header.extracted,
        tensors,
    })
}

/// Rebuilds the trained model from a run checkpoint (geometry from the
/// config, weights from the tensor table; `optim.*` entries are ignored).
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<MatTAModel> {
    if ckpt.extracted.is_some() {
        return Err(Error::Checkpoint(
            "this file holds an extracted standalone model, not a training run".into(),
        ));
    }
    let cfg = &ckpt.config;
    let mut rng = Rng::stream(cfg.seed.first(), streams::INIT);
    let mut model = MatTAModel::new(
        cfg.model_dims(),
        cfg.sharing,
        cfg.model.activation,
        &mut rng,
    )?;
    for (name, slot) in model.named_tensors_mut() {
        let stored = ckpt
            .tensor(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if stored.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored shape {:?} does not match model {:?}",
                stored.shape(),
                slot.shape()
            )));
        }
        *slot = stored.detached();
    }
    Ok(model)
}

/// Saves a materialized standalone model in the same container.
pub fn save_standalone(path: &Path, model: &StandaloneModel, config: &RunConfig) -> Result<()> {
    let mut tensors = vec![("encoder".to_string(), model.encoder.detached())];
    for (i, b) in model.blocks.iter().enumerate() {
        tensors.push((format!("blocks.{i}.up"), b.up.detached()));
        tensors.push((format!("blocks.{i}.down_top"), b.down_top.detached()));
        if let Some(bottom) = &b.down_bottom {
            tensors.push((format!("blocks.{i}.down_bottom"), bottom.detached()));
        }
    }
    tensors.push(("readout".to_string(), model.readout.detached()));
    save(
        path,
        &Checkpoint {
            config: config.clone(),
            final_step: 0,
            metrics_summary: None,
            extracted: Some(model.label.clone()),
            tensors,
        },
    )
}

/// Rebuilds a standalone model saved with [`save_standalone`].
pub fn standalone_from_checkpoint(ckpt: &Checkpoint) -> Result<StandaloneModel> {
    let label = ckpt.extracted.clone().ok_or_else(|| {
        Error::Checkpoint("this file holds a training run, not an extracted model".into())
    })?;
    let encoder = ckpt
        .tensor("encoder")
        .ok_or_else(|| Error::Checkpoint("missing tensor encoder".into()))?
        .detached();
    let readout = ckpt
        .tensor("readout")
        .ok_or_else(|| Error::Checkpoint("missing tensor readout".into()))?
        .detached();
    let mut blocks = Vec::new();
    for i in 0.. {
        let Some(up) = ckpt.tensor(&format!("blocks.{i}.up")) else {
            break;
        };
        let down_top = ckpt
            .tensor(&format!("blocks.{i}.down_top"))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor blocks.{i}.down_top")))?;
        let down_bottom = ckpt.tensor(&format!("blocks.{i}.down_bottom")).cloned();
        blocks.push(crate::extraction::PlainBlock {
            up: up.detached(),
            down_top: down_top.detached(),
            down_bottom,
            activation: ckpt.config.model.activation,
        });
    }
    Ok(StandaloneModel {
        label,
        encoder,
        blocks,
        readout,
    })
}
