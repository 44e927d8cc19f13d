//! The `PEFT1` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        5 bytes  "PEFT1"
//! version      u32
//! kind         u8       0 = model, 1 = prefix, 2 = lora
//! config_len   u64      followed by that many bytes of canonical JSON
//! tensor_count u64
//! per tensor:  name_len u64, name bytes, ndim u64, dims u64 * ndim,
//!              data f64 * product(dims)
//! checksum     32 bytes sha256 over everything above
//! ```
//!
//! Round trips are bit-exact; the checksum is validated before anything is
//! parsed, so any single flipped byte is rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use peftlab_autograd::Tensor;
use peftlab_model::{ModelConfig, TransformerModel};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{AdapterError, Result};
use crate::lora::{LoraAdapter, LoraConfig};
use crate::prefix::{PrefixAdapter, PrefixConfig};

pub const FORMAT_MAGIC: &[u8; 5] = b"PEFT1";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Model,
    Prefix,
    Lora,
}

impl CheckpointKind {
    fn tag(self) -> u8 {
        match self {
            Self::Model => 0,
            Self::Prefix => 1,
            Self::Lora => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::Model),
            1 => Ok(Self::Prefix),
            2 => Ok(Self::Lora),
            other => Err(AdapterError::UnknownKind { found: other }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::Prefix => "prefix",
            Self::Lora => "lora",
        }
    }
}

/// A parsed container before any type-specific validation.
#[derive(Debug, Clone)]
pub struct RawCheckpoint {
    pub kind: CheckpointKind,
    pub config: Value,
    pub tensors: Vec<(String, Tensor)>,
}

/// Serializes and writes a checkpoint. Tensor order is preserved, so
/// writing the same content twice yields byte-identical files.
pub fn save_checkpoint(
    path: &Path,
    kind: CheckpointKind,
    config: &Value,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(FORMAT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(kind.tag());
    // serde_json maps are sorted, so this serialization is canonical.
    let config_bytes = serde_json::to_vec(config).map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    buf.extend_from_slice(&(config_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config_bytes);
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &dim in t.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AdapterError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads and validates a checkpoint file: checksum first, then structure.
pub fn load_checkpoint(path: &Path) -> Result<RawCheckpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < FORMAT_MAGIC.len() + CHECKSUM_LEN {
        return Err(AdapterError::Truncated);
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(AdapterError::ChecksumMismatch);
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(FORMAT_MAGIC.len())? != FORMAT_MAGIC {
        return Err(AdapterError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(AdapterError::UnsupportedVersion { found: version });
    }
    let kind = CheckpointKind::from_tag(r.take(1)?[0])?;
    let config_len = r.u64()? as usize;
    let config: Value = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    let tensor_count = r.u64()? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != body.len() {
        return Err(AdapterError::Truncated); // trailing garbage counts as damage
    }
    Ok(RawCheckpoint { kind, config, tensors })
}

fn expect_kind(raw: &RawCheckpoint, expected: CheckpointKind) -> Result<()> {
    if raw.kind != expected {
        return Err(AdapterError::KindMismatch {
            expected: expected.name(),
            found: raw.kind.name(),
        });
    }
    Ok(())
}

fn take_tensor(
    tensors: &mut BTreeMap<String, Tensor>,
    name: &str,
    expected_shape: &[usize],
) -> Result<Tensor> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| AdapterError::MissingTensor { name: name.to_string() })?;
    if t.shape() != expected_shape {
        return Err(AdapterError::TensorShapeMismatch {
            name: name.to_string(),
            expected: expected_shape.to_vec(),
            found: t.shape().to_vec(),
        });
    }
    Ok(t)
}

fn no_leftovers(tensors: BTreeMap<String, Tensor>) -> Result<()> {
    if let Some(name) = tensors.into_keys().next() {
        return Err(AdapterError::UnexpectedTensor { name });
    }
    Ok(())
}

// ── model ────────────────────────────────────────────────────────────

pub fn save_model(model: &TransformerModel, path: &Path) -> Result<()> {
    let config = serde_json::to_value(model.config())
        .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    let named = model.named_tensors();
    let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
    save_checkpoint(path, CheckpointKind::Model, &config, &refs)
}

pub fn load_model(path: &Path) -> Result<TransformerModel> {
    let raw = load_checkpoint(path)?;
    expect_kind(&raw, CheckpointKind::Model)?;
    let config: ModelConfig = serde_json::from_value(raw.config.clone())
        .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    let mut model = TransformerModel::new(config)?;
    let mut by_name: BTreeMap<String, Tensor> = raw.tensors.into_iter().collect();
    for (name, t) in model.named_tensors_mut() {
        let loaded = take_tensor(&mut by_name, &name, t.shape())?;
        t.data_mut().copy_from_slice(loaded.data());
    }
    no_leftovers(by_name)?;
    Ok(model)
}

// ── prefix adapter ───────────────────────────────────────────────────

pub fn save_prefix(adapter: &PrefixAdapter, path: &Path, model_cfg: &ModelConfig) -> Result<()> {
    let config = serde_json::json!({
        "prefix": adapter.config(),
        "n_layers": model_cfg.n_layers,
        "d_model": model_cfg.d_model,
        "projection_active": adapter.projection_active(),
    });
    let named = adapter.named_tensors();
    let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
    save_checkpoint(path, CheckpointKind::Prefix, &config, &refs)
}

pub fn load_prefix(path: &Path, model_cfg: &ModelConfig) -> Result<PrefixAdapter> {
    let raw = load_checkpoint(path)?;
    expect_kind(&raw, CheckpointKind::Prefix)?;
    let cfg: PrefixConfig = serde_json::from_value(raw.config["prefix"].clone())
        .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    let projection_active = raw.config["projection_active"].as_bool().unwrap_or(true);
    let out_width = model_cfg.n_layers * 2 * model_cfg.d_model;
    let mut by_name: BTreeMap<String, Tensor> = raw.tensors.into_iter().collect();
    let adapter = if projection_active {
        let table = take_tensor(&mut by_name, "prefix.table", &[cfg.pre_seq_len, cfg.d_prefix])?
            .with_requires_grad(true);
        let w1 = take_tensor(&mut by_name, "prefix.mlp.w1", &[cfg.d_prefix, cfg.mlp_hidden])?
            .with_requires_grad(true);
        let b1 = take_tensor(&mut by_name, "prefix.mlp.b1", &[cfg.mlp_hidden])?
            .with_requires_grad(true);
        let w2 = take_tensor(&mut by_name, "prefix.mlp.w2", &[cfg.mlp_hidden, out_width])?
            .with_requires_grad(true);
        let b2 = take_tensor(&mut by_name, "prefix.mlp.b2", &[out_width])?.with_requires_grad(true);
        PrefixAdapter::from_parts(
            cfg,
            model_cfg.n_layers,
            model_cfg.d_model,
            table,
            Some((w1, b1, w2, b2)),
        )
    } else {
        let table = take_tensor(&mut by_name, "prefix.baked", &[cfg.pre_seq_len, out_width])?;
        PrefixAdapter::from_parts(cfg, model_cfg.n_layers, model_cfg.d_model, table, None)
    };
    no_leftovers(by_name)?;
    Ok(adapter)
}

// ── lora adapter ─────────────────────────────────────────────────────

pub fn save_lora(adapter: &LoraAdapter, path: &Path) -> Result<()> {
    let config = serde_json::json!({
        "lora": adapter.config(),
        "resolved_targets": adapter.target_names(),
    });
    let named = adapter.named_tensors();
    let refs: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
    save_checkpoint(path, CheckpointKind::Lora, &config, &refs)
}

pub fn load_lora(path: &Path, model: &TransformerModel) -> Result<LoraAdapter> {
    let raw = load_checkpoint(path)?;
    expect_kind(&raw, CheckpointKind::Lora)?;
    let cfg: LoraConfig = serde_json::from_value(raw.config["lora"].clone())
        .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    let targets: Vec<String> = serde_json::from_value(raw.config["resolved_targets"].clone())
        .map_err(|e| AdapterError::ConfigCorrupt(e.to_string()))?;
    let mut by_name: BTreeMap<String, Tensor> = raw.tensors.into_iter().collect();
    let mut entries = BTreeMap::new();
    for target in targets {
        let w = model
            .tensor(&target)
            .ok_or_else(|| AdapterError::UnknownTarget { name: target.clone() })?;
        let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
        let a = take_tensor(&mut by_name, &format!("lora.{target}.a"), &[cfg.r, d_in])?
            .with_requires_grad(true);
        let b = take_tensor(&mut by_name, &format!("lora.{target}.b"), &[d_out, cfg.r])?
            .with_requires_grad(true);
        entries.insert(target, (a, b));
    }
    no_leftovers(by_name)?;
    Ok(LoraAdapter::from_parts(cfg, entries))
}
