//! Single-file checkpoints: magic, JSON header, little-endian f64 weights and
//! a SHA-256 trailer over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SegFinNet};
use crate::nn::Parameters;

const MAGIC: &[u8; 16] = b"SEGFINNET-CKPT\0\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture_hash: String,
    pub model: ModelConfig,
    pub param_count: usize,
    #[serde(default)]
    pub iteration: usize,
    #[serde(default)]
    pub validation_iou: Option<f64>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

impl CheckpointMeta {
    pub fn for_model(model: &SegFinNet) -> Self {
        CheckpointMeta {
            architecture_hash: model.config.architecture_hash(),
            model: model.config.clone(),
            param_count: model.param_count(),
            iteration: 0,
            validation_iou: None,
            train: None,
        }
    }
}

fn corrupt(path: &Path, what: &str) -> Error {
    Error::Checkpoint(format!("{} is not a valid checkpoint: {what}", path.display()))
}

pub fn save_checkpoint(model: &SegFinNet, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(meta).map_err(|e| Error::json(path, e))?;
    let weights = model.flat();
    let mut buf = Vec::with_capacity(MAGIC.len() + 16 + header.len() + 8 * weights.len() + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in &weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize, path: &Path) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= buf.len()).ok_or_else(|| corrupt(path, "truncated"))?;
    let s = &buf[*at..end];
    *at = end;
    Ok(s)
}

pub fn load_checkpoint(path: &Path) -> Result<(SegFinNet, CheckpointMeta)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < MAGIC.len() + 16 + 32 || &buf[..MAGIC.len()] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let (body, trailer) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corrupt(path, "checksum mismatch"));
    }
    let mut at = MAGIC.len();
    let header_len = u64::from_le_bytes(take(body, &mut at, 8, path)?.try_into().unwrap()) as usize;
    let header = take(body, &mut at, header_len, path)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(header).map_err(|e| corrupt(path, &format!("bad header: {e}")))?;
    let count = u64::from_le_bytes(take(body, &mut at, 8, path)?.try_into().unwrap()) as usize;
    let raw = take(body, &mut at, count.saturating_mul(8), path)?;
    if at != body.len() {
        return Err(corrupt(path, "trailing bytes"));
    }
    let stored = meta.model.architecture_hash();
    if stored != meta.architecture_hash {
        return Err(Error::Checkpoint(format!(
            "{}: architecture hash {} does not match its configuration ({stored})",
            path.display(),
            meta.architecture_hash
        )));
    }
    let weights: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = SegFinNet::zeroed(meta.model.clone())?;
    if weights.len() != model.param_count() || meta.param_count != weights.len() {
        return Err(corrupt(
            path,
            &format!("{} weights for a {}-parameter model", weights.len(), model.param_count()),
        ));
    }
    model.load_flat(&weights)?;
    Ok((model, meta))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Dotted paths of the fields that differ between two model configurations.
pub fn config_differences(a: &ModelConfig, b: &ModelConfig) -> Vec<String> {
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    flatten("", &serde_json::to_value(a).expect("config serializes"), &mut fa);
    flatten("", &serde_json::to_value(b).expect("config serializes"), &mut fb);
    let mut diffs: Vec<String> = fa
        .iter()
        .filter(|(k, v)| fb.iter().find(|(kb, _)| kb == k).map(|(_, vb)| vb) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    diffs.extend(fb.iter().filter(|(k, _)| !fa.iter().any(|(ka, _)| ka == k)).map(|(k, _)| k.clone()));
    diffs
}

/// Loads a checkpoint and insists that its architecture matches `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<(SegFinNet, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    if meta.architecture_hash != expected.architecture_hash() {
        return Err(Error::Checkpoint(format!(
            "{}: architecture mismatch in {}",
            path.display(),
            config_differences(&meta.model, expected).join(", ")
        )));
    }
    Ok((model, meta))
}
