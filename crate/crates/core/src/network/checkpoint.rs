//! Checkpoint files: `u32` header length, JSON header, then the parameters as
//! little-endian `f32` in the layout's tensor order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, ModelState, Role, TensorSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "cvbm-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub arch: ArchSpec,
    pub role: Role,
    pub step: u64,
    pub param_count: usize,
    pub tensors: Vec<TensorSpec>,
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        arch: model.arch().clone(),
        role: model.role,
        step: model.step,
        param_count: model.param_count(),
        tensors: model.tensors().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(4 + json.len() + 4 * model.param_count());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for &p in model.params() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::corrupt(path, "missing header length"));
    }
    let hlen = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 4 + hlen {
        return Err(Error::corrupt(path, "truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[4..4 + hlen])
        .map_err(|e| Error::corrupt(path, format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::corrupt(path, format!("unknown format {}", header.format)));
    }
    let blob = &bytes[4 + hlen..];
    if blob.len() != 4 * header.param_count {
        return Err(Error::corrupt(
            path,
            format!(
                "blob holds {} bytes, header declares {} parameters",
                blob.len(),
                header.param_count
            ),
        ));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let model = ModelState::from_params(header.arch, header.role, header.step, params)
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    if model.tensors() != header.tensors.as_slice() {
        return Err(Error::corrupt(path, "tensor ordering does not match architecture"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = ModelState::init(ArchSpec::desk(1, 1), Role::Teacher, 4).unwrap();
        m.step = 17;
        m.quantize_f32();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_blob_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ModelState::init(ArchSpec::desk(1, 1), Role::Teacher, 4).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corruption { .. })));
    }

    #[test]
    fn missing_file_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope.ckpt")),
            Err(Error::NotFound(_))
        ));
    }
}
