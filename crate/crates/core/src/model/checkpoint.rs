//! Checkpoint archive.
//!
//! ```text
//! b"MCATCKPT" | u64 LE header length | JSON header | raw little-endian arrays
//! ```
//!
//! The header names every array with its shape and kind, records the scalar
//! type, the architecture and the init seed, plus free-form metadata. Arrays
//! follow in header order, parameters first, then buffers.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetworkParams, Param, ParamInfo};
use super::spec::ArchitectureSpec;
use crate::error::{Error, IoContext, Result};
use crate::tensor::Real;

const MAGIC: &[u8; 8] = b"MCATCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    spec: ArchitectureSpec,
    seed: u64,
    params: Vec<ParamInfo>,
    buffers: Vec<ParamInfo>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, net: &NetworkParams<T>, metadata: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        spec: net.spec.clone(),
        seed: net.seed,
        params: net.params.iter().map(|p| p.info.clone()).collect(),
        buffers: net.buffers.iter().map(|p| p.info.clone()).collect(),
        metadata,
    };
    let header = serde_json::to_vec(&header)?;
    let total: usize = net.params.iter().chain(&net.buffers).map(|p| p.data.len()).sum();
    let mut bytes = Vec::with_capacity(16 + header.len() + total * T::BYTES);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in net.params.iter().chain(&net.buffers) {
        for &v in &p.data {
            v.write_le(&mut bytes);
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).at(&tmp)?;
    f.write_all(&bytes).at(&tmp)?;
    f.sync_all().at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

/// Loads a checkpoint, validating every array against the layout its
/// architecture implies. Returns the network and the stored metadata.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(NetworkParams<T>, serde_json::Value)> {
    let path = path.as_ref();
    let fail = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).at(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| fail("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format_version != FORMAT_VERSION {
        return Err(fail(format!("unsupported format version {}", header.format_version)));
    }
    if header.dtype != T::DTYPE {
        return Err(fail(format!("stored as {}, requested {}", header.dtype, T::DTYPE)));
    }
    let mut offset = 16 + hlen;
    let mut read = |infos: Vec<ParamInfo>| -> Result<Vec<Param<T>>> {
        infos
            .into_iter()
            .map(|info| {
                let n = info.len();
                let raw = bytes
                    .get(offset..offset + n * T::BYTES)
                    .ok_or_else(|| fail(format!("truncated data for `{}`", info.name)))?;
                offset += n * T::BYTES;
                let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
                Ok(Param { info, data })
            })
            .collect()
    };
    let params = read(header.params)?;
    let buffers = read(header.buffers)?;
    if offset != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - offset)));
    }
    let net = NetworkParams::from_parts(header.spec, header.seed, params, buffers).map_err(|e| fail(e.to_string()))?;
    Ok((net, header.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_network;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net: NetworkParams<f32> = build_network(&ArchitectureSpec::tiny(5), 9).unwrap();
        net.buffers[0].data[0] = 0.123;
        save_checkpoint(&path, &net, serde_json::json!({"scheme": "x"})).unwrap();
        let (back, meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta["scheme"], "x");
        assert!(load_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net: NetworkParams<f64> = build_network(&ArchitectureSpec::tiny(2), 0).unwrap();
        save_checkpoint(&path, &net, serde_json::Value::Null).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint { .. })));
        std::fs::write(&path, b"garbage").unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
