//! On-disk checkpoint format.
//!
//! ```text
//! offset 0   magic  b"SGNF"
//! offset 4   u32 LE format version (1)
//! offset 8   u64 LE header length in bytes
//! offset 16  UTF-8 JSON header
//!            zero padding up to the next multiple of 64
//! data       tensor payloads, raw little-endian, each starting at a
//!            multiple of 64 bytes from the start of the data section
//! ```
//!
//! The header is `{"config": <UNetConfig>, "tensors": {name: {"dtype",
//! "shape", "offset"}}, "meta": <any JSON>}` with tensors sorted by name, so
//! identical contents always encode to identical bytes. Offsets are relative
//! to the data section, which itself starts 64-byte aligned.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::unet::UNetConfig;

pub const MAGIC: &[u8; 4] = b"SGNF";
pub const VERSION: u32 = 1;
const ALIGN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F: Real> {
    pub config: UNetConfig,
    pub tensors: BTreeMap<String, Tensor<F>>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    tensors: BTreeMap<String, Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

fn pad_to(len: usize) -> usize {
    len.div_ceil(ALIGN) * ALIGN
}

pub fn encode<F: Real>(ckpt: &Checkpoint<F>) -> Result<Vec<u8>> {
    let mut entries = BTreeMap::new();
    let mut offset = 0usize;
    for (name, t) in &ckpt.tensors {
        entries.insert(
            name.clone(),
            Entry {
                dtype: F::DTYPE.to_string(),
                shape: t.shape().to_vec(),
                offset: offset as u64,
            },
        );
        offset = pad_to(offset + t.numel() * F::BYTES);
    }
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        tensors: entries,
        meta: ckpt.meta.clone(),
    })
    .map_err(|e| Error::Format(format!("header encoding: {e}")))?;

    let data_start = pad_to(16 + header.len());
    let mut out = Vec::with_capacity(data_start + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(data_start, 0);
    for t in ckpt.tensors.values() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
        out.resize(pad_to(out.len()), 0);
    }
    Ok(out)
}

pub fn decode<F: Real>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let data = &bytes[pad_to(header_end).min(bytes.len())..];

    let mut tensors = BTreeMap::new();
    for (name, e) in header.tensors {
        let n: usize = e.shape.iter().product();
        let t = match e.dtype.as_str() {
            "f32" => read_payload::<f32>(data, e.offset as usize, n, &name)?.cast(),
            "f64" => read_payload::<f64>(data, e.offset as usize, n, &name)?.cast(),
            other => return Err(Error::Format(format!("tensor {name:?}: unknown dtype {other:?}"))),
        };
        tensors.insert(name, t.reshape(e.shape)?);
    }
    Ok(Checkpoint {
        config: header.config,
        tensors,
        meta: header.meta,
    })
}

fn read_payload<G: Real>(data: &[u8], offset: usize, n: usize, name: &str) -> Result<Tensor<G>> {
    let end = n
        .checked_mul(G::BYTES)
        .and_then(|len| offset.checked_add(len))
        .filter(|&end| end <= data.len())
        .ok_or_else(|| Error::Format(format!("tensor {name:?}: payload truncated")))?;
    let values = data[offset..end].chunks_exact(G::BYTES).map(G::read_le).collect();
    Tensor::new([n], values)
}

/// Writes atomically: the bytes go to a temporary file in the target
/// directory which is then renamed over `path`.
pub fn write<F: Real>(path: &Path, ckpt: &Checkpoint<F>) -> Result<()> {
    let bytes = encode(ckpt)?;
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read<F: Real>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes)
}
