//! Binary checkpoint: `GSD1` magic, version, JSON header, tensor manifest,
//! little-endian f32 payload, CRC-32 of the payload.
//!
//! ```text
//! "GSD1" | u32 version | u32 header_len | header json
//! u32 entries | { u16 name_len | name | u8 ndim | u32 dims.. | u64 offset }
//! u64 payload_len | payload | u32 crc32(payload)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"GSD1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    stripped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

impl ManifestEntry {
    pub fn byte_len(&self) -> u64 {
        4 * self.shape.iter().product::<usize>() as u64
    }
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        stripped: model.is_stripped(),
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let state = model.state();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &state {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.numel() as u64;
    }
    let mut payload = Vec::with_capacity(offset as usize);
    for (_, t) in &state {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parsed, CRC-verified checkpoint contents.
#[derive(Clone, Debug)]
pub struct CheckpointData {
    pub config: ModelConfig,
    pub stripped: bool,
    pub manifest: Vec<ManifestEntry>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointData> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let count = r.u32("entry count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8("rank")? as usize;
        let shape = (0..ndim).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64("offset")?;
        manifest.push(ManifestEntry { name, shape, offset });
    }
    let plen = r.u64("payload length")? as usize;
    let payload = r.take(plen, "payload")?;
    let crc = r.u32("crc")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let actual = crc32fast::hash(payload);
    if crc != actual {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch (stored {crc:08x}, computed {actual:08x}); file is corrupted"
        )));
    }
    // offsets must tile the payload in order: in bounds, non-overlapping
    let mut expect = 0u64;
    let mut tensors = Vec::with_capacity(manifest.len());
    for e in &manifest {
        if e.offset != expect {
            return Err(Error::Checkpoint(format!("{}: offset {} overlaps or leaves a gap", e.name, e.offset)));
        }
        let end = e.offset + e.byte_len();
        if end > plen as u64 {
            return Err(Error::Checkpoint(format!("{}: extends past the payload", e.name)));
        }
        let data = payload[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(&e.shape, data)?));
        expect = end;
    }
    if expect != plen as u64 {
        return Err(Error::Checkpoint("payload has unreferenced bytes".into()));
    }
    Ok(CheckpointData {
        config: header.config,
        stripped: header.stripped,
        manifest,
        tensors,
    })
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        e => e,
    })
}

/// Rebuilds the model the checkpoint was saved from.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let data = read_checkpoint(path)?;
    let mut model = Model::new(data.config.clone())?;
    if data.stripped {
        model = model.strip_auxiliary();
    }
    model.load_state(&data.tensors)?;
    Ok(model)
}

/// Loads weights into an existing model. Entries are compared in manifest
/// order and the first one that does not fit is named in the error.
pub fn load_checkpoint_into(model: &mut Model<f32>, path: &Path) -> Result<()> {
    let data = read_checkpoint(path)?;
    let state = model.state();
    for (k, e) in data.manifest.iter().enumerate() {
        match state.iter().find(|(n, _)| *n == e.name) {
            None => {
                return Err(Error::Checkpoint(format!(
                    "manifest entry {k} ({}) does not exist in the model",
                    e.name
                )))
            }
            Some((_, t)) if t.shape() != e.shape.as_slice() => {
                return Err(Error::Checkpoint(format!(
                    "manifest entry {k} ({}): shape {:?} does not match model shape {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    model.load_state(&data.tensors)
}
