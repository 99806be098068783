//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ACVAE" version:u8
//! manifest_len:u32  manifest (UTF-8 JSON)
//! block_count:u32
//! repeated: len:u64  len × f64
//! ```
//!
//! One block per layer in [`CensoredVae::layer_names`] order, holding the
//! row-major `in × out` weight followed by the bias. Optimizer state is not
//! stored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::gradcheck::Parameterized;
use crate::models::{CensoredVae, ModelConfig};

pub const MAGIC: &[u8; 5] = b"ACVAE";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    /// Column order of the encoder head.
    pub head_order: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

pub fn encode_checkpoint(model: &CensoredVae, seed: u64, epoch: usize) -> Vec<u8> {
    let layers = model.layers();
    let manifest = CheckpointManifest {
        config: model.config,
        seed,
        epoch,
        head_order: "mu,logvar".into(),
        layers: CensoredVae::layer_names()
            .iter()
            .zip(&layers)
            .map(|(name, l)| LayerShape {
                name: (*name).into(),
                inputs: l.in_dim(),
                outputs: l.out_dim(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(64 + json.len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.num_params() as u64).to_le_bytes());
        for block in l.param_blocks() {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CensoredVae, CheckpointManifest)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = r.u32()? as usize;
    let manifest: CheckpointManifest =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;

    let mut model = CensoredVae::zeros(manifest.config)?;
    let count = r.u32()? as usize;
    let mut layers = model.layers_mut();
    if count != layers.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} blocks, found {count}",
            layers.len()
        )));
    }
    for (i, layer) in layers.iter_mut().enumerate() {
        let n = r.u64()? as usize;
        if n != layer.num_params() {
            return Err(Error::Checkpoint(format!(
                "block {i} holds {n} values, layer needs {}",
                layer.num_params()
            )));
        }
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("block too large".into()))?,
        )?;
        let mut values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for block in layer.param_blocks_mut() {
            for (dst, src) in block.iter_mut().zip(&mut values) {
                *dst = src;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, manifest))
}

pub fn write_checkpoint(path: &Path, model: &CensoredVae, seed: u64, epoch: usize) -> Result<()> {
    fs::write(path, encode_checkpoint(model, seed, epoch)).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<(CensoredVae, CheckpointManifest)> {
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}
