//! Checkpoint files.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 8    | magic `UAVSQNET`                       |
//! | 8      | 4    | format version (`1`)                   |
//! | 12     | 4    | endianness marker `0x01020304`         |
//! | 16     | 8    | spec hash (FNV-1a of the canonical spec) |
//! | 24     | 8    | parameter count `n`                    |
//! | 32     | 4n   | parameters as IEEE-754 `f32`           |

use std::fs;
use std::path::Path;

use super::{NetworkParams, QNetwork};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UAVSQNET";
const VERSION: u32 = 1;
const ENDIAN_MARKER: u32 = 0x0102_0304;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub spec_hash: u64,
    pub param_count: u64,
}

pub fn save_params(path: &Path, net: &QNetwork, params: &NetworkParams<f32>) -> Result<()> {
    if params.len() != net.param_count() {
        return Err(Error::Structural(format!(
            "saving {} parameters for a network with {}",
            params.len(),
            net.param_count()
        )));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&ENDIAN_MARKER.to_le_bytes());
    bytes.extend_from_slice(&net.spec().hash().to_le_bytes());
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parse any checkpoint without checking it against a network.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Parse(format!("{} is not a checkpoint file", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Compatibility(format!("unsupported checkpoint version {version}")));
    }
    if u32_at(12) != ENDIAN_MARKER {
        return Err(Error::Parse("bad endianness marker".into()));
    }
    let header = CheckpointHeader { version, spec_hash: u64_at(16), param_count: u64_at(24) };
    let n = header.param_count as usize;
    if bytes.len() != HEADER_LEN + 4 * n {
        return Err(Error::Parse(format!(
            "checkpoint declares {n} parameters but holds {} bytes of data",
            bytes.len() - HEADER_LEN
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, values))
}

pub fn load_params(path: &Path, net: &QNetwork) -> Result<NetworkParams<f32>> {
    let (header, values) = read_checkpoint(path)?;
    if header.spec_hash != net.spec().hash() {
        return Err(Error::Compatibility(format!(
            "checkpoint spec hash {:016x} does not match network {:016x}",
            header.spec_hash,
            net.spec().hash()
        )));
    }
    if values.len() != net.param_count() {
        return Err(Error::Compatibility(format!(
            "checkpoint has {} parameters, network needs {}",
            values.len(),
            net.param_count()
        )));
    }
    Ok(NetworkParams { values })
}
