//! Framed file layout shared by datasets and checkpoints:
//! 8-byte magic, little-endian `u64` header length, UTF-8 JSON header, binary blob.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write(path: &Path, magic: &[u8; 8], header: &serde_json::Value, blob: &[u8]) -> Result<()> {
    let header = serde_json::to_vec_pretty(header)?;
    let mut out = Vec::with_capacity(16 + header.len() + blob.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(blob);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path, magic: &[u8; 8]) -> Result<(serde_json::Value, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(fail("bad magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fail("header length exceeds file size"))?;
    let header = serde_json::from_slice(&bytes[16..end])?;
    Ok((header, bytes[end..].to_vec()))
}

pub(crate) fn f64_to_bytes(values: &[f64], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn bytes_to_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
