//! Header + float payload file container.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset        | size  | content                                  |
//! |---------------|-------|------------------------------------------|
//! | 0             | 8     | magic, identifies the file kind          |
//! | 8             | 8     | `h`: header length in bytes (u64)        |
//! | 16            | `h`   | UTF-8 JSON header                        |
//! | 16 + h        | 8     | `n`: number of f32 payload values (u64)  |
//! | 24 + h        | 4n    | payload, IEEE-754 binary32 little-endian |
//!
//! Nothing follows the payload; trailing bytes are rejected.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Magic = [u8; 8];

pub fn encode<H: Serialize>(magic: &Magic, header: &H, payload: &[f32]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(24 + header.len() + 4 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(
    magic: &Magic,
    bytes: &[u8],
    path: &Path,
) -> Result<(H, Vec<f32>)> {
    let bad = |reason: &str| Error::Container {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let read_u64 = |at: usize| -> Result<u64> {
        let b = bytes
            .get(at..at + 8)
            .ok_or_else(|| bad("truncated length field"))?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    };
    if bytes.get(..8) != Some(magic.as_slice()) {
        return Err(bad("wrong magic"));
    }
    let h = usize::try_from(read_u64(8)?).map_err(|_| bad("header too large"))?;
    let header_end = 16usize
        .checked_add(h)
        .ok_or_else(|| bad("header too large"))?;
    let header_bytes = bytes
        .get(16..header_end)
        .ok_or_else(|| bad("truncated header"))?;
    let header: H = serde_json::from_slice(header_bytes)?;
    let n = usize::try_from(read_u64(header_end)?).map_err(|_| bad("payload too large"))?;
    let start = header_end + 8;
    let expected = n.checked_mul(4).and_then(|b| b.checked_add(start));
    if expected != Some(bytes.len()) {
        return Err(bad("payload length does not match file size"));
    }
    let payload = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, payload))
}

pub fn write<H: Serialize>(path: &Path, magic: &Magic, header: &H, payload: &[f32]) -> Result<()> {
    let bytes = encode(magic, header, payload)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read<H: DeserializeOwned>(path: &Path, magic: &Magic) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(magic, &bytes, path)
}
