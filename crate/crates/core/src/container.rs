//! Binary container shared by the dataset files.
//!
//! ```text
//! offset  size  field
//!      0     8  magic  b"L96JENN\0"
//!      8     4  format version (u32 LE), currently 1
//!     12     4  flags (u32 LE), zero
//!     16     8  manifest offset (u64 LE), always 64
//!     24     8  manifest length in bytes (u64 LE)
//!     32     8  payload offset (u64 LE), manifest end rounded up to 8
//!     40     8  payload length in bytes (u64 LE), multiple of 8
//!     48     4  CRC-32 (IEEE) of the manifest bytes (u32 LE)
//!     52     4  CRC-32 (IEEE) of the payload bytes (u32 LE)
//!     56     8  reserved, zero
//!     64     .  manifest: UTF-8 TOML key/value text
//!      .     .  zero padding up to the payload offset
//!      .     .  payload: f64 values, little-endian IEEE-754
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"L96JENN\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn le_bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

/// Serialises a container into memory.
pub fn encode(manifest: &str, payload: &[f64]) -> Vec<u8> {
    let manifest = manifest.as_bytes();
    let payload_offset = (HEADER_LEN + manifest.len()).div_ceil(8) * 8;
    let payload_bytes = f64s_to_le_bytes(payload);
    let mut out = Vec::with_capacity(payload_offset + payload_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(HEADER_LEN as u64).to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&(payload_offset as u64).to_le_bytes());
    out.extend_from_slice(&(payload_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(manifest).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload_bytes).to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    out.extend_from_slice(manifest);
    out.resize(payload_offset, 0);
    out.extend_from_slice(&payload_bytes);
    out
}

/// Parses and verifies a container, returning the manifest text and payload.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<(String, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than container header"));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::format(path, "bad magic bytes"));
    }
    let version = u32_at(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let m_off = u64_at(bytes, 16) as usize;
    let m_len = u64_at(bytes, 24) as usize;
    let p_off = u64_at(bytes, 32) as usize;
    let p_len = u64_at(bytes, 40) as usize;
    let m_crc = u32_at(bytes, 48);
    let p_crc = u32_at(bytes, 52);
    let m_end = m_off
        .checked_add(m_len)
        .ok_or_else(|| Error::format(path, "manifest length overflows"))?;
    if m_off < HEADER_LEN || m_end > bytes.len() || m_end > p_off {
        return Err(Error::format(path, "manifest section out of bounds"));
    }
    if !p_len.is_multiple_of(8) {
        return Err(Error::format(path, "payload length is not a multiple of 8"));
    }
    let p_end = p_off
        .checked_add(p_len)
        .ok_or_else(|| Error::format(path, "payload length overflows"))?;
    if p_end > bytes.len() {
        return Err(Error::format(
            path,
            format!("truncated payload: header declares {p_len} bytes, {} present", bytes.len().saturating_sub(p_off)),
        ));
    }
    if p_end != bytes.len() {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let manifest = &bytes[m_off..m_end];
    let computed = crc32fast::hash(manifest);
    if computed != m_crc {
        return Err(Error::Checksum {
            path: path.into(),
            stored: m_crc,
            computed,
        });
    }
    let payload = &bytes[p_off..p_end];
    let computed = crc32fast::hash(payload);
    if computed != p_crc {
        return Err(Error::Checksum {
            path: path.into(),
            stored: p_crc,
            computed,
        });
    }
    let text = std::str::from_utf8(manifest)
        .map_err(|_| Error::format(path, "manifest is not UTF-8"))?
        .to_owned();
    Ok((text, le_bytes_to_f64s(payload)))
}

pub fn write(path: &Path, manifest: &str, payload: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(manifest, payload)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(String, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}
