//! Checkpoint layout: 8-byte magic, little-endian `u32` header length, JSON
//! header (architecture, bounds, parameter count), then θ as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aabb, FieldArch, FieldParams};
use crate::error::{Error, Result};
use crate::nn::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NMVSFLD1";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: FieldArch,
    bounds: Aabb,
    params: usize,
}

pub fn write_checkpoint<T: Real>(path: &Path, field: &FieldParams<T>) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        arch: field.arch.clone(),
        bounds: field.bounds,
        params: field.theta.len(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + field.theta.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &field.theta {
        out.extend_from_slice(&v.f64().to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<FieldParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a field checkpoint"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::format(path, e.to_string()))?;
    if header.arch.param_count() != header.params {
        return Err(Error::format(path, "parameter count does not match architecture"));
    }
    let payload = &bytes[12 + hlen..];
    if payload.len() != header.params * 8 {
        return Err(Error::format(
            path,
            format!("expected {} parameter bytes, found {}", header.params * 8, payload.len()),
        ));
    }
    let theta = payload
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok(FieldParams {
        arch: header.arch,
        bounds: header.bounds,
        theta,
    })
}
