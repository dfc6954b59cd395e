//! Middlebury `.flo`: magic `202021.25` ("PIEH"), i32 width, i32 height,
//! then row-major interleaved `(u, v)` as little-endian f32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

/// Components above this magnitude mark unknown flow.
const UNKNOWN_THRESHOLD: f32 = 1e9;
const UNKNOWN_VALUE: f32 = 1e10;

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_flo_bytes(&bytes)
}

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    std::fs::write(path, write_flo_bytes(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo_bytes(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let width = i32::from_le_bytes(word(4)) as i64;
    let height = i32::from_le_bytes(word(8)) as i64;
    if width <= 0 || height <= 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or(Error::InvalidDimensions { width, height })?;
    let expected = 12 + n * 8;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let uu = f32::from_le_bytes(word(12 + 8 * i));
        let vv = f32::from_le_bytes(word(16 + 8 * i));
        valid.push(uu.is_finite() && vv.is_finite() && uu.abs() < UNKNOWN_THRESHOLD && vv.abs() < UNKNOWN_THRESHOLD);
        u.push(uu);
        v.push(vv);
    }
    FlowField::from_parts(width as usize, height as usize, u, v, valid)
}

pub fn write_flo_bytes(flow: &FlowField) -> Vec<u8> {
    let n = flow.len();
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for i in 0..n {
        let (u, v) = if flow.valid[i] {
            (flow.u[i], flow.v[i])
        } else {
            (UNKNOWN_VALUE, UNKNOWN_VALUE)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
