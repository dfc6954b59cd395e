//! KITTI 16-bit PNG flow: channels hold `u*64 + 2^15`, `v*64 + 2^15` and a validity flag.

use std::path::Path;

use png::{BitDepth, ColorType};

use super::png_util::{read_raw, write_raw};
use crate::error::{Error, Result};
use crate::types::FlowField;

const OFFSET: f64 = 32768.0;
const SCALE: f64 = 64.0;
const MAX_ABS: f32 = 511.0;

/// Encodes to interleaved `(u, v, valid)` 16-bit samples.
pub fn encode_kitti_flow(flow: &FlowField) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(flow.len() * 3);
    for i in 0..flow.len() {
        if !flow.valid[i] {
            out.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let (u, v) = (flow.u[i], flow.v[i]);
        for c in [u, v] {
            if !c.is_finite() || c.abs() > MAX_ABS {
                return Err(Error::FlowOutOfRange(c));
            }
        }
        let enc = |c: f32| (c as f64 * SCALE + OFFSET).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&[enc(u), enc(v), 1]);
    }
    Ok(out)
}

pub fn decode_kitti_flow(width: usize, height: usize, samples: &[u16]) -> Result<FlowField> {
    let n = width * height;
    if samples.len() != n * 3 {
        return Err(Error::Truncated {
            expected: n * 3,
            found: samples.len(),
        });
    }
    let mut flow = FlowField::invalid(width, height);
    for (i, px) in samples.chunks_exact(3).enumerate() {
        if px[2] == 0 {
            continue;
        }
        let dec = |s: u16| ((s as f64 - OFFSET) / SCALE) as f32;
        flow.set(i, dec(px[0]), dec(px[1]));
    }
    Ok(flow)
}

pub fn read_kitti_flow(path: &Path) -> Result<FlowField> {
    let raw = read_raw(path)?;
    if raw.depth != BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat(format!(
            "{}: KITTI flow must be 16-bit, found {:?}",
            path.display(),
            raw.depth
        )));
    }
    let channels = match raw.color {
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: KITTI flow must be RGB, found {other:?}",
                path.display()
            )))
        }
    };
    let mut samples = Vec::with_capacity(raw.width * raw.height * 3);
    for px in raw.bytes.chunks_exact(2 * channels) {
        for c in 0..3 {
            samples.push(u16::from_be_bytes([px[2 * c], px[2 * c + 1]]));
        }
    }
    decode_kitti_flow(raw.width, raw.height, &samples)
}

pub fn write_kitti_flow(flow: &FlowField, path: &Path) -> Result<()> {
    let samples = encode_kitti_flow(flow)?;
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
    write_raw(
        path,
        flow.width(),
        flow.height(),
        ColorType::Rgb,
        BitDepth::Sixteen,
        &bytes,
    )
}
