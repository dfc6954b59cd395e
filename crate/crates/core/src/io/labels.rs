//! Single-channel label maps (grayscale or palette PNG); pixel value = class identifier.

use std::path::Path;

use png::{BitDepth, ColorType};

use super::png_util::{read_raw, write_raw};
use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, ClassTaxonomy, SegMap};

pub fn read_labels(path: &Path, taxonomy: &ClassTaxonomy) -> Result<SegMap> {
    let raw = read_raw(path)?;
    if !matches!(raw.color, ColorType::Grayscale | ColorType::Indexed) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: label map must be single-channel, found {:?}",
            path.display(),
            raw.color
        )));
    }
    let values = unpack(&raw.bytes, raw.width, raw.height, raw.depth).ok_or_else(|| {
        Error::UnsupportedFormat(format!("{}: 16-bit label maps are not supported", path.display()))
    })?;
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        if !taxonomy.contains(v as u32) {
            return Err(Error::UnknownClass(v as u32));
        }
        labels.push(ClassId(v));
    }
    SegMap::new(raw.width, raw.height, labels, taxonomy)
}

pub fn write_labels(seg: &SegMap, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = seg.labels().iter().map(|l| l.0).collect();
    write_raw(
        path,
        seg.width(),
        seg.height(),
        ColorType::Grayscale,
        BitDepth::Eight,
        &bytes,
    )
}

/// Expands packed rows of 1/2/4/8-bit samples to one byte per pixel.
fn unpack(bytes: &[u8], width: usize, height: usize, depth: BitDepth) -> Option<Vec<u8>> {
    let bits = match depth {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => return None,
    };
    if bits == 8 {
        return Some(bytes[..width * height].to_vec());
    }
    let stride = (width * bits).div_ceil(8);
    let mask = (1u8 << bits) - 1;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &bytes[y * stride..(y + 1) * stride];
        for x in 0..width {
            let bit = x * bits;
            let shift = 8 - bits - (bit % 8);
            out.push((row[bit / 8] >> shift) & mask);
        }
    }
    Some(out)
}
