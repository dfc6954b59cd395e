use std::path::Path;

use image::DynamicImage;
use png::{BitDepth, ColorType};

use super::png_util::{read_raw, write_raw};
use crate::error::{Error, Result};
use crate::types::{ImageBuf, Mask};

/// Loads an 8- or 16-bit image, normalizing intensities to `[0, 1]`.
///
/// Grayscale sources give one channel, everything else three (alpha dropped).
pub fn read_image(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path).map_err(|e| Error::decode(path, e))?;
    let gray = !img.color().has_color();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if gray {
        let buf = DynamicImage::to_luma32f(&img);
        ImageBuf::new(w, h, 1, buf.into_raw())
    } else {
        let buf = img.to_rgb32f();
        ImageBuf::new(w, h, 3, buf.into_raw())
    }
}

/// Writes an image as a 16-bit PNG (gray or RGB).
pub fn write_image16(img: &ImageBuf, path: &Path) -> Result<()> {
    let color = if img.channels() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    };
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    write_raw(path, img.width(), img.height(), color, BitDepth::Sixteen, &bytes)
}

/// Reads an 8-bit grayscale mask; any nonzero value is set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let raw = read_raw(path)?;
    if raw.color != ColorType::Grayscale || raw.depth != BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: masks must be 8-bit grayscale",
            path.display()
        )));
    }
    Mask::from_vec(
        raw.width,
        raw.height,
        raw.bytes[..raw.width * raw.height].iter().map(|&b| b != 0).collect(),
    )
}

pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_raw(
        path,
        mask.width(),
        mask.height(),
        ColorType::Grayscale,
        BitDepth::Eight,
        &bytes,
    )
}
