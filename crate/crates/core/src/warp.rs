//! Bilinear backward warping.

use crate::error::{Error, Result};
use crate::types::{FlowField, ImageBuf, Mask};

/// Bilinear sample of a row-major scalar grid at `(x, y)`.
///
/// Returns `None` outside `[0, w-1] x [0, h-1]`.
#[inline]
pub fn bilinear<T: Copy + Into<f64>>(data: &[T], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    let (x0, y0, fx, fy) = bilinear_cell(w, h, x, y)?;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let at = |xx: usize, yy: usize| -> f64 { data[yy * w + xx].into() };
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Integer cell and fractional offsets for a bilinear lookup, `None` when out of range.
#[inline]
pub fn bilinear_cell(w: usize, h: usize, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    Some((x0, y0, x - x0 as f64, y - y0 as f64))
}

/// Samples `img` at `(x + u, y + v)` for every pixel.
///
/// The returned mask flags samples that landed inside the frame and had valid flow;
/// other output pixels are zero.
pub fn warp(img: &ImageBuf, flow: &FlowField) -> Result<(ImageBuf, Mask)> {
    if img.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            got: flow.dims(),
        });
    }
    let (w, h) = img.dims();
    let c = img.channels();
    let mut out = vec![0.0f32; w * h * c];
    let mut valid = Mask::new(w, h);
    let mut plane = vec![0.0f32; w * h];
    for ch in 0..c {
        for (i, p) in plane.iter_mut().enumerate() {
            *p = img.data()[i * c + ch];
        }
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !flow.valid[i] {
                    continue;
                }
                let sx = x as f64 + flow.u[i] as f64;
                let sy = y as f64 + flow.v[i] as f64;
                if let Some(val) = bilinear(&plane, w, h, sx, sy) {
                    out[i * c + ch] = val as f32;
                    valid.data_mut()[i] = true;
                }
            }
        }
    }
    Ok((ImageBuf::new(w, h, c, out)?, valid))
}
