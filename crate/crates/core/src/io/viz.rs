//! Color-coded flow: hue = direction, saturation = magnitude / max, value = 1.

use std::path::Path;

use png::{BitDepth, ColorType};

use super::png_util::write_raw;
use crate::error::Result;
use crate::types::FlowField;

/// Renders flow to 8-bit RGB. `max_magnitude = None` normalizes by the largest valid vector.
/// Invalid pixels are black.
pub fn flow_to_rgb(flow: &FlowField, max_magnitude: Option<f32>) -> Vec<[u8; 3]> {
    let max = max_magnitude.unwrap_or_else(|| {
        (0..flow.len())
            .filter(|&i| flow.valid[i])
            .map(|i| flow.u[i].hypot(flow.v[i]))
            .fold(0.0f32, f32::max)
    });
    let max = if max > 0.0 { max as f64 } else { 1.0 };
    (0..flow.len())
        .map(|i| {
            if !flow.valid[i] {
                return [0, 0, 0];
            }
            let (u, v) = (flow.u[i] as f64, flow.v[i] as f64);
            let sat = ((u * u + v * v).sqrt() / max).min(1.0);
            let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
            hsv_to_rgb(hue, sat)
        })
        .collect()
}

pub fn write_flow_visualization(flow: &FlowField, max_magnitude: Option<f32>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = flow_to_rgb(flow, max_magnitude).into_iter().flatten().collect();
    write_raw(path, flow.width(), flow.height(), ColorType::Rgb, BitDepth::Eight, &bytes)
}

fn hsv_to_rgb(hue: f64, sat: f64) -> [u8; 3] {
    let h = hue / 60.0;
    let sector = h.floor() as i32 % 6;
    let f = h - h.floor();
    let (p, q, t) = (1.0 - sat, 1.0 - sat * f, 1.0 - sat * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (1.0, t, p),
        1 => (q, 1.0, p),
        2 => (p, 1.0, t),
        3 => (p, q, 1.0),
        4 => (t, p, 1.0),
        _ => (1.0, p, q),
    };
    let to8 = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}
