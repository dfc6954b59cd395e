//! Readers and writers for flow fields, label maps, images and manifests.

mod flo;
mod image_io;
mod kitti;
mod labels;
mod manifest;
mod png_util;
mod viz;

pub use flo::{read_flo, read_flo_bytes, write_flo, write_flo_bytes, FLO_MAGIC};
pub use image_io::{read_image, read_mask, write_image16, write_mask};
pub use kitti::{decode_kitti_flow, encode_kitti_flow, read_kitti_flow, write_kitti_flow};
pub use labels::{read_labels, write_labels};
pub use manifest::{FrameEntry, SequenceManifest};
pub(crate) use manifest::window_ranges;
pub use viz::{flow_to_rgb, write_flow_visualization};

use std::path::Path;

use crate::error::Result;
use crate::types::FlowField;

/// Reads a flow file, choosing the format from the extension (`.png` = KITTI, otherwise `.flo`).
pub fn read_flow_any(path: &Path) -> Result<FlowField> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_kitti_flow(path),
        _ => read_flo(path),
    }
}
