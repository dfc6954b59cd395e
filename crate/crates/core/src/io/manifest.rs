//! Sequence manifest: a TOML file listing frames and run settings.
//!
//! ```toml
//! window = 5
//! output = "out"
//! seed = 0
//!
//! [weights]
//! lambda_layer = 0.1
//! class_lambda_aff = { car = 20.0 }
//!
//! [[frames]]
//! image = "frame_0000.png"
//! labels = "labels_0000.png"
//! flow = "flow_0000.flo"      # t -> t+1, omitted on the last frame
//! gt_flow = "gt_0000.flo"     # optional
//! gt_mask = "gt_mask_0000.png"  # optional, foreground ground truth
//! occlusion = "occ_0000.png"  # optional, occluded pixels
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::WeightOverrides;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightOverrides,
    pub frames: Vec<FrameEntry>,
}

fn default_window() -> usize {
    5
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl SequenceManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Parses, resolves relative paths against the manifest directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve(base);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        for f in &mut self.frames {
            fix(&mut f.image);
            fix(&mut f.labels);
            for p in [&mut f.flow, &mut f.gt_flow, &mut f.gt_mask, &mut f.occlusion]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Manifest(format!(
                "need at least 2 frames, got {}",
                self.frames.len()
            )));
        }
        if self.window < 2 {
            return Err(Error::Manifest(format!("window must be >= 2, got {}", self.window)));
        }
        let last = self.frames.len() - 1;
        for (t, f) in self.frames.iter().enumerate() {
            if t < last && f.flow.is_none() {
                return Err(Error::Manifest(format!("frame {t} has no initial flow")));
            }
            let paths = [Some(&f.image), Some(&f.labels), f.flow.as_ref(), f.gt_flow.as_ref(), f.gt_mask.as_ref(), f.occlusion.as_ref()];
            for p in paths.into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::MissingFile(p.clone()));
                }
            }
        }
        Ok(())
    }

    /// Frame ranges `[start, end]` (inclusive) of consecutive windows.
    ///
    /// Windows hold at most `window` frames and share their boundary frame, so
    /// every frame pair belongs to exactly one window. A trailing window keeps
    /// whatever frames remain (always at least 2).
    pub fn windows(&self) -> Vec<(usize, usize)> {
        window_ranges(self.frames.len(), self.window)
    }
}

pub(crate) fn window_ranges(frames: usize, window: usize) -> Vec<(usize, usize)> {
    let step = window.max(2) - 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < frames {
        let end = (start + step).min(frames - 1);
        out.push((start, end));
        start = end;
    }
    out
}
