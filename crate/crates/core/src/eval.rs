//! Flow and segmentation metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{FlowField, Mask};

/// Outlier thresholds: absolute pixels and fraction of the true magnitude.
pub const FL_ABS_THRESHOLD: f64 = 3.0;
pub const FL_REL_THRESHOLD: f64 = 0.05;

/// Mean endpoint error and outlier rate over one pixel subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskMetrics {
    pub epe: f64,
    pub fl: f64,
    pub pixels: usize,
}

/// Metrics over all valid pixels and the background, foreground and non-occluded subsets.
/// A subset with no valid pixels is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    pub all: Option<MaskMetrics>,
    pub bg: Option<MaskMetrics>,
    pub fg: Option<MaskMetrics>,
    pub noc: Option<MaskMetrics>,
}

/// Optional subsets for [`flow_metrics`]. Background is the complement of `fg`.
#[derive(Debug, Clone, Default)]
pub struct EvalMasks {
    pub fg: Option<Mask>,
    pub noc: Option<Mask>,
}

fn check_dims(est: &FlowField, gt: &FlowField) -> Result<()> {
    if est.dims() != gt.dims() {
        return Err(Error::DimensionMismatch { expected: gt.dims(), got: est.dims() });
    }
    Ok(())
}

/// Endpoint error at pixel `i`. An invalid estimate counts as zero flow.
#[inline]
fn error_at(est: &FlowField, gt: &FlowField, i: usize) -> f64 {
    let (ue, ve) = if est.valid[i] { (est.u[i] as f64, est.v[i] as f64) } else { (0.0, 0.0) };
    (ue - gt.u[i] as f64).hypot(ve - gt.v[i] as f64)
}

/// True when the error exceeds both the absolute and the relative threshold.
pub fn is_outlier(error: f64, gt_magnitude: f64) -> bool {
    error > FL_ABS_THRESHOLD && error > FL_REL_THRESHOLD * gt_magnitude
}

fn subset(est: &FlowField, gt: &FlowField, keep: impl Fn(usize) -> bool) -> Option<MaskMetrics> {
    let mut sum = 0.0;
    let mut outliers = 0usize;
    let mut n = 0usize;
    for i in 0..gt.len() {
        if !gt.valid[i] || !keep(i) {
            continue;
        }
        let e = error_at(est, gt, i);
        sum += e;
        if is_outlier(e, (gt.u[i] as f64).hypot(gt.v[i] as f64)) {
            outliers += 1;
        }
        n += 1;
    }
    (n > 0).then(|| MaskMetrics {
        epe: sum / n as f64,
        fl: outliers as f64 / n as f64,
        pixels: n,
    })
}

/// Mean endpoint error over valid ground-truth pixels.
pub fn endpoint_error(est: &FlowField, gt: &FlowField) -> Result<f64> {
    check_dims(est, gt)?;
    subset(est, gt, |_| true)
        .map(|m| m.epe)
        .ok_or(Error::NoValidPixels)
}

/// Endpoint error and outlier rate, overall and per subset.
pub fn flow_metrics(est: &FlowField, gt: &FlowField, masks: &EvalMasks) -> Result<FlowMetrics> {
    check_dims(est, gt)?;
    for m in masks.fg.iter().chain(masks.noc.iter()) {
        if m.dims() != gt.dims() {
            return Err(Error::DimensionMismatch { expected: gt.dims(), got: m.dims() });
        }
    }
    let fg = masks.fg.as_ref();
    Ok(FlowMetrics {
        all: subset(est, gt, |_| true),
        bg: fg.and_then(|m| subset(est, gt, |i| !m.data()[i])),
        fg: fg.and_then(|m| subset(est, gt, |i| m.data()[i])),
        noc: masks.noc.as_ref().and_then(|m| subset(est, gt, |i| m.data()[i])),
    })
}

/// Same as [`flow_metrics`].
pub fn fl_outlier_rate(est: &FlowField, gt: &FlowField, masks: &EvalMasks) -> Result<FlowMetrics> {
    flow_metrics(est, gt, masks)
}

/// Intersection over union, 1 when both masks are empty.
pub fn segmentation_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch { expected: a.dims(), got: b.dims() });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

impl FlowMetrics {
    fn entries(&self) -> [(&'static str, Option<MaskMetrics>); 4] {
        [("all", self.all), ("bg", self.bg), ("fg", self.fg), ("noc", self.noc)]
    }

    /// `epe_all`, `fl_all`, `pixels_all` and so on for every present subset.
    pub fn to_map(&self, prefix: &str) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, m) in self.entries() {
            if let Some(m) = m {
                out.insert(format!("{prefix}epe_{name}"), m.epe);
                out.insert(format!("{prefix}fl_{name}"), m.fl);
                out.insert(format!("{prefix}pixels_{name}"), m.pixels as f64);
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6}{:>10}{:>10}{:>10}", "subset", "EPE", "Fl %", "pixels");
        for (name, m) in self.entries() {
            match m {
                Some(m) => {
                    let _ = writeln!(s, "{:<6}{:>10.4}{:>10.2}{:>10}", name, m.epe, 100.0 * m.fl, m.pixels);
                }
                None => {
                    let _ = writeln!(s, "{:<6}{:>10}{:>10}{:>10}", name, "-", "-", 0);
                }
            }
        }
        s
    }
}

/// Writes `key = value` lines sorted by key.
pub fn format_report(values: &BTreeMap<String, f64>) -> String {
    let mut s = String::new();
    for (k, v) in values {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// Parses the output of [`format_report`].
pub fn parse_report(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Report(format!("report line {}: expected key = value", n + 1)))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|e| Error::Report(format!("report line {}: {e}", n + 1)))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}
