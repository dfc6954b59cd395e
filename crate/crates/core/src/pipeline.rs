//! End-to-end drivers: refinement of a manifest sequence, evaluation of flow
//! files against ground truth, and synthetic dataset generation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::composite::{compose, CompositeMap, ThingFrame};
use crate::error::{Error, Result};
use crate::eval::{flow_metrics, segmentation_iou, EvalMasks, FlowMetrics, MaskMetrics};
use crate::io::{
    read_flow_any, read_image, read_labels, read_mask, write_flo, write_flow_visualization, write_kitti_flow,
    write_mask, SequenceManifest,
};
use crate::layered::{optimize_thing, LayeredConfig, ThingResult};
use crate::planar::{fit_planes, RansacConfig};
use crate::regions::{filter_small, match_things, thing_regions};
use crate::synth::{render, write_dataset, SceneSpec};
use crate::taxonomy::{Category, ClassId, ClassTaxonomy, SegMap};
use crate::types::{BBox, FlowField, ImageBuf, Mask};
use crate::weights::{EnergyWeights, WeightOverrides};

/// Frames, labels and initial flows of one sequence held in memory.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub images: Vec<ImageBuf>,
    pub labels: Vec<SegMap>,
    /// Initial flow from frame t to t+1.
    pub flows: Vec<FlowField>,
}

impl SequenceInput {
    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if n < 2 || self.labels.len() != n || self.flows.len() + 1 != n {
            return Err(Error::Manifest(format!(
                "need >= 2 frames with labels and n-1 flows, got {} images, {} label maps, {} flows",
                n,
                self.labels.len(),
                self.flows.len()
            )));
        }
        let dims = self.images[0].dims();
        let all = self
            .images
            .iter()
            .map(|i| i.dims())
            .chain(self.labels.iter().map(|l| l.dims()))
            .chain(self.flows.iter().map(|f| f.dims()));
        for d in all {
            if d != dims {
                return Err(Error::DimensionMismatch { expected: dims, got: d });
            }
        }
        Ok(())
    }
}

/// Settings for [`refine_sequence`].
#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub window: usize,
    pub seed: u64,
    pub weights: EnergyWeights,
    pub layered: LayeredConfig,
    pub ransac: RansacConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            window: 5,
            seed: 0,
            weights: EnergyWeights::default(),
            layered: LayeredConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    /// First frame of the window holding the track.
    pub start_frame: usize,
    pub class: ClassId,
    pub bbox: BBox,
    pub refined: bool,
    pub suspect: bool,
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
}

impl TrackReport {
    /// True when no step of the trace rose by more than the optimizer tolerance.
    pub fn monotone(&self) -> bool {
        self.energy_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs())
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    /// Refined flow per frame pair.
    pub flows: Vec<FlowField>,
    /// Refined foreground of all tracks per frame.
    pub fg_masks: Vec<Mask>,
    pub maps: Vec<CompositeMap>,
    pub tracks: Vec<TrackReport>,
    /// Seconds per stage, summed over windows.
    pub timings: BTreeMap<String, f64>,
}

/// Frame ranges `[start, end]` of the processing windows; consecutive windows
/// share their boundary frame so every pair is refined once.
pub fn windows(frames: usize, window: usize) -> Vec<(usize, usize)> {
    crate::io::window_ranges(frames, window)
}

struct WindowOutput {
    start: usize,
    flows: Vec<FlowField>,
    maps: Vec<CompositeMap>,
    fg_masks: Vec<Mask>,
    tracks: Vec<TrackReport>,
    timings: BTreeMap<String, f64>,
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    *timings.entry(stage.to_string()).or_insert(0.0) += t0.elapsed().as_secs_f64();
    out
}

fn pair_seed(seed: u64, pair: usize) -> u64 {
    seed ^ (pair as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn refine_window(
    input: &SequenceInput,
    taxonomy: &ClassTaxonomy,
    cfg: &RefineConfig,
    (start, end): (usize, usize),
) -> Result<WindowOutput> {
    let mut timings = BTreeMap::new();
    let (w, h) = input.images[0].dims();
    let labels = &input.labels[start..=end];
    let tracks = timed(&mut timings, "regions", || {
        let per_frame: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(t, seg)| filter_small(thing_regions(seg, taxonomy, t)))
            .collect();
        match_things(&per_frame, w, h)
    });
    let planes = timed(&mut timings, "planes", || {
        (start..end)
            .into_par_iter()
            .map(|t| fit_planes(&input.labels[t], &input.flows[t], taxonomy, &cfg.ransac, pair_seed(cfg.seed, t)))
            .collect::<Vec<_>>()
    });
    let images = &input.images[start..=end];
    let flows = &input.flows[start..end];
    let results: Vec<Result<ThingResult>> = timed(&mut timings, "things", || {
        tracks
            .par_iter()
            .map(|tr| optimize_thing(tr, images, flows, &cfg.weights, &cfg.layered))
            .collect()
    });
    let mut reports = Vec::new();
    let mut ok: Vec<Option<ThingResult>> = Vec::new();
    for (tr, r) in tracks.iter().zip(results) {
        match r {
            Ok(r) => {
                if !r.refined {
                    log::info!("{} track at {:?} kept its input flow", tr.class, tr.bbox);
                }
                reports.push(TrackReport {
                    start_frame: start,
                    class: r.class,
                    bbox: r.bbox,
                    refined: r.refined,
                    suspect: r.suspect,
                    iterations: r.iterations,
                    energy_trace: r.energy_trace.clone(),
                });
                ok.push(r.refined.then_some(r));
            }
            Err(e) => {
                log::warn!("{} track at {:?} failed: {e}", tr.class, tr.bbox);
                ok.push(None);
            }
        }
    }
    let (out_flows, maps): (Vec<_>, Vec<_>) = timed(&mut timings, "compose", || {
        (start..end)
            .into_par_iter()
            .map(|t| {
                let local = t - start;
                let things: Vec<ThingFrame> = tracks
                    .iter()
                    .zip(&ok)
                    .map(|(tr, r)| match r {
                        Some(r) => ThingFrame::from_result(r, local),
                        None => ThingFrame::missing(tr.bbox),
                    })
                    .collect();
                compose(&input.flows[t], &planes[local], &things)
            })
            .unzip()
    });
    let fg_masks = (start..=end)
        .map(|t| {
            let mut m = Mask::new(w, h);
            for (tr, r) in tracks.iter().zip(&ok) {
                let local = t - start;
                let b = tr.bbox;
                let src = match r {
                    Some(r) => r.assignment.to_mask(local),
                    None => tr.masks[local].clone(),
                };
                for y in 0..b.height() {
                    for x in 0..b.width() {
                        if src.get(x, y) {
                            m.set(b.x0 + x, b.y0 + y, true);
                        }
                    }
                }
            }
            m
        })
        .collect();
    Ok(WindowOutput {
        start,
        flows: out_flows,
        maps,
        fg_masks,
        tracks: reports,
        timings,
    })
}

/// Refines every frame pair of a sequence.
pub fn refine_sequence(input: &SequenceInput, taxonomy: &ClassTaxonomy, cfg: &RefineConfig) -> Result<RefineResult> {
    input.validate()?;
    cfg.weights.validate()?;
    cfg.ransac.validate()?;
    let n = input.images.len();
    let outputs: Vec<WindowOutput> = windows(n, cfg.window)
        .into_par_iter()
        .map(|range| refine_window(input, taxonomy, cfg, range))
        .collect::<Result<_>>()?;
    let (w, h) = input.images[0].dims();
    let mut flows = Vec::with_capacity(n - 1);
    let mut maps = Vec::with_capacity(n - 1);
    let mut fg_masks = vec![Mask::new(w, h); n];
    let mut tracks = Vec::new();
    let mut timings = BTreeMap::new();
    for out in outputs {
        flows.extend(out.flows);
        maps.extend(out.maps);
        // A shared boundary frame keeps the mask of the window it starts.
        let last = out.fg_masks.len() - 1;
        for (k, m) in out.fg_masks.into_iter().enumerate() {
            let t = out.start + k;
            if k < last || t == n - 1 {
                fg_masks[t] = m;
            }
        }
        tracks.extend(out.tracks);
        for (k, v) in out.timings {
            *timings.entry(k).or_insert(0.0) += v;
        }
    }
    for tr in &tracks {
        if !tr.monotone() {
            log::error!("energy rose during optimization of the {} track at {:?}", tr.class, tr.bbox);
        }
    }
    Ok(RefineResult {
        flows,
        fg_masks,
        maps,
        tracks,
        timings,
    })
}

/// Command-line level options for [`run_refine`]; unset values come from the manifest.
#[derive(Debug, Clone, Default)]
pub struct RefineOptions {
    pub weights: WeightOverrides,
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub output: Option<PathBuf>,
    /// Write KITTI 16-bit PNG flow instead of `.flo`.
    pub kitti: bool,
    pub visualize: bool,
    /// Worker thread cap.
    pub jobs: Option<usize>,
    pub layered: LayeredConfig,
    pub ransac: RansacConfig,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub tracks: Vec<TrackReport>,
    pub timings: BTreeMap<String, f64>,
    pub histogram: BTreeMap<String, usize>,
    /// Present when the manifest has ground truth.
    pub metrics: BTreeMap<String, f64>,
    pub output: PathBuf,
}

impl RunReport {
    /// `key = value` text; energy traces are space-separated lists.
    pub fn to_text(&self, taxonomy: &ClassTaxonomy) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tracks = {}", self.tracks.len());
        for (i, t) in self.tracks.iter().enumerate() {
            let b = t.bbox;
            let class = taxonomy.name(t.class).unwrap_or("?");
            let _ = writeln!(s, "track.{i}.start_frame = {}", t.start_frame);
            let _ = writeln!(s, "track.{i}.class = {class}");
            let _ = writeln!(s, "track.{i}.bbox = {} {} {} {}", b.x0, b.y0, b.x1, b.y1);
            let _ = writeln!(s, "track.{i}.refined = {}", t.refined);
            let _ = writeln!(s, "track.{i}.suspect = {}", t.suspect);
            let _ = writeln!(s, "track.{i}.iterations = {}", t.iterations);
            let trace: Vec<String> = t.energy_trace.iter().map(|e| format!("{e:.9e}")).collect();
            let _ = writeln!(s, "track.{i}.energy = {}", trace.join(" "));
        }
        for (k, v) in &self.timings {
            let _ = writeln!(s, "time.{k} = {v:.3}");
        }
        for (k, v) in &self.histogram {
            let _ = writeln!(s, "source.{k} = {v}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn ground_truth_metrics(
    manifest: &SequenceManifest,
    input: &SequenceInput,
    taxonomy: &ClassTaxonomy,
    result: &RefineResult,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    let n = manifest.frames.len();
    let mut refined = Vec::new();
    let mut initial = Vec::new();
    for t in 0..n - 1 {
        let f = &manifest.frames[t];
        let Some(gt_path) = &f.gt_flow else { continue };
        let gt = read_flow_any(gt_path)?;
        let masks = EvalMasks {
            fg: f.gt_mask.as_ref().map(|p| read_mask(p)).transpose()?,
            noc: f.occlusion.as_ref().map(|p| read_mask(p).map(|m| m.complement())).transpose()?,
        };
        refined.push(flow_metrics(&result.flows[t], &gt, &masks)?);
        initial.push(flow_metrics(&input.flows[t], &gt, &masks)?);
    }
    if !refined.is_empty() {
        out.extend(aggregate(&refined).to_map("refined."));
        out.extend(aggregate(&initial).to_map("initial."));
    }
    let (mut iou_refined, mut iou_input, mut count) = (0.0, 0.0, 0usize);
    for (t, f) in manifest.frames.iter().enumerate() {
        let Some(p) = &f.gt_mask else { continue };
        let gt = read_mask(p)?;
        iou_refined += segmentation_iou(&result.fg_masks[t], &gt)?;
        iou_input += segmentation_iou(&input.labels[t].category_mask(Category::Thing, taxonomy), &gt)?;
        count += 1;
    }
    if count > 0 {
        out.insert("refined.iou".into(), iou_refined / count as f64);
        out.insert("input.iou".into(), iou_input / count as f64);
    }
    Ok(out)
}

/// Pixel-weighted combination of per-pair metrics.
pub fn aggregate(per_pair: &[FlowMetrics]) -> FlowMetrics {
    let fold = |pick: fn(&FlowMetrics) -> Option<MaskMetrics>| {
        let (mut epe, mut fl, mut n) = (0.0, 0.0, 0usize);
        for m in per_pair.iter().filter_map(pick) {
            epe += m.epe * m.pixels as f64;
            fl += m.fl * m.pixels as f64;
            n += m.pixels;
        }
        (n > 0).then(|| MaskMetrics {
            epe: epe / n as f64,
            fl: fl / n as f64,
            pixels: n,
        })
    };
    FlowMetrics {
        all: fold(|m| m.all),
        bg: fold(|m| m.bg),
        fg: fold(|m| m.fg),
        noc: fold(|m| m.noc),
    }
}

/// Loads the frames, labels and initial flows listed in a manifest.
pub fn load_sequence(manifest: &SequenceManifest, taxonomy: &ClassTaxonomy) -> Result<SequenceInput> {
    let images = manifest
        .frames
        .par_iter()
        .map(|f| read_image(&f.image))
        .collect::<Result<Vec<_>>>()?;
    let labels = manifest
        .frames
        .par_iter()
        .map(|f| read_labels(&f.labels, taxonomy))
        .collect::<Result<Vec<_>>>()?;
    let flows = manifest.frames[..manifest.frames.len() - 1]
        .par_iter()
        .map(|f| read_flow_any(f.flow.as_ref().expect("validated manifest")))
        .collect::<Result<Vec<_>>>()?;
    let input = SequenceInput { images, labels, flows };
    input.validate()?;
    Ok(input)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Manifest(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Name of the output flow file of pair `t`.
pub fn flow_file_name(t: usize, kitti: bool) -> String {
    format!("flow_{t:04}.{}", if kitti { "png" } else { "flo" })
}

/// Refines the sequence of a manifest and writes flows, refined masks
/// (`masks/`), optional visualizations (`viz/`) and `report.txt` into the output directory.
pub fn run_refine(manifest_path: &Path, opts: &RefineOptions) -> Result<RunReport> {
    let t0 = Instant::now();
    let manifest = SequenceManifest::load(manifest_path)?;
    let taxonomy = ClassTaxonomy::default();
    let mut weights = EnergyWeights::default();
    weights.apply(&manifest.weights.merged(&opts.weights), &taxonomy)?;
    let cfg = RefineConfig {
        window: opts.window.unwrap_or(manifest.window),
        seed: opts.seed.unwrap_or(manifest.seed),
        weights,
        layered: opts.layered.clone(),
        ransac: opts.ransac,
    };
    if cfg.window < 2 {
        return Err(Error::Manifest(format!("window must be >= 2, got {}", cfg.window)));
    }
    let output = opts.output.clone().unwrap_or_else(|| manifest.output.clone());
    let (input, result) = with_pool(opts.jobs, || -> Result<_> {
        let input = load_sequence(&manifest, &taxonomy)?;
        let result = refine_sequence(&input, &taxonomy, &cfg)?;
        Ok((input, result))
    })??;
    let load_and_refine = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    std::fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
    for (t, f) in result.flows.iter().enumerate() {
        let path = output.join(flow_file_name(t, opts.kitti));
        if opts.kitti {
            write_kitti_flow(f, &path)?;
        } else {
            write_flo(f, &path)?;
        }
        if opts.visualize {
            let viz = output.join("viz");
            std::fs::create_dir_all(&viz).map_err(|e| Error::io(&viz, e))?;
            write_flow_visualization(f, None, &viz.join(format!("flow_{t:04}.png")))?;
        }
    }
    let masks = output.join("masks");
    std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    for (t, m) in result.fg_masks.iter().enumerate() {
        write_mask(m, &masks.join(format!("mask_{t:04}.png")))?;
    }
    let mut timings = result.timings.clone();
    timings.insert("write".into(), t1.elapsed().as_secs_f64());
    timings.insert("total".into(), load_and_refine + t1.elapsed().as_secs_f64());

    let mut histogram = BTreeMap::new();
    for m in &result.maps {
        for (k, v) in m.histogram() {
            *histogram.entry(k.to_string()).or_insert(0) += v;
        }
    }
    let metrics = ground_truth_metrics(&manifest, &input, &taxonomy, &result)?;
    let report = RunReport {
        tracks: result.tracks,
        timings,
        histogram,
        metrics,
        output: output.clone(),
    };
    let path = output.join("report.txt");
    std::fs::write(&path, report.to_text(&taxonomy)).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn flow_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("flo") | Some("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Per-file and aggregated metrics of [`run_eval`].
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_file: Vec<(String, FlowMetrics)>,
    pub aggregate: FlowMetrics,
}

impl EvalReport {
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut out = self.aggregate.to_map("");
        for (name, m) in &self.per_file {
            out.extend(m.to_map(&format!("{name}.")));
        }
        out
    }
}

/// Evaluates every flow file of `est_dir` (`.flo` or KITTI `.png`) against the
/// file with the same stem in `gt_dir`. Optional mask directories hold
/// foreground and non-occluded masks named `<stem>.png`.
pub fn run_eval(est_dir: &Path, gt_dir: &Path, fg_dir: Option<&Path>, noc_dir: Option<&Path>) -> Result<EvalReport> {
    let est = flow_files(est_dir)?;
    let gt = flow_files(gt_dir)?;
    if est.is_empty() {
        return Err(Error::MissingFile(est_dir.join("*.flo")));
    }
    let mask = |dir: Option<&Path>, stem: &str| -> Result<Option<Mask>> {
        match dir {
            None => Ok(None),
            Some(d) => {
                let p = d.join(format!("{stem}.png"));
                if !p.exists() {
                    return Err(Error::MissingFile(p));
                }
                read_mask(&p).map(Some)
            }
        }
    };
    let mut per_file = Vec::new();
    for (stem, path) in &est {
        let gt_path = gt.get(stem).ok_or_else(|| Error::MissingFile(gt_dir.join(format!("{stem}.flo"))))?;
        let masks = EvalMasks {
            fg: mask(fg_dir, stem)?,
            noc: mask(noc_dir, stem)?,
        };
        let m = flow_metrics(&read_flow_any(path)?, &read_flow_any(gt_path)?, &masks)?;
        per_file.push((stem.clone(), m));
    }
    let all: Vec<FlowMetrics> = per_file.iter().map(|(_, m)| m.clone()).collect();
    Ok(EvalReport {
        aggregate: aggregate(&all),
        per_file,
    })
}

/// Renders a scene spec into a dataset directory and returns the manifest path.
pub fn run_synth(spec_path: &Path, out_dir: &Path, window: usize) -> Result<PathBuf> {
    let spec = SceneSpec::load(spec_path)?;
    synth_dataset(&spec, out_dir, window)
}

pub fn synth_dataset(spec: &SceneSpec, out_dir: &Path, window: usize) -> Result<PathBuf> {
    let taxonomy = ClassTaxonomy::default();
    let data = render(spec, &taxonomy)?;
    write_dataset(&data, spec, window, out_dir)
}

/// Writes a color visualization of a flow file.
pub fn run_viz(flow_path: &Path, out: &Path, max_magnitude: Option<f32>) -> Result<()> {
    let flow = read_flow_any(flow_path)?;
    write_flow_visualization(&flow, max_magnitude, out)
}
