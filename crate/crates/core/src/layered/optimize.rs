use super::energy::{layer_of, sample_fg};
use super::{update_flow, update_segmentation, LayerAssignment, LayerFlow, LayeredConfig, LayeredProblem, BG, FG};
use crate::error::{Error, Result};
use crate::regions::ThingTrack;
use crate::taxonomy::ClassId;
use crate::types::{BBox, FlowField, ImageBuf};
use crate::warp::bilinear;
use crate::weights::EnergyWeights;

/// Refined layers of one Thing, in box coordinates.
#[derive(Debug, Clone)]
pub struct ThingResult {
    pub class: ClassId,
    pub bbox: BBox,
    /// Foreground layer flow per frame pair.
    pub fg_flows: Vec<FlowField>,
    /// Background layer flow per frame pair.
    pub bg_flows: Vec<FlowField>,
    pub assignment: LayerAssignment,
    /// False when initialization was degenerate and the inputs were passed through.
    pub refined: bool,
    /// Set when a layer does not follow a single affine motion, the model's known failure case.
    pub suspect: bool,
    /// Total energy after initialization and after every update.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternates flow and segmentation updates until the relative decrease of one
/// outer iteration falls below the tolerance. Returns the energy trace.
pub fn optimize_problem(p: &mut LayeredProblem) -> (Vec<f64>, usize) {
    let mut trace = vec![super::total_energy(p)];
    let mut iterations = 0;
    for _ in 0..p.config.max_outer_iterations {
        iterations += 1;
        let start = *trace.last().expect("non-empty");
        let fs = update_flow(p);
        trace.push(fs.energy_after);
        let ss = update_segmentation(p);
        trace.push(ss.energy_after);
        let end = ss.energy_after;
        log::trace!("outer {iterations}: {start:.6} -> {end:.6} ({} flips)", ss.flips);
        if start - end <= p.config.relative_tolerance * start.abs() {
            break;
        }
    }
    (trace, iterations)
}

/// Fraction of each layer's pixels whose flow is more than 1 px from the layer's affine model, worst layer.
pub fn affine_deviation(p: &LayeredProblem) -> f64 {
    let w = p.width();
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        let mut total = 0usize;
        let mut off = 0usize;
        for t in 0..p.pairs() {
            let g = p.assignment.frame(t);
            let f = &p.flows[t][k];
            for i in 0..p.len() {
                if layer_of(g[i]) != k {
                    continue;
                }
                total += 1;
                let (ub, vb) = p.theta[t][k].eval((i % w) as f64, (i / w) as f64);
                if (f.u[i] - ub).hypot(f.v[i] - vb) > 1.0 {
                    off += 1;
                }
            }
        }
        if total >= 20 {
            worst = worst.max(off as f64 / total as f64);
        }
    }
    worst
}

/// Fraction of in-box correspondences, over all frame pairs, that neither layer
/// explains: the correspondence changes layer or its brightness residual exceeds
/// `residual`. Correspondences leaving the box and background occluded by the
/// foreground are not counted.
pub fn unexplained_fraction(p: &LayeredProblem, residual: f64) -> f64 {
    let (w, h) = p.dims();
    let (mut off, mut total) = (0usize, 0usize);
    for t in 0..p.pairs() {
        let g = p.assignment.frame(t);
        let g_next = p.assignment.frame(t + 1);
        for i in 0..p.len() {
            let k = layer_of(g[i]);
            let f = &p.flows[t][k];
            let (x, y) = ((i % w) as f64 + f.u[i], (i / w) as f64 + f.v[i]);
            let Some(fg) = sample_fg(g_next, w, h, x, y) else {
                continue;
            };
            if k == BG && layer_of(fg) == FG {
                continue;
            }
            total += 1;
            let explained = layer_of(fg) == k && {
                let next = bilinear(&p.gray[t + 1], w, h, x, y).expect("inside the box");
                (p.gray[t][i] - next).abs() <= residual
            };
            if !explained {
                off += 1;
            }
        }
    }
    off as f64 / total.max(1) as f64
}

/// Builds the layered problem of a track over full frames and optimizes it.
///
/// A degenerate initialization returns the initial flow for both layers and
/// `ĝ` as the assignment, with `refined = false`.
pub fn optimize_thing(
    track: &ThingTrack,
    images: &[ImageBuf],
    flows: &[FlowField],
    weights: &EnergyWeights,
    config: &LayeredConfig,
) -> Result<ThingResult> {
    let t = track.frames();
    if images.len() != t || flows.len() + 1 != t {
        return Err(Error::Degenerate(format!(
            "track spans {t} frames but got {} images and {} flows",
            images.len(),
            flows.len()
        )));
    }
    let b = track.bbox;
    let crops: Vec<ImageBuf> = images.iter().map(|im| im.crop(&b)).collect();
    let flow_crops: Vec<FlowField> = flows.iter().map(|f| f.crop(&b)).collect();
    let mut p = LayeredProblem::new(
        crops,
        flow_crops.clone(),
        track.masks.clone(),
        track.class,
        weights.clone(),
        config.clone(),
    )?;
    if let Err(e) = p.initialize_layers() {
        log::info!("{} track at {:?} left unrefined: {e}", track.class, b);
        return Ok(ThingResult {
            class: track.class,
            bbox: b,
            fg_flows: flow_crops.clone(),
            bg_flows: flow_crops,
            assignment: LayerAssignment::from_masks(&track.masks),
            refined: false,
            suspect: false,
            energy_trace: Vec::new(),
            iterations: 0,
        });
    }
    let (energy_trace, iterations) = optimize_problem(&mut p);
    let (dev, unexplained) = (affine_deviation(&p), unexplained_fraction(&p, config.unexplained_residual));
    log::debug!("{} track at {:?}: affine deviation {dev:.3}, unexplained {unexplained:.3}", track.class, b);
    let suspect = dev > config.suspect_fraction || unexplained > config.suspect_unexplained_fraction;
    if suspect {
        log::warn!("{} track at {:?} does not fit a two-motion model", track.class, b);
    }
    Ok(ThingResult::from_problem(&p, b, energy_trace, iterations, suspect))
}

impl ThingResult {
    pub fn from_problem(p: &LayeredProblem, bbox: BBox, energy_trace: Vec<f64>, iterations: usize, suspect: bool) -> Self {
        let (w, h) = p.dims();
        let field = |f: &LayerFlow| f.to_field(w, h);
        Self {
            class: p.class,
            bbox,
            fg_flows: p.flows.iter().map(|f| field(&f[super::FG])).collect(),
            bg_flows: p.flows.iter().map(|f| field(&f[BG])).collect(),
            assignment: p.assignment.clone(),
            refined: true,
            suspect,
            energy_trace,
            iterations,
        }
    }
}
