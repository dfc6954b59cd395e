//! Evaluation of the layered energy and its terms.

use super::space::{exact_from_colors, fast_from_colors, SpaceWeights};
use super::{AffineParams, LayerFlow, LayeredProblem, FG};
use crate::types::{ImageBuf, Mask};
use crate::warp::bilinear;

/// Layer label at a non-integer position of `g`: bilinear sample of the
/// 0/1 field thresholded at 0.5, `None` outside the box.
#[inline]
pub(crate) fn sample_fg(g: &[bool], width: usize, height: usize, x: f64, y: f64) -> Option<bool> {
    let (x0, y0, fx, fy) = crate::warp::bilinear_cell(width, height, x, y)?;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let at = |xx: usize, yy: usize| if g[yy * width + xx] { 1.0 } else { 0.0 };
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy >= 0.5)
}

#[inline]
pub(crate) fn layer_of(fg: bool) -> usize {
    if fg {
        FG
    } else {
        1 - FG
    }
}

/// Data and time contributions of pixel `i` of frame `t` when it belongs to layer `k`.
///
/// `g_next` is the assignment of frame `t + 1`.
#[inline]
pub(crate) fn pixel_terms(p: &LayeredProblem, t: usize, i: usize, k: usize, flow: &LayerFlow, g_next: &[bool]) -> (f64, f64) {
    let (w, h) = p.dims();
    let x = (i % w) as f64 + flow.u[i];
    let y = (i / w) as f64 + flow.v[i];
    match sample_fg(g_next, w, h, x, y) {
        Some(fg) if layer_of(fg) == k => {
            let next = bilinear(&p.gray[t + 1], w, h, x, y).expect("inside the box");
            (p.config.rho_data.rho(p.gray[t][i] - next), 0.0)
        }
        _ => (p.weights.lambda_d, 1.0),
    }
}

pub(crate) fn data_with(p: &LayeredProblem, t: usize, k: usize, flow: &LayerFlow) -> f64 {
    let g = p.assignment.frame(t);
    let g_next = p.assignment.frame(t + 1);
    (0..p.len())
        .filter(|&i| layer_of(g[i]) == k)
        .map(|i| pixel_terms(p, t, i, k, flow, g_next).0)
        .sum()
}

pub(crate) fn time_with(p: &LayeredProblem, t: usize, k: usize, flow: &LayerFlow) -> f64 {
    let g = p.assignment.frame(t);
    let g_next = p.assignment.frame(t + 1);
    (0..p.len())
        .filter(|&i| layer_of(g[i]) == k)
        .map(|i| pixel_terms(p, t, i, k, flow, g_next).1)
        .sum()
}

pub(crate) fn motion_with(p: &LayeredProblem, t: usize, k: usize, flow: &LayerFlow, theta: &AffineParams) -> f64 {
    let (w, h) = p.dims();
    let g = p.assignment.frame(t);
    let rho = &p.config.rho_smooth;
    let rho_aff = &p.config.rho_affine;
    let mut smooth = 0.0;
    let mut aff = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // Right and down neighbours; each unordered pair appears twice in the sum over p.
            if x + 1 < w && g[i] == g[i + 1] {
                smooth += 2.0 * (rho.rho(flow.u[i] - flow.u[i + 1]) + rho.rho(flow.v[i] - flow.v[i + 1]));
            }
            if y + 1 < h && g[i] == g[i + w] {
                smooth += 2.0 * (rho.rho(flow.u[i] - flow.u[i + w]) + rho.rho(flow.v[i] - flow.v[i + w]));
            }
            let (ub, vb) = theta.eval(x as f64, y as f64);
            aff += rho_aff.rho(flow.u[i] - ub) + rho_aff.rho(flow.v[i] - vb);
        }
    }
    smooth + p.lambda_aff(k) * aff
}

/// `E_data` for frame pair `t` and layer `k`.
pub fn data_energy(p: &LayeredProblem, t: usize, k: usize) -> f64 {
    data_with(p, t, k, &p.flows[t][k])
}

/// `E_motion` for frame pair `t` and layer `k`, including the weighted affine term.
pub fn motion_energy(p: &LayeredProblem, t: usize, k: usize) -> f64 {
    motion_with(p, t, k, &p.flows[t][k], &p.theta[t][k])
}

/// `E_time` for frame pair `t` and layer `k`.
pub fn time_energy(p: &LayeredProblem, t: usize, k: usize) -> f64 {
    time_with(p, t, k, &p.flows[t][k])
}

/// Number of pixels where the assignment differs from the semantic mask.
pub fn layer_energy(g: &[bool], semantic: &Mask) -> f64 {
    g.iter().zip(semantic.data()).filter(|(a, b)| a != b).count() as f64
}

/// Fully connected space term of one frame; exact up to `weights.exact_max_pixels`.
pub fn space_energy(g: &[bool], image: &ImageBuf, weights: &SpaceWeights) -> f64 {
    let colors = super::space::colors_of(image);
    if g.len() <= weights.exact_max_pixels {
        exact_from_colors(g, &colors, image.width(), image.height(), weights)
    } else {
        fast_from_colors(g, &colors, image.width(), image.height(), image.channels(), weights)
    }
}

pub(crate) fn space_frame(p: &LayeredProblem, t: usize, g: &[bool]) -> f64 {
    let (w, h) = p.dims();
    if p.uses_exact_space() {
        exact_from_colors(g, &p.colors[t], w, h, &p.config.space)
    } else {
        fast_from_colors(g, &p.colors[t], w, h, p.images[t].channels(), &p.config.space)
    }
}

/// 2 when the k-independent terms are summed over both layers, 1 otherwise.
pub fn shared_multiplier(p: &LayeredProblem) -> f64 {
    if p.config.count_shared_terms_once {
        1.0
    } else {
        2.0
    }
}

/// `E_data + λ_motion E_motion + λ_time E_time` of one frame pair and layer.
pub(crate) fn pair_energy(p: &LayeredProblem, t: usize, k: usize, flow: &LayerFlow, theta: &AffineParams) -> f64 {
    let g = p.assignment.frame(t);
    let g_next = p.assignment.frame(t + 1);
    let mut data = 0.0;
    let mut time = 0.0;
    for i in 0..p.len() {
        if layer_of(g[i]) == k {
            let (d, tm) = pixel_terms(p, t, i, k, flow, g_next);
            data += d;
            time += tm;
        }
    }
    data + p.weights.lambda_motion * motion_with(p, t, k, flow, theta) + p.weights.lambda_time * time
}

/// Weighted terms of the total energy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub motion: f64,
    pub time: f64,
    pub layer: f64,
    pub space: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.motion + self.time + self.layer + self.space
    }

    pub fn of(p: &LayeredProblem) -> Self {
        let wts = &p.weights;
        let mut b = EnergyBreakdown::default();
        for t in 0..p.pairs() {
            for k in 0..2 {
                b.data += data_energy(p, t, k);
                b.motion += wts.lambda_motion * motion_energy(p, t, k);
                b.time += wts.lambda_time * time_energy(p, t, k);
            }
        }
        let c = shared_multiplier(p);
        for t in 0..p.frames() {
            let g = p.assignment.frame(t);
            b.layer += c * wts.lambda_layer * layer_energy(g, &p.semantic[t]);
            if wts.lambda_space != 0.0 {
                b.space += c * wts.lambda_space * space_frame(p, t, g);
            }
        }
        b
    }
}

/// The layered energy summed over both layers and all frames.
pub fn total_energy(p: &LayeredProblem) -> f64 {
    EnergyBreakdown::of(p).total()
}
