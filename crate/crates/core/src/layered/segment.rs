//! Discrete update of the layer assignment with the flows held fixed.

use super::energy::{layer_of, pixel_terms, shared_multiplier};
use super::space::{fast_sums, ExactKernel};
use super::{LayerAssignment, LayeredProblem};
use crate::warp::bilinear_cell;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationStats {
    pub energy_before: f64,
    pub energy_after: f64,
    pub flips: usize,
    pub sweeps: usize,
}

/// Flips below this energy change are ignored so roundoff cannot cause cycles.
const MIN_GAIN: f64 = 1e-10;

/// Iterated conditional modes over all frames until no pixel flips or the sweep limit.
/// `flips` counts pixels whose layer differs from the incoming assignment.
///
/// Each flip is evaluated on the exact change of every assignment-dependent
/// term, including the data and time terms of the previous frame's pixels that
/// land near the flipped pixel. On boxes too large for the exact space term the
/// space contribution is approximated and each sweep is kept only if the total
/// energy does not increase.
pub fn update_segmentation(p: &mut LayeredProblem) -> SegmentationStats {
    let energy_before = super::total_energy(p);
    let initial = p.assignment.clone();
    let mut sweeps = icm(p, energy_before);
    let mut best = super::total_energy(p);
    // Small boxes also descend from the semantic mask, both constant
    // assignments and per-frame complements of the best labeling found, which
    // escapes minima where many pixels must flip together.
    if p.len() * p.frames() <= RESTART_MAX_PIXELS {
        let (w, h) = p.dims();
        let frames = p.frames();
        let mut kept = p.assignment.clone();
        let mut descend = |p: &mut LayeredProblem, start: LayerAssignment, kept: &mut LayerAssignment| {
            p.assignment = start;
            sweeps += icm(p, super::total_energy(p));
            let e = super::total_energy(p);
            let better = e < best - MIN_GAIN;
            if better {
                best = e;
                *kept = p.assignment.clone();
            }
            better
        };
        let seeds = [
            LayerAssignment::from_masks(&p.semantic),
            LayerAssignment::filled(w, h, frames, false),
            LayerAssignment::filled(w, h, frames, true),
        ];
        for seed in seeds {
            descend(p, seed, &mut kept);
        }
        let mut improved = true;
        while improved {
            improved = false;
            for t in 0..frames {
                let mut start = kept.clone();
                start.frame_mut(t).iter_mut().for_each(|g| *g = !*g);
                improved |= descend(p, start, &mut kept);
            }
        }
        p.assignment = kept;
    }
    let flips = (0..p.frames())
        .map(|t| p.assignment.frame(t).iter().zip(initial.frame(t)).filter(|(a, b)| a != b).count())
        .sum();
    SegmentationStats {
        energy_before,
        energy_after: best,
        flips,
        sweeps,
    }
}

/// Boxes up to this many pixels over all frames get restarts.
const RESTART_MAX_PIXELS: usize = 4096;

fn icm(p: &mut LayeredProblem, energy_before: f64) -> usize {
    let exact = p.uses_exact_space();
    let mut sweeps = 0;
    let mut current = energy_before;
    for _ in 0..p.config.max_icm_sweeps {
        sweeps += 1;
        let snapshot = p.assignment.clone();
        let mut changed = 0;
        for t in 0..p.frames() {
            changed += sweep_frame(p, t, exact);
        }
        if !exact && changed > 0 {
            let e = super::total_energy(p);
            if e > current {
                p.assignment = snapshot;
                break;
            }
            current = e;
        }
        if changed == 0 {
            break;
        }
    }
    sweeps
}

/// For each pixel of frame `t`, the pixels of frame `t - 1` whose correspondence
/// samples it.
fn incoming_index(p: &LayeredProblem, t: usize) -> Vec<Vec<u32>> {
    let (w, h) = p.dims();
    let mut index = vec![Vec::new(); w * h];
    let prev = p.assignment.frame(t - 1);
    for r in 0..w * h {
        let k = layer_of(prev[r]);
        let f = &p.flows[t - 1][k];
        let x = (r % w) as f64 + f.u[r];
        let y = (r / w) as f64 + f.v[r];
        if let Some((x0, y0, _, _)) = bilinear_cell(w, h, x, y) {
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let mut corners = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1];
            corners.sort_unstable();
            for (n, &c) in corners.iter().enumerate() {
                if n == 0 || corners[n - 1] != c {
                    index[c].push(r as u32);
                }
            }
        }
    }
    index
}

/// Data and weighted time cost of pixel `i` in frame `t` assigned to layer `k`.
#[inline]
fn own_cost(p: &LayeredProblem, t: usize, i: usize, k: usize, g_next: &[bool]) -> f64 {
    let (d, tm) = pixel_terms(p, t, i, k, &p.flows[t][k], g_next);
    d + p.weights.lambda_time * tm
}

fn sweep_frame(p: &mut LayeredProblem, t: usize, exact: bool) -> usize {
    let (w, h) = p.dims();
    let n = w * h;
    let frames = p.frames();
    let wts = p.weights.clone();
    let c = shared_multiplier(p);
    let mut g = p.assignment.frame(t).to_vec();
    let incoming = if t > 0 { incoming_index(p, t) } else { Vec::new() };
    let space_on = wts.lambda_space != 0.0;
    let kernel = ExactKernel::new(&p.colors[t], w, h, &p.config.space);
    // Total and foreground pair weight per pixel, self excluded.
    let (s_sum, mut f_sum) = if !space_on {
        (Vec::new(), Vec::new())
    } else if exact {
        (p.space_sums(t).to_vec(), kernel.sums(Some(&g)))
    } else {
        let (s, f) = fast_sums(&g, &p.colors[t], w, h, p.images[t].channels(), &p.config.space);
        let f = f.iter().zip(&g).map(|(&fv, &gi)| fv - if gi { 1.0 } else { 0.0 }).collect();
        (s.into_iter().map(|v| v - 1.0).collect(), f)
    };
    let rho = p.config.rho_smooth;
    let mut flips = 0;
    for i in 0..n {
        let old = g[i];
        let new = !old;
        let mut delta = 0.0;
        if t + 1 < frames {
            let g_next = p.assignment.frame(t + 1);
            delta += own_cost(p, t, i, layer_of(new), g_next) - own_cost(p, t, i, layer_of(old), g_next);
            let (x, y) = (i % w, i / w);
            let mut neighbours = [usize::MAX; 4];
            if x > 0 {
                neighbours[0] = i - 1;
            }
            if x + 1 < w {
                neighbours[1] = i + 1;
            }
            if y > 0 {
                neighbours[2] = i - w;
            }
            if y + 1 < h {
                neighbours[3] = i + w;
            }
            let mut smooth = 0.0;
            for &j in neighbours.iter().filter(|&&j| j != usize::MAX) {
                let sign = (new == g[j]) as i32 as f64 - (old == g[j]) as i32 as f64;
                for f in &p.flows[t] {
                    smooth += sign * 2.0 * (rho.rho(f.u[i] - f.u[j]) + rho.rho(f.v[i] - f.v[j]));
                }
            }
            delta += wts.lambda_motion * smooth;
        }
        if t > 0 && !incoming[i].is_empty() {
            let prev = p.assignment.frame(t - 1);
            let cost = |g_cur: &[bool]| -> f64 {
                incoming[i]
                    .iter()
                    .map(|&r| own_cost(p, t - 1, r as usize, layer_of(prev[r as usize]), g_cur))
                    .sum()
            };
            let before = cost(&g);
            g[i] = new;
            let after = cost(&g);
            g[i] = old;
            delta += after - before;
        }
        let ghat = p.semantic[t].data()[i];
        delta += c * wts.lambda_layer * ((new != ghat) as i32 - (old != ghat) as i32) as f64;
        if space_on {
            let term = |gi: bool| if gi { s_sum[i] - f_sum[i] } else { f_sum[i] };
            delta += c * wts.lambda_space * 2.0 * (term(new) - term(old));
        }
        if delta < -MIN_GAIN {
            g[i] = new;
            flips += 1;
            if space_on && exact {
                let sign = if new { 1.0 } else { -1.0 };
                for (q, fq) in f_sum.iter_mut().enumerate() {
                    if q != i {
                        *fq += sign * kernel.weight(i, q);
                    }
                }
            }
        }
    }
    p.assignment.frame_mut(t).copy_from_slice(&g);
    flips
}
