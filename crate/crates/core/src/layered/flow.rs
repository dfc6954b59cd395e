//! Continuous update of the layer flows with the assignment held fixed.

use super::affine::fit_affine_dense;
use super::energy::{layer_of, pair_energy, sample_fg};
use super::{AffineParams, LayerFlow, LayeredProblem};
use crate::warp::bilinear;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowUpdateStats {
    pub energy_before: f64,
    pub energy_after: f64,
    /// Accepted increments over all pairs, layers and pyramid levels.
    pub accepted_steps: usize,
    pub affine_refits: usize,
}

/// One sweep of coarse-to-fine IRLS steps over every frame pair and layer.
///
/// Every step and every affine refit is kept only if the flow-dependent part of
/// the energy does not increase, so the total energy never goes up.
pub fn update_flow(p: &mut LayeredProblem) -> FlowUpdateStats {
    let energy_before = super::total_energy(p);
    let mut accepted_steps = 0;
    let mut affine_refits = 0;
    for t in 0..p.pairs() {
        for k in 0..2 {
            let (flow, theta, steps, refit) = refine_pair(p, t, k);
            p.flows[t][k] = flow;
            p.theta[t][k] = theta;
            accepted_steps += steps;
            affine_refits += refit as usize;
        }
    }
    let energy_after = super::total_energy(p);
    FlowUpdateStats {
        energy_before,
        energy_after,
        accepted_steps,
        affine_refits,
    }
}

fn refine_pair(p: &LayeredProblem, t: usize, k: usize) -> (LayerFlow, AffineParams, usize, bool) {
    let mut flow = p.flows[t][k].clone();
    let mut theta = p.theta[t][k];
    let mut energy = pair_energy(p, t, k, &flow, &theta);
    let mut steps = 0;
    let fine = Level::finest(p, t);
    let mut levels = vec![fine.clone()];
    for _ in 1..p.config.pyramid_levels.max(1) {
        let last = levels.last().expect("non-empty");
        if last.width < 8 || last.height < 8 {
            break;
        }
        levels.push(last.downsample());
    }
    for level in (0..levels.len()).rev() {
        let lvl = &levels[level];
        let coarse_flow = downsample_flow(&flow, &fine, level);
        let affine = downsample_flow(&LayerFlow::from_affine(&theta, fine.width, fine.height), &fine, level);
        let inc = solve_increment(p, lvl, k, &coarse_flow, &affine);
        let inc = upsample_flow(&inc, &levels, level);
        let mut alpha = 1.0;
        for _ in 0..=p.config.max_backtracks {
            let cand = LayerFlow {
                u: flow.u.iter().zip(&inc.u).map(|(a, b)| a + alpha * b).collect(),
                v: flow.v.iter().zip(&inc.v).map(|(a, b)| a + alpha * b).collect(),
            };
            let e = pair_energy(p, t, k, &cand, &theta);
            if e <= energy {
                if e < energy {
                    steps += 1;
                }
                flow = cand;
                energy = e;
                break;
            }
            alpha *= 0.5;
        }
    }
    let refit = fit_affine_dense(&flow.u, &flow.v, fine.width);
    let mut refitted = false;
    if refit.is_finite() {
        let e = pair_energy(p, t, k, &flow, &refit);
        if e <= energy {
            theta = refit;
            refitted = true;
        }
    }
    (flow, theta, steps, refitted)
}

/// Images and assignment of one frame pair at one pyramid level.
#[derive(Debug, Clone)]
struct Level {
    width: usize,
    height: usize,
    i0: Vec<f64>,
    i1: Vec<f64>,
    g0: Vec<bool>,
    g1: Vec<bool>,
}

impl Level {
    fn finest(p: &LayeredProblem, t: usize) -> Self {
        Self {
            width: p.width(),
            height: p.height(),
            i0: p.gray[t].clone(),
            i1: p.gray[t + 1].clone(),
            g0: p.assignment.frame(t).to_vec(),
            g1: p.assignment.frame(t + 1).to_vec(),
        }
    }

    fn downsample(&self) -> Self {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let avg = |d: &[f64]| half(d, self.width, self.height);
        let to_f = |g: &[bool]| g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        Self {
            width: w,
            height: h,
            i0: avg(&self.i0),
            i1: avg(&self.i1),
            g0: avg(&to_f(&self.g0)).into_iter().map(|v| v >= 0.5).collect(),
            g1: avg(&to_f(&self.g1)).into_iter().map(|v| v >= 0.5).collect(),
        }
    }
}

/// 2x2 block average; odd trailing rows and columns average what they have.
fn half(d: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![0.0; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let mut s = 0.0;
            let mut n = 0.0;
            for yy in 2 * y..(2 * y + 2).min(h) {
                for xx in 2 * x..(2 * x + 2).min(w) {
                    s += d[yy * w + xx];
                    n += 1.0;
                }
            }
            out[y * nw + x] = s / n;
        }
    }
    out
}

fn downsample_flow(f: &LayerFlow, fine: &Level, level: usize) -> LayerFlow {
    let (mut w, mut h) = (fine.width, fine.height);
    let mut u = f.u.clone();
    let mut v = f.v.clone();
    for _ in 0..level {
        u = half(&u, w, h).into_iter().map(|x| 0.5 * x).collect();
        v = half(&v, w, h).into_iter().map(|x| 0.5 * x).collect();
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    LayerFlow { u, v }
}

/// Bilinear 2x upsampling from `level` back to the finest level, scaling displacements.
fn upsample_flow(f: &LayerFlow, levels: &[Level], level: usize) -> LayerFlow {
    let mut cur = f.clone();
    for l in (0..level).rev() {
        let (cw, ch) = (levels[l + 1].width, levels[l + 1].height);
        let (fw, fh) = (levels[l].width, levels[l].height);
        let mut next = LayerFlow::zeros(fw * fh);
        for y in 0..fh {
            for x in 0..fw {
                let cx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (cw - 1) as f64);
                let cy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (ch - 1) as f64);
                let i = y * fw + x;
                next.u[i] = 2.0 * bilinear(&cur.u, cw, ch, cx, cy).expect("clamped");
                next.v[i] = 2.0 * bilinear(&cur.v, cw, ch, cx, cy).expect("clamped");
            }
        }
        cur = next;
    }
    cur
}

fn gradients(img: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            if xr > xl {
                gx[i] = (img[y * w + xr] - img[y * w + xl]) / (xr - xl) as f64;
            }
            if yd > yu {
                gy[i] = (img[yd * w + x] - img[yu * w + x]) / (yd - yu) as f64;
            }
        }
    }
    (gx, gy)
}

/// IRLS-linearized increment of layer `k`'s flow at one level, solved by SOR.
fn solve_increment(p: &LayeredProblem, lvl: &Level, k: usize, base: &LayerFlow, affine: &LayerFlow) -> LayerFlow {
    let (w, h) = (lvl.width, lvl.height);
    let n = w * h;
    let (gx, gy) = gradients(&lvl.i1, w, h);
    let lm = p.weights.lambda_motion;
    let la = lm * p.lambda_aff(k);
    let cfg = &p.config;
    let mut d = LayerFlow::zeros(n);
    let mut psi = vec![0.0; n];
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut res = vec![0.0; n];
    // Edge weights to the right and down neighbours.
    let mut cu_r = vec![0.0; n];
    let mut cv_r = vec![0.0; n];
    let mut cu_d = vec![0.0; n];
    let mut cv_d = vec![0.0; n];
    let mut au = vec![0.0; n];
    let mut av = vec![0.0; n];
    for _ in 0..cfg.warps.max(1) {
        let cu = |i: usize| base.u[i] + d.u[i];
        let cv = |i: usize| base.v[i] + d.v[i];
        for i in 0..n {
            let (x, y) = (i % w, i / w);
            psi[i] = 0.0;
            if layer_of(lvl.g0[i]) == k {
                let qx = x as f64 + cu(i);
                let qy = y as f64 + cv(i);
                if sample_fg(&lvl.g1, w, h, qx, qy).map(layer_of) == Some(k) {
                    let iw = bilinear(&lvl.i1, w, h, qx, qy).expect("inside");
                    res[i] = iw - lvl.i0[i];
                    ix[i] = bilinear(&gx, w, h, qx, qy).expect("inside");
                    iy[i] = bilinear(&gy, w, h, qx, qy).expect("inside");
                    psi[i] = cfg.rho_data.irls_weight(res[i]);
                }
            }
            cu_r[i] = 0.0;
            cv_r[i] = 0.0;
            cu_d[i] = 0.0;
            cv_d[i] = 0.0;
            if x + 1 < w && lvl.g0[i] == lvl.g0[i + 1] {
                cu_r[i] = 2.0 * lm * cfg.rho_smooth.irls_weight(cu(i) - cu(i + 1));
                cv_r[i] = 2.0 * lm * cfg.rho_smooth.irls_weight(cv(i) - cv(i + 1));
            }
            if y + 1 < h && lvl.g0[i] == lvl.g0[i + w] {
                cu_d[i] = 2.0 * lm * cfg.rho_smooth.irls_weight(cu(i) - cu(i + w));
                cv_d[i] = 2.0 * lm * cfg.rho_smooth.irls_weight(cv(i) - cv(i + w));
            }
            au[i] = la * cfg.rho_affine.irls_weight(cu(i) - affine.u[i]);
            av[i] = la * cfg.rho_affine.irls_weight(cv(i) - affine.v[i]);
        }
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        for _ in 0..cfg.sor_iterations {
            for i in 0..n {
                let (x, y) = (i % w, i / w);
                let mut su = 0.0;
                let mut sv = 0.0;
                let mut ru = 0.0;
                let mut rv = 0.0;
                let mut edge = |j: usize, c_u: f64, c_v: f64| {
                    su += c_u;
                    sv += c_v;
                    ru += c_u * (du[j] - (cu(i) - cu(j)));
                    rv += c_v * (dv[j] - (cv(i) - cv(j)));
                };
                if x + 1 < w {
                    edge(i + 1, cu_r[i], cv_r[i]);
                }
                if x > 0 {
                    edge(i - 1, cu_r[i - 1], cv_r[i - 1]);
                }
                if y + 1 < h {
                    edge(i + w, cu_d[i], cv_d[i]);
                }
                if y > 0 {
                    edge(i - w, cu_d[i - w], cv_d[i - w]);
                }
                let a11 = psi[i] * ix[i] * ix[i] + su + au[i] + 1e-12;
                let a22 = psi[i] * iy[i] * iy[i] + sv + av[i] + 1e-12;
                let a12 = psi[i] * ix[i] * iy[i];
                let b1 = -psi[i] * ix[i] * res[i] + ru - au[i] * (cu(i) - affine.u[i]);
                let b2 = -psi[i] * iy[i] * res[i] + rv - av[i] * (cv(i) - affine.v[i]);
                let det = a11 * a22 - a12 * a12;
                if det.abs() < 1e-18 {
                    continue;
                }
                let tu = (a22 * b1 - a12 * b2) / det;
                let tv = (a11 * b2 - a12 * b1) / det;
                du[i] += cfg.sor_omega * (tu - du[i]);
                dv[i] += cfg.sor_omega * (tv - dv[i]);
            }
        }
        for i in 0..n {
            d.u[i] += du[i];
            d.v[i] += dv[i];
        }
    }
    d
}
