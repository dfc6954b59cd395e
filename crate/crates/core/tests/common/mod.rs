//! Shared fixtures and independent reference evaluators for the layered energy.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semflow::layered::{AffineParams, LayerFlow, LayeredConfig, LayeredProblem};
use semflow::{ClassId, EnergyWeights, FlowField, ImageBuf, Mask};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, channels: usize) -> ImageBuf {
    let fx = rng.random_range(0.2..1.2f32);
    let fy = rng.random_range(0.2..1.2f32);
    let base: Vec<f32> = (0..channels).map(|_| rng.random_range(0.3..0.7)).collect();
    let data = (0..w * h * channels)
        .map(|i| {
            let c = i % channels;
            let p = i / channels;
            let (x, y) = ((p % w) as f32, (p / w) as f32);
            let v = base[c] + 0.25 * (x * fx + c as f32).sin() * (y * fy).cos() + rng.random_range(-0.1..0.1);
            v.clamp(0.0, 1.0)
        })
        .collect();
    ImageBuf::new(w, h, channels, data).unwrap()
}

pub fn random_blob(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask {
    let cx = rng.random_range(0.0..w as f64);
    let cy = rng.random_range(0.0..h as f64);
    let r = rng.random_range(0.5..(w.min(h) as f64 * 0.6).max(1.0));
    Mask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - cy) <= r)
}

pub fn random_affine(rng: &mut ChaCha8Rng, scale: f64) -> AffineParams {
    AffineParams([
        rng.random_range(-scale..scale),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-scale..scale),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    ])
}

pub fn random_weights(rng: &mut ChaCha8Rng, class: ClassId) -> EnergyWeights {
    let mut w = EnergyWeights::default();
    w.lambda_motion = rng.random_range(0.01..0.5);
    w.lambda_time = rng.random_range(0.01..0.5);
    w.lambda_layer = rng.random_range(0.01..0.5);
    w.lambda_space = rng.random_range(1e-3..5e-2);
    w.lambda_d = rng.random_range(0.05..1.0);
    w.lambda_aff = rng.random_range(0.1..5.0);
    w.class_lambda_aff.insert(class, rng.random_range(0.1..20.0));
    w
}

/// A random problem with arbitrary (not optimized) flows, models and assignment.
pub fn random_problem(rng: &mut ChaCha8Rng, w: usize, h: usize, frames: usize) -> LayeredProblem {
    let class = ClassId::CAR;
    let channels = if rng.random::<bool>() { 3 } else { 1 };
    let images: Vec<ImageBuf> = (0..frames).map(|_| random_image(rng, w, h, channels)).collect();
    let semantic: Vec<Mask> = (0..frames).map(|_| random_blob(rng, w, h)).collect();
    let init: Vec<FlowField> = (0..frames - 1)
        .map(|_| {
            let th = random_affine(rng, 2.0);
            let mut f = FlowField::zeros(w, h);
            for i in 0..w * h {
                let (u, v) = th.eval((i % w) as f64, (i / w) as f64);
                f.set(i, u as f32 + rng.random_range(-0.5..0.5), v as f32 + rng.random_range(-0.5..0.5));
            }
            f
        })
        .collect();
    let weights = random_weights(rng, class);
    let mut p = LayeredProblem::new(images, init, semantic.clone(), class, weights, LayeredConfig::default()).unwrap();
    for t in 0..frames - 1 {
        for k in 0..2 {
            let th = random_affine(rng, 2.0);
            p.theta[t][k] = random_affine(rng, 2.0);
            let mut f = LayerFlow::from_affine(&th, w, h);
            for i in 0..w * h {
                f.u[i] += rng.random_range(-1.0..1.0);
                f.v[i] += rng.random_range(-1.0..1.0);
            }
            p.flows[t][k] = f;
        }
    }
    for t in 0..frames {
        let g = p.assignment.frame_mut(t);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = semantic[t].data()[i] ^ (rng.random::<f64>() < 0.15);
        }
    }
    p
}

/// Straight bilinear lookup; `None` outside `[0, w-1] x [0, h-1]`.
fn lerp2(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = if x0 + 1 < w { x0 + 1 } else { x0 };
    let y1 = if y0 + 1 < h { y0 + 1 } else { y0 };
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let v00 = data[y0 * w + x0];
    let v10 = data[y0 * w + x1];
    let v01 = data[y1 * w + x0];
    let v11 = data[y1 * w + x1];
    Some(v00 * (1.0 - ax) * (1.0 - ay) + v10 * ax * (1.0 - ay) + v01 * (1.0 - ax) * ay + v11 * ax * ay)
}

/// Layer index of a foreground flag: 1 foreground, 0 background.
fn layer(fg: bool) -> usize {
    if fg {
        1
    } else {
        0
    }
}

pub fn oracle_layer(g: &[bool], semantic: &Mask) -> f64 {
    let mut n = 0.0;
    for (i, &gi) in g.iter().enumerate() {
        if gi != semantic.data()[i] {
            n += 1.0;
        }
    }
    n
}

fn pair_weight(img: &ImageBuf, p: usize, q: usize, sigma_s: f64, sigma_c: f64, mix: f64) -> f64 {
    let w = img.width();
    let dx = (p % w) as f64 - (q % w) as f64;
    let dy = (p / w) as f64 - (q / w) as f64;
    let mut dc2 = 0.0;
    for ch in 0..img.channels() {
        let d = img.pixel(p)[ch] as f64 - img.pixel(q)[ch] as f64;
        dc2 += d * d;
    }
    let gs = (-(dx * dx + dy * dy) / (2.0 * sigma_s * sigma_s)).exp();
    let gc = (-dc2 / (2.0 * sigma_c * sigma_c)).exp();
    gs * ((1.0 - mix) + mix * gc)
}

pub fn oracle_space(g: &[bool], img: &ImageBuf, sigma_s: f64, sigma_c: f64, mix: f64) -> f64 {
    let mut e = 0.0;
    for p in 0..g.len() {
        for q in 0..g.len() {
            if p != q && g[p] != g[q] {
                e += pair_weight(img, p, q, sigma_s, sigma_c, mix);
            }
        }
    }
    e
}

/// Reference evaluator of every term with precomputed intensities and pair weights.
pub struct Oracle<'a> {
    p: &'a LayeredProblem,
    gray: Vec<Vec<f64>>,
    pair_w: Vec<Vec<f64>>,
}

impl<'a> Oracle<'a> {
    pub fn new(p: &'a LayeredProblem) -> Self {
        let s = p.config.space;
        let n = p.len();
        let gray = p
            .images
            .iter()
            .map(|im| im.to_gray().data().iter().map(|&v| v as f64).collect())
            .collect();
        let pair_w = p
            .images
            .iter()
            .map(|im| {
                let mut m = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        if a != b {
                            m[a * n + b] = pair_weight(im, a, b, s.sigma_spatial, s.sigma_color, s.mix);
                        }
                    }
                }
                m
            })
            .collect();
        Self { p, gray, pair_w }
    }

    /// `(data, time)` of pixel `(x, y)` of frame `t` in layer `k`, labels of frame `t + 1` from `g1`.
    fn correspondence(&self, g1: &[bool], t: usize, x: usize, y: usize, k: usize) -> (f64, f64) {
        let p = self.p;
        let (w, h) = p.dims();
        let i = y * w + x;
        let f = &p.flows[t][k];
        let qx = x as f64 + f.u[i];
        let qy = y as f64 + f.v[i];
        let g1f: Vec<f64> = g1.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        match lerp2(&g1f, w, h, qx, qy) {
            Some(s) if layer(s >= 0.5) == k => {
                let i1 = lerp2(&self.gray[t + 1], w, h, qx, qy).unwrap();
                (p.config.rho_data.rho(self.gray[t][i] - i1), 0.0)
            }
            _ => (p.weights.lambda_d, 1.0),
        }
    }

    pub fn data(&self, g: &[Vec<bool>], t: usize, k: usize) -> f64 {
        let (w, h) = self.p.dims();
        let mut e = 0.0;
        for y in 0..h {
            for x in 0..w {
                if layer(g[t][y * w + x]) == k {
                    e += self.correspondence(&g[t + 1], t, x, y, k).0;
                }
            }
        }
        e
    }

    pub fn time(&self, g: &[Vec<bool>], t: usize, k: usize) -> f64 {
        let (w, h) = self.p.dims();
        let mut e = 0.0;
        for y in 0..h {
            for x in 0..w {
                if layer(g[t][y * w + x]) == k {
                    e += self.correspondence(&g[t + 1], t, x, y, k).1;
                }
            }
        }
        e
    }

    pub fn motion(&self, g: &[Vec<bool>], t: usize, k: usize) -> f64 {
        let p = self.p;
        let (w, h) = p.dims();
        let f = &p.flows[t][k];
        let th = p.theta[t][k];
        let lam = if k == 1 { p.weights.lambda_aff_for(p.class) } else { p.weights.lambda_aff };
        let mut e = 0.0;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = (y * w as i64 + x) as usize;
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = (ny * w as i64 + nx) as usize;
                    if g[t][i] == g[t][j] {
                        e += p.config.rho_smooth.rho(f.u[i] - f.u[j]) + p.config.rho_smooth.rho(f.v[i] - f.v[j]);
                    }
                }
                let ub = th.0[0] + th.0[1] * x as f64 + th.0[2] * y as f64;
                let vb = th.0[3] + th.0[4] * x as f64 + th.0[5] * y as f64;
                e += lam * (p.config.rho_affine.rho(f.u[i] - ub) + p.config.rho_affine.rho(f.v[i] - vb));
            }
        }
        e
    }

    pub fn space(&self, g: &[bool], t: usize) -> f64 {
        let n = g.len();
        let m = &self.pair_w[t];
        let mut e = 0.0;
        for a in 0..n {
            for b in 0..n {
                if g[a] != g[b] {
                    e += m[a * n + b];
                }
            }
        }
        e
    }

    /// Total energy of assignment `g` with all other state taken from the problem.
    pub fn total(&self, g: &[Vec<bool>]) -> f64 {
        let p = self.p;
        let wt = &p.weights;
        let shared = if p.config.count_shared_terms_once { 1.0 } else { 2.0 };
        let mut e = 0.0;
        for t in 0..p.pairs() {
            for k in 0..2 {
                e += self.data(g, t, k) + wt.lambda_motion * self.motion(g, t, k) + wt.lambda_time * self.time(g, t, k);
            }
        }
        for t in 0..p.frames() {
            e += shared * wt.lambda_layer * oracle_layer(&g[t], &p.semantic[t]);
            e += shared * wt.lambda_space * self.space(&g[t], t);
        }
        e
    }

    /// Minimum of [`Oracle::total`] over every joint assignment; only for tiny boxes.
    pub fn exhaustive_minimum(&self) -> f64 {
        self.exhaustive_argmin().0
    }

    pub fn exhaustive_argmin(&self) -> (f64, Vec<Vec<bool>>) {
        let n = self.p.len();
        let frames = self.p.frames();
        let bits = n * frames;
        assert!(bits <= 20, "exhaustive search over {bits} bits");
        let mut best = f64::INFINITY;
        let mut arg = Vec::new();
        let mut g = vec![vec![false; n]; frames];
        for code in 0u64..(1u64 << bits) {
            for (t, gt) in g.iter_mut().enumerate() {
                for (i, gi) in gt.iter_mut().enumerate() {
                    *gi = (code >> (t * n + i)) & 1 == 1;
                }
            }
            let e = self.total(&g);
            if e < best {
                best = e;
                arg = g.clone();
            }
        }
        (best, arg)
    }
}

pub fn assignment_of(p: &LayeredProblem) -> Vec<Vec<bool>> {
    (0..p.frames()).map(|t| p.assignment.frame(t).to_vec()).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-12
}
