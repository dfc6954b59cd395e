//! Fully connected spatial-coherence term with bilateral pair weights.

use rayon::prelude::*;

use crate::types::ImageBuf;

/// Pair weight `w(p,q) = Gs(p-q) [(1 - mix) + mix Gc(c_p - c_q)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceWeights {
    /// Spatial standard deviation in pixels.
    pub sigma_spatial: f64,
    /// Color standard deviation in intensity units.
    pub sigma_color: f64,
    /// Share of the bilateral kernel in `[0, 1]`.
    pub mix: f64,
    /// Boxes up to this many pixels are evaluated exactly; larger ones through a bilateral grid.
    pub exact_max_pixels: usize,
}

impl Default for SpaceWeights {
    fn default() -> Self {
        Self {
            sigma_spatial: 15.0,
            sigma_color: 0.08,
            mix: 1.0,
            exact_max_pixels: 4096,
        }
    }
}

impl SpaceWeights {
    pub fn is_valid(&self) -> bool {
        self.sigma_spatial > 0.0 && self.sigma_color > 0.0 && (0.0..=1.0).contains(&self.mix)
    }

    #[inline]
    pub fn weight(&self, dx: f64, dy: f64, dc2: f64) -> f64 {
        let s = (-(dx * dx + dy * dy) / (2.0 * self.sigma_spatial * self.sigma_spatial)).exp();
        s * ((1.0 - self.mix) + self.mix * (-dc2 / (2.0 * self.sigma_color * self.sigma_color)).exp())
    }
}

pub(crate) fn colors_of(img: &ImageBuf) -> Vec<[f64; 3]> {
    (0..img.width() * img.height())
        .map(|i| {
            let mut c = [0.0; 3];
            for (d, &s) in c.iter_mut().zip(img.pixel(i)) {
                *d = s as f64;
            }
            c
        })
        .collect()
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Precomputed factors of the exact weights.
pub(crate) struct ExactKernel<'a> {
    colors: &'a [[f64; 3]],
    width: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    mix: f64,
    inv_2sc2: f64,
}

impl<'a> ExactKernel<'a> {
    pub(crate) fn new(colors: &'a [[f64; 3]], width: usize, height: usize, sw: &SpaceWeights) -> Self {
        let g = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|d| (-((d * d) as f64) / (2.0 * sw.sigma_spatial * sw.sigma_spatial)).exp())
                .collect()
        };
        Self {
            colors,
            width,
            gx: g(width),
            gy: g(height),
            mix: sw.mix,
            inv_2sc2: 1.0 / (2.0 * sw.sigma_color * sw.sigma_color),
        }
    }

    #[inline]
    pub(crate) fn weight(&self, p: usize, q: usize) -> f64 {
        let (px, py) = (p % self.width, p / self.width);
        let (qx, qy) = (q % self.width, q / self.width);
        let s = self.gx[px.abs_diff(qx)] * self.gy[py.abs_diff(qy)];
        let c = (-dist2(&self.colors[p], &self.colors[q]) * self.inv_2sc2).exp();
        s * ((1.0 - self.mix) + self.mix * c)
    }

    /// `Σ_{q≠p, sel[q]} w_pq` for every `p`.
    pub(crate) fn sums(&self, sel: Option<&[bool]>) -> Vec<f64> {
        let n = self.colors.len();
        let members: Vec<usize> = match sel {
            Some(s) => (0..n).filter(|&q| s[q]).collect(),
            None => (0..n).collect(),
        };
        (0..n)
            .into_par_iter()
            .map(|p| {
                members
                    .iter()
                    .filter(|&&q| q != p)
                    .map(|&q| self.weight(p, q))
                    .sum()
            })
            .collect()
    }
}

pub(crate) fn pair_sums(colors: &[[f64; 3]], width: usize, height: usize, sw: &SpaceWeights) -> Vec<f64> {
    ExactKernel::new(colors, width, height, sw).sums(None)
}

/// `Σ_p Σ_{q≠p} w_pq [g_p ≠ g_q]` by the exact double loop.
pub fn space_energy_exact(g: &[bool], image: &ImageBuf, sw: &SpaceWeights) -> f64 {
    let colors = colors_of(image);
    exact_from_colors(g, &colors, image.width(), image.height(), sw)
}

pub(crate) fn exact_from_colors(g: &[bool], colors: &[[f64; 3]], width: usize, height: usize, sw: &SpaceWeights) -> f64 {
    let kernel = ExactKernel::new(colors, width, height, sw);
    let fg: Vec<usize> = (0..g.len()).filter(|&i| g[i]).collect();
    let bg: Vec<usize> = (0..g.len()).filter(|&i| !g[i]).collect();
    let (outer, inner) = if fg.len() <= bg.len() { (fg, bg) } else { (bg, fg) };
    let partial: Vec<f64> = outer
        .par_iter()
        .map(|&p| inner.iter().map(|&q| kernel.weight(p, q)).sum())
        .collect();
    2.0 * partial.iter().sum::<f64>()
}

/// Bilateral-grid approximation of [`space_energy_exact`].
///
/// The spatial-only share of the kernel is evaluated exactly by separable
/// convolution; the bilateral share is splatted onto a grid over position and
/// color, blurred, and sliced.
pub fn space_energy_fast(g: &[bool], image: &ImageBuf, sw: &SpaceWeights) -> f64 {
    let colors = colors_of(image);
    fast_from_colors(g, &colors, image.width(), image.height(), image.channels(), sw)
}

pub(crate) fn fast_from_colors(
    g: &[bool],
    colors: &[[f64; 3]],
    width: usize,
    height: usize,
    channels: usize,
    sw: &SpaceWeights,
) -> f64 {
    let (s, f) = fast_sums(g, colors, width, height, channels, sw);
    energy_from_sums(g, &s, &f)
}

/// Energy from per-pixel total weight `s` and foreground weight `f`; self terms cancel.
pub(crate) fn energy_from_sums(g: &[bool], s: &[f64], f: &[f64]) -> f64 {
    g.iter()
        .zip(s.iter().zip(f))
        .map(|(&gp, (&sp, &fp))| if gp { sp - fp } else { fp })
        .sum()
}

/// Approximate `(Σ_q w_pq, Σ_q w_pq g_q)` per pixel, self term included.
pub(crate) fn fast_sums(
    g: &[bool],
    colors: &[[f64; 3]],
    width: usize,
    height: usize,
    channels: usize,
    sw: &SpaceWeights,
) -> (Vec<f64>, Vec<f64>) {
    let n = width * height;
    let ones = vec![1.0; n];
    let gv: Vec<f64> = g.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let spatial_s = gaussian_conv2d(&ones, width, height, sw.sigma_spatial);
    let spatial_f = gaussian_conv2d(&gv, width, height, sw.sigma_spatial);
    let (bil_s, bil_f) = if sw.mix > 0.0 {
        BilateralGrid::build(colors, width, height, channels.clamp(1, 3), sw).filter(&gv)
    } else {
        (vec![0.0; n], vec![0.0; n])
    };
    let m = sw.mix;
    let s = (0..n).map(|i| (1.0 - m) * spatial_s[i] + m * bil_s[i]).collect();
    let f = (0..n).map(|i| (1.0 - m) * spatial_f[i] + m * bil_f[i]).collect();
    (s, f)
}

/// Unnormalized Gaussian filter with peak weight 1 over the full box.
fn gaussian_conv2d(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let kx: Vec<f64> = (0..width).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let ky: Vec<f64> = (0..height).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let rows: Vec<f64> = (0..height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let row = &data[y * width..(y + 1) * width];
            let kx = &kx;
            (0..width).map(move |x| row.iter().enumerate().map(|(q, &v)| kx[x.abs_diff(q)] * v).sum::<f64>())
        })
        .collect();
    let mut out = vec![0.0; width * height];
    let cols: Vec<Vec<f64>> = (0..width)
        .into_par_iter()
        .map(|x| {
            (0..height)
                .map(|y| (0..height).map(|q| ky[y.abs_diff(q)] * rows[q * width + x]).sum())
                .collect()
        })
        .collect();
    for (x, col) in cols.into_iter().enumerate() {
        for (y, v) in col.into_iter().enumerate() {
            out[y * width + x] = v;
        }
    }
    out
}

const GRID_CELL_BUDGET: usize = 4_000_000;

struct BilateralGrid<'a> {
    colors: &'a [[f64; 3]],
    width: usize,
    height: usize,
    channels: usize,
    dims: Vec<usize>,
    /// Sample spacing per axis (x, y, c...).
    spacing: Vec<f64>,
    sigma: Vec<f64>,
    origin: Vec<f64>,
}

impl<'a> BilateralGrid<'a> {
    fn build(colors: &'a [[f64; 3]], width: usize, height: usize, channels: usize, sw: &SpaceWeights) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in colors {
            for j in 0..channels {
                lo[j] = lo[j].min(c[j]);
                hi[j] = hi[j].max(c[j]);
            }
        }
        let mut ss = sw.sigma_spatial / 2.0;
        let mut sc = sw.sigma_color / 2.0;
        let dims_for = |ss: f64, sc: f64| -> Vec<usize> {
            let mut d = vec![
                ((width - 1) as f64 / ss).floor() as usize + 2,
                ((height - 1) as f64 / ss).floor() as usize + 2,
            ];
            for j in 0..channels {
                d.push(((hi[j] - lo[j]) / sc).floor() as usize + 2);
            }
            d
        };
        let mut dims = dims_for(ss, sc);
        while dims.iter().product::<usize>() > GRID_CELL_BUDGET {
            if ss < sw.sigma_spatial {
                ss = sw.sigma_spatial;
            } else {
                sc *= 1.5;
            }
            dims = dims_for(ss, sc);
        }
        let mut spacing = vec![ss, ss];
        let mut sigma = vec![sw.sigma_spatial, sw.sigma_spatial];
        let mut origin = vec![0.0, 0.0];
        for &l in lo.iter().take(channels) {
            spacing.push(sc);
            sigma.push(sw.sigma_color);
            origin.push(l);
        }
        Self {
            colors,
            width,
            height,
            channels,
            dims,
            spacing,
            sigma,
            origin,
        }
    }

    fn coords(&self, i: usize) -> Vec<f64> {
        let mut c = vec![(i % self.width) as f64 / self.spacing[0], (i / self.width) as f64 / self.spacing[1]];
        for j in 0..self.channels {
            c.push((self.colors[i][j] - self.origin[2 + j]) / self.spacing[2 + j]);
        }
        c
    }

    /// Multilinear corners `(flat index, weight)` of a grid position.
    fn corners(&self, pos: &[f64]) -> Vec<(usize, f64)> {
        let d = pos.len();
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        for (a, &p) in pos.iter().enumerate() {
            let b = (p.floor() as usize).min(self.dims[a] - 2);
            base.push(b);
            frac.push(p - b as f64);
        }
        let mut out = Vec::with_capacity(1 << d);
        for mask in 0..(1usize << d) {
            let mut idx = 0;
            let mut w = 1.0;
            for a in (0..d).rev() {
                let bit = (mask >> a) & 1;
                idx = idx * self.dims[a] + base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            out.push((idx, w));
        }
        out
    }

    fn filter(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.width * self.height;
        let cells: usize = self.dims.iter().product();
        let mut grid = vec![[0.0f64; 2]; cells];
        let corners: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(|i| self.corners(&self.coords(i))).collect();
        for (i, cs) in corners.iter().enumerate() {
            for &(idx, w) in cs {
                grid[idx][0] += w;
                grid[idx][1] += w * g[i];
            }
        }
        let mut peak = 1.0;
        for axis in 0..self.dims.len() {
            let ratio = self.sigma[axis] / self.spacing[axis];
            // Linear splat and slice each add variance 1/6 cell^2.
            let var = (ratio * ratio - 1.0 / 3.0).max(0.05);
            blur_axis(&mut grid, &self.dims, axis, var.sqrt());
            peak *= (2.0 * std::f64::consts::PI).sqrt() * ratio;
        }
        let out: Vec<[f64; 2]> = corners
            .par_iter()
            .map(|cs| {
                let mut acc = [0.0; 2];
                for &(idx, w) in cs {
                    acc[0] += w * grid[idx][0];
                    acc[1] += w * grid[idx][1];
                }
                acc
            })
            .collect();
        (
            out.iter().map(|a| a[0] * peak).collect(),
            out.iter().map(|a| a[1] * peak).collect(),
        )
    }
}

fn blur_axis(grid: &mut [[f64; 2]], dims: &[usize], axis: usize, std: f64) {
    let radius = (3.0 * std).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * std * std)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let stride: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let outer: usize = dims[axis + 1..].iter().product();
    let mut line = vec![[0.0; 2]; len];
    for o in 0..outer {
        for s in 0..stride {
            let start = o * stride * len + s;
            for (i, l) in line.iter_mut().enumerate() {
                *l = grid[start + i * stride];
            }
            for i in 0..len {
                let mut acc = [0.0; 2];
                for (j, &k) in kernel.iter().enumerate() {
                    let src = i as isize + j as isize - radius;
                    if src >= 0 && (src as usize) < len {
                        let v = line[src as usize];
                        acc[0] += k * v[0];
                        acc[1] += k * v[1];
                    }
                }
                grid[start + i * stride] = acc;
            }
        }
    }
}
