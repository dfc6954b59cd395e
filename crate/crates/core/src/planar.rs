//! Robust homography fitting to the initial flow of Plane regions.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::regions::{components_of_mask, MIN_THING_AREA};
use crate::taxonomy::{Category, ClassId, ClassTaxonomy, SegMap};
use crate::types::{BBox, FlowField, Mask};

/// A 3x3 projective transform, scaled so `h[(2,2)] = 1` when that entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("homography has non-finite entries".into()));
        }
        let scale = if m[(2, 2)].abs() > 1e-12 {
            m[(2, 2)]
        } else {
            m.norm()
        };
        if scale == 0.0 {
            return Err(Error::Degenerate("zero homography".into()));
        }
        let m = m / scale;
        if m.determinant().abs() < 1e-14 {
            return Err(Error::Degenerate("singular homography".into()));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Maps `(x, y)`; `None` when the point goes to the line at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.0 * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            return None;
        }
        Some((p.x / p.z, p.y / p.z))
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular homography".into()))?;
        Homography::new(inv)
    }

    /// Composition `other * self`, i.e. apply `self` first.
    pub fn then(&self, other: &Homography) -> Result<Homography> {
        Homography::new(other.0 * self.0)
    }

    /// Frobenius distance after scaling both to unit norm with matching sign.
    pub fn relative_error(&self, other: &Homography) -> f64 {
        let a = self.0 / self.0.norm();
        let b = other.0 / other.0.norm();
        (a - b).norm().min((a + b).norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier reprojection threshold in pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    /// Rounds of inlier re-selection after the final refit.
    pub refine_rounds: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_iterations: 2000,
            confidence: 0.995,
            refine_rounds: 3,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || self.max_iterations == 0 || !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Degenerate(format!("invalid RANSAC config {self:?}")));
        }
        Ok(())
    }
}

/// A point correspondence `src -> dst`.
pub type Correspondence = ([f64; 2], [f64; 2]);

#[derive(Debug, Clone)]
pub struct PointFit {
    pub homography: Homography,
    /// Inlier flags in the order of the canonically sorted input.
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

/// Hartley normalization: centroid to origin, mean distance sqrt(2).
fn normalizer(points: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mean_dist = points.map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized DLT over all given correspondences.
pub fn dlt(corr: &[Correspondence]) -> Result<Homography> {
    if corr.len() < 4 {
        return Err(Error::Degenerate(format!("DLT needs 4 correspondences, got {}", corr.len())));
    }
    let ts = normalizer(corr.iter().map(|c| c.0));
    let td = normalizer(corr.iter().map(|c| c.1));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in corr {
        let a = ts * Vector3::new(s[0], s[1], 1.0);
        let b = td * Vector3::new(d[0], d[1], 1.0);
        let (x, y) = (a.x, a.y);
        let (u, v) = (b.x, b.y);
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for r in [r1, r2] {
            for i in 0..9 {
                for j in i..9 {
                    ata[(i, j)] += r[i] * r[j];
                }
            }
        }
    }
    for i in 0..9 {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("9 eigenvalues");
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular normalizer".into()))?;
    Homography::new(td_inv * hn * ts)
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = ((b[0] - a[0]).hypot(b[1] - a[1])) * ((c[0] - a[0]).hypot(c[1] - a[1]));
    cross.abs() <= 1e-9 * scale.max(1e-12)
}

fn sample_degenerate(pts: &[[f64; 2]; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| collinear(pts[t[0]], pts[t[1]], pts[t[2]]))
}

fn all_collinear(corr: &[Correspondence]) -> bool {
    let a = corr[0].0;
    let Some(b) = corr.iter().map(|c| c.0).find(|p| *p != a) else {
        return true;
    };
    corr.iter().all(|c| collinear(a, b, c.0))
}

#[inline]
fn residual(h: &Homography, c: &Correspondence) -> f64 {
    match h.apply(c.0[0], c.0[1]) {
        Some((x, y)) => (x - c.1[0]).hypot(y - c.1[1]),
        None => f64::INFINITY,
    }
}

fn score(h: &Homography, corr: &[Correspondence], thr: f64) -> (usize, f64) {
    let mut n = 0;
    let mut cost = 0.0;
    for c in corr {
        let r = residual(h, c);
        if r <= thr {
            n += 1;
            cost += r * r;
        }
    }
    (n, cost)
}

/// RANSAC over 4-point DLT samples, then a normalized DLT refit on the inliers.
///
/// The input is sorted first so the result does not depend on its order.
pub fn fit_homography_points(corr: &[Correspondence], cfg: &RansacConfig, seed: u64) -> Result<(PointFit, Vec<Correspondence>)> {
    cfg.validate()?;
    if corr.len() < 4 {
        return Err(Error::Degenerate(format!("need at least 4 correspondences, got {}", corr.len())));
    }
    let mut corr = corr.to_vec();
    corr.sort_by(|a, b| {
        a.0[1]
            .total_cmp(&b.0[1])
            .then(a.0[0].total_cmp(&b.0[0]))
            .then(a.1[0].total_cmp(&b.1[0]))
            .then(a.1[1].total_cmp(&b.1[1]))
    });
    if all_collinear(&corr) {
        return Err(Error::Degenerate("all samples collinear".into()));
    }
    let n = corr.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Homography, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let idx = sample(&mut rng, n, 4);
        let s: [Correspondence; 4] = [corr[idx.index(0)], corr[idx.index(1)], corr[idx.index(2)], corr[idx.index(3)]];
        if sample_degenerate(&s.map(|c| c.0)) || sample_degenerate(&s.map(|c| c.1)) {
            continue;
        }
        let Ok(h) = dlt(&s) else { continue };
        let (count, cost) = score(&h, &corr, cfg.threshold);
        let better = match &best {
            None => true,
            Some((_, bc, bcost)) => count > *bc || (count == *bc && cost < *bcost),
        };
        if better {
            best = Some((h, count, cost));
            let w = count as f64 / n as f64;
            let p_fail = 1.0 - w.powi(4);
            needed = if p_fail <= f64::EPSILON {
                it
            } else {
                ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil().max(1.0) as usize
            };
        }
    }
    let (mut h, count, _) = best.ok_or_else(|| Error::Degenerate("no non-degenerate sample found".into()))?;
    if count < 4 {
        return Err(Error::Degenerate("fewer than 4 inliers".into()));
    }
    let mut inliers: Vec<bool> = corr.iter().map(|c| residual(&h, c) <= cfg.threshold).collect();
    for _ in 0..cfg.refine_rounds.max(1) {
        let sel: Vec<Correspondence> = corr.iter().zip(&inliers).filter(|(_, &i)| i).map(|(c, _)| *c).collect();
        if sel.len() < 4 || all_collinear(&sel) {
            break;
        }
        let Ok(refit) = dlt(&sel) else { break };
        let next: Vec<bool> = corr.iter().map(|c| residual(&refit, c) <= cfg.threshold).collect();
        let grew = next.iter().filter(|&&b| b).count() >= sel.len();
        if !grew {
            break;
        }
        h = refit;
        let done = next == inliers;
        inliers = next;
        if done {
            break;
        }
    }
    Ok((
        PointFit {
            homography: h,
            inliers,
            iterations: it,
        },
        corr,
    ))
}

/// Fits a homography to the correspondences `(x, y) -> (x + u, y + v)` of the masked valid pixels.
///
/// Returns the model and the inlier mask in frame coordinates.
pub fn fit_homography_ransac(flow: &FlowField, mask: &Mask, cfg: &RansacConfig, seed: u64) -> Result<(Homography, Mask)> {
    if flow.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: flow.dims(),
            got: mask.dims(),
        });
    }
    let (w, h) = flow.dims();
    let mut corr = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.data()[i] && flow.valid[i] {
                let (fx, fy) = (x as f64, y as f64);
                corr.push(([fx, fy], [fx + flow.u[i] as f64, fy + flow.v[i] as f64]));
            }
        }
    }
    if corr.len() < 4 {
        return Err(Error::Degenerate(format!("region has {} valid pixels", corr.len())));
    }
    let (fit, _) = fit_homography_points(&corr, cfg, seed)?;
    let mut inl = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.data()[i] && flow.valid[i] {
                let c = ([x as f64, y as f64], [x as f64 + flow.u[i] as f64, y as f64 + flow.v[i] as f64]);
                inl.data_mut()[i] = residual(&fit.homography, &c) <= cfg.threshold;
            }
        }
    }
    Ok((fit.homography, inl))
}

/// Flow induced by `h` on masked pixels; other pixels are invalid.
pub fn homography_flow(h: &Homography, mask: &Mask, width: usize, height: usize) -> FlowField {
    let mut out = FlowField::invalid(width, height);
    for y in 0..height {
        for x in 0..width {
            if !mask.get(x, y) {
                continue;
            }
            if let Some((px, py)) = h.apply(x as f64, y as f64) {
                let i = y * width + x;
                out.set(i, (px - x as f64) as f32, (py - y as f64) as f32);
            }
        }
    }
    out
}

/// A fitted Plane region of one frame pair.
#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub class: ClassId,
    pub bbox: BBox,
    /// Region pixels in frame coordinates.
    pub mask: Mask,
    pub homography: Homography,
    pub inliers: usize,
}

/// Fits every connected Plane region of at least [`MIN_THING_AREA`] pixels.
///
/// Regions that fail to fit are skipped and fall back to Stuff.
pub fn fit_planes(seg: &SegMap, flow: &FlowField, taxonomy: &ClassTaxonomy, cfg: &RansacConfig, seed: u64) -> Vec<PlaneFit> {
    let (w, h) = seg.dims();
    let mut out = Vec::new();
    let mut region_index = 0u64;
    for class in taxonomy.classes_in(Category::Plane) {
        let class_mask = seg.class_mask(class);
        for (bbox, local) in components_of_mask(&class_mask) {
            region_index += 1;
            if local.count() < MIN_THING_AREA {
                continue;
            }
            let mut mask = Mask::new(w, h);
            for y in bbox.y0..=bbox.y1 {
                for x in bbox.x0..=bbox.x1 {
                    if local.get(x - bbox.x0, y - bbox.y0) {
                        mask.set(x, y, true);
                    }
                }
            }
            let region_seed = seed ^ region_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            match fit_homography_ransac(flow, &mask, cfg, region_seed) {
                Ok((homography, inl)) => out.push(PlaneFit {
                    class,
                    bbox,
                    mask,
                    homography,
                    inliers: inl.count(),
                }),
                Err(e) => log::debug!("plane region {class} at {bbox:?} left as Stuff: {e}"),
            }
        }
    }
    out
}
