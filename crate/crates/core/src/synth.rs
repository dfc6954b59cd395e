//! Synthetic scenes with exact ground truth: a textured background moving by a
//! homography chain and textured objects moving by their own affine motion.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_flo, write_image16, write_labels, write_mask, FrameEntry, SequenceManifest};
use crate::planar::Homography;
use crate::regions::dilate_mask;
use crate::taxonomy::{ClassId, ClassTaxonomy, SegMap};
use crate::types::{FlowField, ImageBuf, Mask};
use crate::weights::WeightOverrides;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

/// Motion of an object over one frame pair, about the object's current center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Translate([f64; 2]),
    /// Row-major 2x2 linear part followed by a translation.
    Affine { linear: [f64; 4], translate: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Center in frame 0.
    pub center: [f64; 2],
    /// Half extents along x and y.
    pub half_size: [f64; 2],
    /// One entry per frame pair; a single entry repeats.
    pub motion: Vec<Motion>,
    #[serde(default = "default_object_class")]
    pub class: String,
}

fn default_object_class() -> String {
    "car".into()
}

fn default_background_class() -> String {
    "road".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Row-major background homography per frame pair; a single entry repeats.
    pub background: Vec<[f64; 9]>,
    #[serde(default = "default_background_class")]
    pub background_class: String,
    /// Drawn in order, later objects on top.
    pub objects: Vec<ObjectSpec>,
    pub texture_seed: u64,
    /// Seed for all corruptions.
    pub seed: u64,
    #[serde(default)]
    pub image_noise: f64,
    /// Standard deviation per component of the noise added to the emitted initial flow.
    #[serde(default)]
    pub flow_noise: f64,
    /// Dilation radius of the emitted semantic masks.
    #[serde(default)]
    pub mask_dilation: usize,
}

impl SceneSpec {
    /// A textured square translating over a plane under a mild projective motion.
    pub fn square_over_homography() -> Self {
        Self {
            width: 128,
            height: 128,
            frames: 5,
            background: vec![[1.008, 0.003, 0.6, -0.002, 1.006, 0.4, 1.5e-5, 1.0e-5, 1.0]],
            background_class: default_background_class(),
            objects: vec![ObjectSpec {
                shape: Shape::Rectangle,
                center: [54.0, 62.0],
                half_size: [15.0, 15.0],
                motion: vec![Motion::Translate([2.5, 0.75])],
                class: default_object_class(),
            }],
            texture_seed: 7,
            seed: 11,
            image_noise: 0.0,
            flow_noise: 0.5,
            mask_dilation: 3,
        }
    }

    /// Two touching objects of one class moving apart in different directions,
    /// so a single tracked box holds two foreground motions.
    pub fn two_motions() -> Self {
        let mut s = Self::square_over_homography();
        s.objects = vec![
            ObjectSpec {
                shape: Shape::Rectangle,
                center: [50.0, 64.0],
                half_size: [13.0, 13.0],
                motion: vec![Motion::Translate([2.0, -1.5])],
                class: default_object_class(),
            },
            ObjectSpec {
                shape: Shape::Rectangle,
                center: [74.0, 64.0],
                half_size: [13.0, 13.0],
                motion: vec![Motion::Translate([-2.0, 1.5])],
                class: default_object_class(),
            },
        ];
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Scene(e.to_string()))
    }

    fn pick<T: Copy>(v: &[T], t: usize) -> T {
        v[t.min(v.len() - 1)]
    }

    pub fn validate(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        if self.width < 2 || self.height < 2 || self.frames < 2 {
            return Err(Error::Scene(format!(
                "need at least 2x2 pixels and 2 frames, got {}x{} and {}",
                self.width, self.height, self.frames
            )));
        }
        if self.background.is_empty() {
            return Err(Error::Scene("no background motion".into()));
        }
        if !(self.image_noise >= 0.0 && self.flow_noise >= 0.0) {
            return Err(Error::Scene("noise levels must be non-negative".into()));
        }
        class_id(taxonomy, &self.background_class)?;
        for o in &self.objects {
            class_id(taxonomy, &o.class)?;
            if o.motion.is_empty() || !(o.half_size[0] > 0.0 && o.half_size[1] > 0.0) {
                return Err(Error::Scene(format!("object at {:?} needs a motion and a positive size", o.center)));
            }
        }
        Ok(())
    }
}

fn class_id(taxonomy: &ClassTaxonomy, name: &str) -> Result<ClassId> {
    taxonomy
        .class_by_name(name)
        .ok_or_else(|| Error::Scene(format!("unknown class {name:?}")))
}

/// Smooth lattice noise with a seeded permutation table.
#[derive(Debug, Clone)]
struct ValueNoise {
    perm: [u8; 512],
    values: [f32; 256],
}

impl ValueNoise {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<u8> = (0..=255).collect();
        for i in (1..256).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        let mut values = [0f32; 256];
        values.iter_mut().for_each(|v| *v = rng.random());
        Self { perm, values }
    }

    fn lattice(&self, x: i64, y: i64) -> f64 {
        let a = self.perm[(x & 255) as usize] as usize;
        self.values[self.perm[a + (y & 255) as usize] as usize] as f64
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (ix, iy) = (fx as i64, fy as i64);
        let s = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (sx, sy) = (s(x - fx), s(y - fy));
        let top = self.lattice(ix, iy) * (1.0 - sx) + self.lattice(ix + 1, iy) * sx;
        let bot = self.lattice(ix, iy + 1) * (1.0 - sx) + self.lattice(ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bot * sy
    }

    /// Two octaves with cells of 8 and 4 pixels, in `[0, 1]`.
    fn fractal(&self, x: f64, y: f64) -> f64 {
        0.5 * self.at(x / 8.0, y / 8.0) + 0.5 * self.at(x / 4.0 + 17.3, y / 4.0 + 5.1)
    }
}

/// A colored texture defined on the continuous plane.
#[derive(Debug, Clone)]
struct Texture {
    luma: ValueNoise,
    chroma: [ValueNoise; 3],
    base: [f64; 3],
}

impl Texture {
    fn new(seed: u64, base: [f64; 3]) -> Self {
        Self {
            luma: ValueNoise::new(seed),
            chroma: [ValueNoise::new(seed + 1), ValueNoise::new(seed + 2), ValueNoise::new(seed + 3)],
            base,
        }
    }

    fn sample(&self, x: f64, y: f64, out: &mut [f32]) {
        let l = self.luma.fractal(x, y);
        for c in 0..3 {
            let v = self.base[c] + 0.55 * l + 0.15 * self.chroma[c].at(x / 9.0, y / 9.0);
            out[c] = v.clamp(0.0, 1.0) as f32;
        }
    }
}

/// Affine map as a homogeneous 3x3 matrix.
fn affine_matrix(m: &Motion, center: (f64, f64)) -> Matrix3<f64> {
    let (lin, tr) = match *m {
        Motion::Translate(t) => ([1.0, 0.0, 0.0, 1.0], t),
        Motion::Affine { linear, translate } => (linear, translate),
    };
    let (cx, cy) = center;
    // c + L (p - c) + t
    Matrix3::new(
        lin[0],
        lin[1],
        cx + tr[0] - lin[0] * cx - lin[1] * cy,
        lin[2],
        lin[3],
        cy + tr[1] - lin[2] * cx - lin[3] * cy,
        0.0,
        0.0,
        1.0,
    )
}

fn apply(m: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = m * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Deterministic scene geometry and appearance, independent of corruption.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    background: Texture,
    objects: Vec<Texture>,
    /// Frame-0 to frame-t background maps and their inverses.
    bg_pose: Vec<(Matrix3<f64>, Matrix3<f64>)>,
    /// Per object, frame-0 to frame-t maps and their inverses.
    obj_pose: Vec<Vec<(Matrix3<f64>, Matrix3<f64>)>>,
}

/// Rendered frames, ground truth and corrupted inputs.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub images: Vec<ImageBuf>,
    /// Ground-truth flow from frame t to t+1.
    pub gt_flows: Vec<FlowField>,
    /// Union of all object masks per frame.
    pub gt_masks: Vec<Mask>,
    /// Pixels of frame t whose surface is hidden or outside the frame at t+1.
    pub occlusions: Vec<Mask>,
    /// Semantic labels with dilated object masks.
    pub labels: Vec<SegMap>,
    /// Ground truth plus Gaussian noise.
    pub initial_flows: Vec<FlowField>,
}

impl Scene {
    pub fn new(spec: &SceneSpec, taxonomy: &ClassTaxonomy) -> Result<Self> {
        spec.validate(taxonomy)?;
        let mut bg_pose = vec![(Matrix3::identity(), Matrix3::identity())];
        for t in 0..spec.frames - 1 {
            let h = Homography::new(Matrix3::from_row_slice(&SceneSpec::pick(&spec.background, t)))?;
            let m = h.matrix() * bg_pose[t].0;
            let inv = m
                .try_inverse()
                .ok_or_else(|| Error::Scene(format!("background chain is singular at frame {}", t + 1)))?;
            bg_pose.push((m, inv));
        }
        let mut obj_pose = Vec::new();
        for o in &spec.objects {
            let mut poses = vec![(Matrix3::identity(), Matrix3::identity())];
            for t in 0..spec.frames - 1 {
                let c = apply(&poses[t].0, o.center[0], o.center[1]);
                let m = affine_matrix(&SceneSpec::pick(&o.motion, t), c) * poses[t].0;
                let inv = m
                    .try_inverse()
                    .ok_or_else(|| Error::Scene(format!("object motion is singular at frame {}", t + 1)))?;
                poses.push((m, inv));
            }
            for (t, (m, _)) in poses.iter().enumerate() {
                let (hx, hy) = (o.half_size[0], o.half_size[1]);
                for (dx, dy) in [(-hx, -hy), (hx, -hy), (-hx, hy), (hx, hy)] {
                    let (x, y) = apply(m, o.center[0] + dx, o.center[1] + dy);
                    if x < 0.0 || y < 0.0 || x > (spec.width - 1) as f64 || y > (spec.height - 1) as f64 {
                        return Err(Error::Scene(format!("object at {:?} leaves the frame at t = {t}", o.center)));
                    }
                }
            }
            obj_pose.push(poses);
        }
        let objects = (0..spec.objects.len())
            .map(|n| Texture::new(spec.texture_seed.wrapping_add(100 * (n as u64 + 1)), [0.3, 0.05, -0.05]))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            background: Texture::new(spec.texture_seed, [0.05, 0.1, 0.15]),
            objects,
            bg_pose,
            obj_pose,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// Index of the topmost object covering `(x, y)` in frame `t`.
    pub fn object_at(&self, t: usize, x: f64, y: f64) -> Option<usize> {
        (0..self.spec.objects.len()).rev().find(|&n| {
            let o = &self.spec.objects[n];
            let (ox, oy) = apply(&self.obj_pose[n][t].1, x, y);
            let (dx, dy) = ((ox - o.center[0]) / o.half_size[0], (oy - o.center[1]) / o.half_size[1]);
            match o.shape {
                Shape::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
                Shape::Ellipse => dx * dx + dy * dy <= 1.0,
            }
        })
    }

    /// Noise-free color of frame `t` at a continuous position.
    pub fn sample(&self, t: usize, x: f64, y: f64, out: &mut [f32]) {
        match self.object_at(t, x, y) {
            Some(n) => {
                let (ox, oy) = apply(&self.obj_pose[n][t].1, x, y);
                self.objects[n].sample(ox, oy, out);
            }
            None => {
                let (bx, by) = apply(&self.bg_pose[t].1, x, y);
                self.background.sample(bx, by, out);
            }
        }
    }

    /// True displacement of the surface point at `(x, y)` from frame `t` to `t + 1`.
    pub fn displacement(&self, t: usize, x: f64, y: f64) -> (f64, f64) {
        let m = match self.object_at(t, x, y) {
            Some(n) => self.obj_pose[n][t + 1].0 * self.obj_pose[n][t].1,
            None => self.bg_pose[t + 1].0 * self.bg_pose[t].1,
        };
        let (qx, qy) = apply(&m, x, y);
        (qx - x, qy - y)
    }

    fn render_frame(&self, t: usize) -> ImageBuf {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut data = vec![0f32; w * h * 3];
        data.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                self.sample(t, x as f64, y as f64, &mut row[x * 3..x * 3 + 3]);
            }
        });
        ImageBuf::new(w, h, 3, data).expect("sizes agree")
    }

    fn truth(&self, t: usize) -> (FlowField, Mask) {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut flow = FlowField::zeros(w, h);
        let mut occ = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let (u, v) = self.displacement(t, fx, fy);
                flow.set(y * w + x, u as f32, v as f32);
                let (qx, qy) = (fx + u, fy + v);
                let outside = qx < 0.0 || qy < 0.0 || qx > (w - 1) as f64 || qy > (h - 1) as f64;
                if outside || self.object_at(t + 1, qx, qy) != self.object_at(t, fx, fy) {
                    occ.set(x, y, true);
                }
            }
        }
        (flow, occ)
    }

    /// Renders all frames, ground truth and the corrupted inputs.
    pub fn render(&self, taxonomy: &ClassTaxonomy) -> Result<SceneData> {
        let spec = &self.spec;
        let (w, h) = (spec.width, spec.height);
        let frames = spec.frames;
        let mut images: Vec<ImageBuf> = (0..frames).into_par_iter().map(|t| self.render_frame(t)).collect();
        let (gt_flows, occlusions): (Vec<_>, Vec<_>) = (0..frames - 1).into_par_iter().map(|t| self.truth(t)).unzip();

        let bg_class = class_id(taxonomy, &spec.background_class)?;
        let mut gt_masks = Vec::with_capacity(frames);
        let mut labels = Vec::with_capacity(frames);
        for t in 0..frames {
            let owner: Vec<Option<usize>> = (0..w * h).map(|i| self.object_at(t, (i % w) as f64, (i / w) as f64)).collect();
            gt_masks.push(Mask::from_vec(w, h, owner.iter().map(|o| o.is_some()).collect())?);
            let mut seg = SegMap::filled(w, h, bg_class);
            for (n, o) in spec.objects.iter().enumerate() {
                let m = Mask::from_vec(w, h, owner.iter().map(|&k| k == Some(n)).collect())?;
                let m = dilate_mask(&m, spec.mask_dilation);
                let class = class_id(taxonomy, &o.class)?;
                for y in 0..h {
                    for x in 0..w {
                        if m.get(x, y) {
                            seg.set(x, y, class);
                        }
                    }
                }
            }
            labels.push(seg);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        if spec.image_noise > 0.0 {
            let noise = Normal::new(0.0, spec.image_noise).map_err(|e| Error::Scene(e.to_string()))?;
            for img in &mut images {
                let data: Vec<f32> = img
                    .data()
                    .iter()
                    .map(|&v| (v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
                    .collect();
                *img = ImageBuf::new(w, h, img.channels(), data)?;
            }
        }
        let mut initial_flows = gt_flows.clone();
        if spec.flow_noise > 0.0 {
            let noise = Normal::new(0.0, spec.flow_noise).map_err(|e| Error::Scene(e.to_string()))?;
            for f in &mut initial_flows {
                for i in 0..f.len() {
                    f.u[i] += noise.sample(&mut rng) as f32;
                    f.v[i] += noise.sample(&mut rng) as f32;
                }
            }
        }
        Ok(SceneData {
            images,
            gt_flows,
            gt_masks,
            occlusions,
            labels,
            initial_flows,
        })
    }
}

/// Renders a scene.
pub fn render(spec: &SceneSpec, taxonomy: &ClassTaxonomy) -> Result<SceneData> {
    Scene::new(spec, taxonomy)?.render(taxonomy)
}

/// Writes a dataset directory and returns the path of its `manifest.toml`.
///
/// Inputs sit at the top level (`frame_*.png`, `labels_*.png`, `flow_*.flo`).
/// Ground truth goes under `gt/`: `flow/flow_*.flo`, per-frame foreground
/// masks `mask/mask_*.png`, occluded pixels `occ/occ_*.png`, and for
/// evaluation by file name the source-frame foreground `fg/flow_*.png` and
/// non-occluded pixels `noc/flow_*.png`.
pub fn write_dataset(data: &SceneData, spec: &SceneSpec, window: usize, dir: &Path) -> Result<PathBuf> {
    for sub in ["", "gt/flow", "gt/mask", "gt/occ", "gt/fg", "gt/noc"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let frames = data.images.len();
    let mut entries = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut e = FrameEntry {
            image: format!("frame_{t:04}.png").into(),
            labels: format!("labels_{t:04}.png").into(),
            flow: None,
            gt_flow: None,
            gt_mask: Some(format!("gt/mask/mask_{t:04}.png").into()),
            occlusion: None,
        };
        write_image16(&data.images[t], &dir.join(&e.image))?;
        write_labels(&data.labels[t], &dir.join(&e.labels))?;
        write_mask(&data.gt_masks[t], &dir.join(e.gt_mask.as_ref().expect("set above")))?;
        if t + 1 < frames {
            let flow = PathBuf::from(format!("flow_{t:04}.flo"));
            let gt = PathBuf::from(format!("gt/flow/flow_{t:04}.flo"));
            let occ = PathBuf::from(format!("gt/occ/occ_{t:04}.png"));
            write_flo(&data.initial_flows[t], &dir.join(&flow))?;
            write_flo(&data.gt_flows[t], &dir.join(&gt))?;
            write_mask(&data.occlusions[t], &dir.join(&occ))?;
            write_mask(&data.gt_masks[t], &dir.join(format!("gt/fg/flow_{t:04}.png")))?;
            write_mask(&data.occlusions[t].complement(), &dir.join(format!("gt/noc/flow_{t:04}.png")))?;
            e.flow = Some(flow);
            e.gt_flow = Some(gt);
            e.occlusion = Some(occ);
        }
        entries.push(e);
    }
    let manifest = SequenceManifest {
        window,
        output: PathBuf::from("out"),
        seed: spec.seed,
        weights: WeightOverrides::default(),
        frames: entries,
    };
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    let scene = dir.join("scene.toml");
    std::fs::write(&scene, spec.to_toml()?).map_err(|e| Error::io(&scene, e))?;
    Ok(path)
}
