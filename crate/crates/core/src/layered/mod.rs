//! The localized two-layer model of one Thing.
//!
//! Layer 1 is the foreground Thing and is always in front; layer 0 is the
//! background. A pixel's own layer decides which flow it uses in the data and
//! time terms; the motion term regularizes both layer flows over the whole box.

mod affine;
mod energy;
mod flow;
mod optimize;
mod segment;
mod space;

use std::sync::OnceLock;

pub use affine::{fit_affine, fit_affine_field, AffineParams};
pub use energy::{
    data_energy, layer_energy, motion_energy, shared_multiplier, space_energy, time_energy, total_energy,
    EnergyBreakdown,
};
pub use flow::{update_flow, FlowUpdateStats};
pub use optimize::{affine_deviation, optimize_problem, optimize_thing, ThingResult};
pub use segment::{update_segmentation, SegmentationStats};
pub use space::{space_energy_exact, space_energy_fast, SpaceWeights};

use crate::error::{Error, Result};
use crate::penalty::RobustPenalty;
use crate::regions::{dilate_mask, erode_mask};
use crate::taxonomy::ClassId;
use crate::types::{FlowField, ImageBuf, Mask};
use crate::weights::EnergyWeights;

/// Foreground layer index.
pub const FG: usize = 1;
/// Background layer index.
pub const BG: usize = 0;

/// Solver and model settings that are not energy weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredConfig {
    pub rho_data: RobustPenalty,
    pub rho_smooth: RobustPenalty,
    pub rho_affine: RobustPenalty,
    pub space: SpaceWeights,
    /// Count the k-independent layer and space terms once instead of once per layer.
    pub count_shared_terms_once: bool,
    pub erosion_radius: usize,
    pub pyramid_levels: usize,
    pub warps: usize,
    pub sor_iterations: usize,
    pub sor_omega: f64,
    pub max_backtracks: usize,
    pub max_icm_sweeps: usize,
    pub max_outer_iterations: usize,
    pub relative_tolerance: f64,
    /// A layer whose refined flow leaves its affine model by more than 1 px on
    /// this fraction of its pixels marks the result as suspect.
    pub suspect_fraction: f64,
    /// Brightness residual above which a pixel counts as unexplained.
    pub unexplained_residual: f64,
    /// More unexplained pixels than this fraction also marks the result as suspect.
    pub suspect_unexplained_fraction: f64,
}

impl Default for LayeredConfig {
    fn default() -> Self {
        Self {
            rho_data: RobustPenalty::charbonnier(),
            rho_smooth: RobustPenalty::charbonnier(),
            rho_affine: RobustPenalty::quadratic(),
            space: SpaceWeights::default(),
            count_shared_terms_once: false,
            erosion_radius: crate::regions::DEFAULT_EROSION_RADIUS,
            pyramid_levels: 3,
            warps: 3,
            sor_iterations: 30,
            sor_omega: 1.8,
            max_backtracks: 8,
            max_icm_sweeps: 10,
            max_outer_iterations: 20,
            relative_tolerance: 1e-4,
            suspect_fraction: 0.25,
            unexplained_residual: 0.05,
            suspect_unexplained_fraction: 0.04,
        }
    }
}

/// Binary foreground labels for every box pixel of every frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerAssignment {
    width: usize,
    height: usize,
    frames: Vec<Vec<bool>>,
}

impl LayerAssignment {
    pub fn from_masks(masks: &[Mask]) -> Self {
        let (width, height) = masks.first().map(Mask::dims).unwrap_or((0, 0));
        Self {
            width,
            height,
            frames: masks.iter().map(|m| m.data().to_vec()).collect(),
        }
    }

    pub fn filled(width: usize, height: usize, frames: usize, fg: bool) -> Self {
        Self {
            width,
            height,
            frames: vec![vec![fg; width * height]; frames],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        &self.frames[t]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [bool] {
        &mut self.frames[t]
    }

    #[inline]
    pub fn is_fg(&self, t: usize, i: usize) -> bool {
        self.frames[t][i]
    }

    pub fn to_mask(&self, t: usize) -> Mask {
        Mask::from_vec(self.width, self.height, self.frames[t].clone()).expect("sizes agree")
    }
}

/// Dense per-layer flow in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFlow {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LayerFlow {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn from_affine(theta: &AffineParams, width: usize, height: usize) -> Self {
        let mut f = Self::zeros(width * height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = theta.eval(x as f64, y as f64);
                f.u[y * width + x] = u;
                f.v[y * width + x] = v;
            }
        }
        f
    }

    pub fn from_field(flow: &FlowField) -> Self {
        Self {
            u: flow.u.iter().map(|&x| x as f64).collect(),
            v: flow.v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn to_field(&self, width: usize, height: usize) -> FlowField {
        FlowField::from_parts(
            width,
            height,
            self.u.iter().map(|&x| x as f32).collect(),
            self.v.iter().map(|&x| x as f32).collect(),
            vec![true; width * height],
        )
        .expect("sizes agree")
    }
}

/// Operands of the layered energy inside one box.
#[derive(Debug, Clone)]
pub struct LayeredProblem {
    width: usize,
    height: usize,
    pub class: ClassId,
    pub images: Vec<ImageBuf>,
    pub(crate) gray: Vec<Vec<f64>>,
    pub(crate) colors: Vec<Vec<[f64; 3]>>,
    /// Initial flow per frame pair.
    pub init_flow: Vec<FlowField>,
    /// Semantic foreground mask per frame.
    pub semantic: Vec<Mask>,
    pub weights: EnergyWeights,
    pub config: LayeredConfig,
    /// Affine model per frame pair and layer.
    pub theta: Vec<[AffineParams; 2]>,
    /// Flow per frame pair and layer.
    pub flows: Vec<[LayerFlow; 2]>,
    pub assignment: LayerAssignment,
    pub(crate) space_sums: Vec<OnceLock<Vec<f64>>>,
}

impl LayeredProblem {
    /// Builds a problem with `g = ĝ`, layer flows equal to `û` and affine models fit to all valid pixels.
    pub fn new(
        images: Vec<ImageBuf>,
        init_flow: Vec<FlowField>,
        semantic: Vec<Mask>,
        class: ClassId,
        weights: EnergyWeights,
        config: LayeredConfig,
    ) -> Result<Self> {
        let t = images.len();
        if t < 2 || init_flow.len() != t - 1 || semantic.len() != t {
            return Err(Error::Degenerate(format!(
                "layered problem needs T >= 2 images, T-1 flows and T masks; got {}, {}, {}",
                t,
                init_flow.len(),
                semantic.len()
            )));
        }
        let dims = images[0].dims();
        for d in images
            .iter()
            .map(ImageBuf::dims)
            .chain(init_flow.iter().map(FlowField::dims))
            .chain(semantic.iter().map(Mask::dims))
        {
            if d != dims {
                return Err(Error::DimensionMismatch { expected: dims, got: d });
            }
        }
        weights.validate()?;
        let (width, height) = dims;
        let gray = images
            .iter()
            .map(|im| im.to_gray().data().iter().map(|&x| x as f64).collect())
            .collect();
        let colors = images.iter().map(space::colors_of).collect();
        let mut theta = Vec::with_capacity(t - 1);
        let mut flows = Vec::with_capacity(t - 1);
        for f in &init_flow {
            let all = Mask::from_vec(width, height, f.valid.clone()).expect("sizes agree");
            let th = fit_affine_field(f, &all).unwrap_or_default();
            let mut lf = LayerFlow::from_field(f);
            fill_invalid(&mut lf, f, &th, width);
            theta.push([th, th]);
            flows.push([lf.clone(), lf]);
        }
        let assignment = LayerAssignment::from_masks(&semantic);
        Ok(Self {
            width,
            height,
            class,
            images,
            gray,
            colors,
            init_flow,
            semantic,
            weights,
            config,
            theta,
            flows,
            assignment,
            space_sums: (0..t).map(|_| OnceLock::new()).collect(),
        })
    }

    /// Boundary-aware initialization: each layer takes `û` on its confident
    /// region (eroded ĝ for the foreground, complement of dilated ĝ for the
    /// background) and its affine model elsewhere.
    ///
    /// Fails when either confident region has fewer than 3 valid pixels in some pair.
    pub fn initialize_layers(&mut self) -> Result<()> {
        let r = self.config.erosion_radius;
        let (w, h) = (self.width, self.height);
        for t in 0..self.pairs() {
            let f = &self.init_flow[t];
            let valid = Mask::from_vec(w, h, f.valid.clone()).expect("sizes agree");
            let fg_fit = erode_mask(&self.semantic[t], r).and(&valid);
            let bg_fit = dilate_mask(&self.semantic[t], r).complement().and(&valid);
            for (k, fit_mask) in [(FG, fg_fit), (BG, bg_fit)] {
                if fit_mask.count() < 3 {
                    return Err(Error::Degenerate(format!(
                        "layer {k} of pair {t} has {} confident pixels",
                        fit_mask.count()
                    )));
                }
                let th = fit_affine_field(f, &fit_mask)?;
                let mut lf = LayerFlow::from_affine(&th, w, h);
                for (i, &m) in fit_mask.data().iter().enumerate() {
                    if m {
                        lf.u[i] = f.u[i] as f64;
                        lf.v[i] = f.v[i] as f64;
                    }
                }
                self.theta[t][k] = th;
                self.flows[t][k] = lf;
            }
        }
        self.assignment = LayerAssignment::from_masks(&self.semantic);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of frames `T`.
    pub fn frames(&self) -> usize {
        self.images.len()
    }

    /// Number of frame pairs `T - 1`.
    pub fn pairs(&self) -> usize {
        self.images.len() - 1
    }

    pub fn lambda_aff(&self, k: usize) -> f64 {
        if k == FG {
            self.weights.lambda_aff_for(self.class)
        } else {
            self.weights.lambda_aff
        }
    }

    pub(crate) fn uses_exact_space(&self) -> bool {
        self.len() <= self.config.space.exact_max_pixels
    }

    /// Per-pixel `Σ_{q≠p} w_pq` for frame `t`, cached.
    pub(crate) fn space_sums(&self, t: usize) -> &[f64] {
        self.space_sums[t].get_or_init(|| space::pair_sums(&self.colors[t], self.width, self.height, &self.config.space))
    }
}

fn fill_invalid(lf: &mut LayerFlow, f: &FlowField, th: &AffineParams, width: usize) {
    for (i, &ok) in f.valid.iter().enumerate() {
        if !ok {
            let (u, v) = th.eval((i % width) as f64, (i / width) as f64);
            lf.u[i] = u;
            lf.v[i] = v;
        }
    }
}
