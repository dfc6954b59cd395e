use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::{FlowField, Mask};

/// Six-parameter affine motion `u = a1 + a2 x + a3 y`, `v = a4 + a5 x + a6 y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineParams(pub [f64; 6]);

impl AffineParams {
    pub fn translation(u: f64, v: f64) -> Self {
        Self([u, 0.0, 0.0, v, 0.0, 0.0])
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.0;
        (a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Least-squares affine fit to the samples `(x, y, u, v)`.
///
/// A rank-deficient design (fewer than 3 samples, or all collinear) falls back
/// to the mean translation. No samples at all is an error.
pub fn fit_affine(samples: &[(f64, f64, f64, f64)]) -> Result<AffineParams> {
    if samples.is_empty() {
        return Err(Error::Degenerate("affine fit without samples".into()));
    }
    let n = samples.len() as f64;
    let (mut mx, mut my, mut mu, mut mv) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y, u, v) in samples {
        mx += x;
        my += y;
        mu += u;
        mv += v;
    }
    mx /= n;
    my /= n;
    mu /= n;
    mv /= n;
    let translation = AffineParams::translation(mu, mv);
    if samples.len() < 3 {
        return Ok(translation);
    }
    // Centered coordinates keep the normal equations well conditioned.
    let mut ata = Matrix3::zeros();
    let mut bu = Vector3::zeros();
    let mut bv = Vector3::zeros();
    for &(x, y, u, v) in samples {
        let r = Vector3::new(1.0, x - mx, y - my);
        ata += r * r.transpose();
        bu += r * u;
        bv += r * v;
    }
    let eig = ata.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 1e-10 * hi) {
        return Ok(translation);
    }
    let Some(inv) = ata.try_inverse() else {
        return Ok(translation);
    };
    let cu = inv * bu;
    let cv = inv * bv;
    let params = AffineParams([
        cu[0] - cu[1] * mx - cu[2] * my,
        cu[1],
        cu[2],
        cv[0] - cv[1] * mx - cv[2] * my,
        cv[1],
        cv[2],
    ]);
    if params.is_finite() {
        Ok(params)
    } else {
        Ok(translation)
    }
}

/// Fits the valid flow pixels selected by `mask`, in the field's pixel coordinates.
pub fn fit_affine_field(flow: &FlowField, mask: &Mask) -> Result<AffineParams> {
    if flow.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: flow.dims(),
            got: mask.dims(),
        });
    }
    let w = flow.width();
    let samples: Vec<_> = (0..flow.len())
        .filter(|&i| mask.data()[i] && flow.valid[i])
        .map(|i| ((i % w) as f64, (i / w) as f64, flow.u[i] as f64, flow.v[i] as f64))
        .collect();
    fit_affine(&samples)
}

pub(crate) fn fit_affine_dense(u: &[f64], v: &[f64], width: usize) -> AffineParams {
    let samples: Vec<_> = (0..u.len())
        .map(|i| ((i % width) as f64, (i / width) as f64, u[i], v[i]))
        .collect();
    fit_affine(&samples).unwrap_or_default()
}
