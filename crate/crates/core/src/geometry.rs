//! Pinhole projection, bilinear inverse warping and disparity-to-depth.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pinhole intrinsics in pixels; pixel `(u, v)` sits at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::Config(format!("invalid intrinsics {self:?}: focal lengths must be positive and finite")));
        }
        Ok(())
    }

    /// Proportional rescale for an image resized by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Intrinsics { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy }
    }

    /// Intrinsics of the horizontally mirrored image of width `width`.
    pub fn flipped(&self, width: usize) -> Self {
        Intrinsics { cx: (width as f64 - 1.0) - self.cx, ..*self }
    }

    pub fn as_array<T: Scalar>(&self) -> [T; 4] {
        [T::from_f64(self.fx), T::from_f64(self.fy), T::from_f64(self.cx), T::from_f64(self.cy)]
    }
}

/// 4x4 homogeneous rigid transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub m: [f64; 16],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::from_rt([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], [0.0; 3])
    }

    pub fn from_rt(r: [f64; 9], t: [f64; 3]) -> Self {
        RigidTransform {
            m: [r[0], r[1], r[2], t[0], r[3], r[4], r[5], t[1], r[6], r[7], r[8], t[2], 0.0, 0.0, 0.0, 1.0],
        }
    }

    /// From the first three rows of the matrix (12 numbers, row-major).
    pub fn from_3x4(rows: &[f64; 12]) -> Self {
        let mut m = [0.0; 16];
        m[..12].copy_from_slice(rows);
        m[15] = 1.0;
        RigidTransform { m }
    }

    pub fn rotation(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[3], self.m[7], self.m[11]]
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[i * 4 + j] = (0..4).map(|k| self.m[i * 4 + k] * other.m[k * 4 + j]).sum();
            }
        }
        RigidTransform { m: out }
    }

    /// Closed-form inverse `[R^T | -R^T t]`, assuming an orthonormal rotation.
    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation();
        let t = self.translation();
        let rt = [r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]];
        let ti = [
            -(rt[0] * t[0] + rt[1] * t[1] + rt[2] * t[2]),
            -(rt[3] * t[0] + rt[4] * t[1] + rt[5] * t[2]),
            -(rt[6] * t[0] + rt[7] * t[1] + rt[8] * t[2]),
        ];
        RigidTransform::from_rt(rt, ti)
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    /// Largest deviation of `R^T R` from identity and of the bottom row from `(0,0,0,1)`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k * 3 + i] * r[k * 3 + j]).sum();
                err = err.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let bottom = [self.m[12], self.m[13], self.m[14], self.m[15] - 1.0];
        bottom.iter().fold(err, |e, v| e.max(v.abs()))
    }

    pub fn determinant(&self) -> f64 {
        let r = self.rotation();
        r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) + r[2] * (r[3] * r[7] - r[4] * r[6])
    }

    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        self.m.iter().zip(&other.m).fold(0.0, |e, (a, b)| e.max((a - b).abs()))
    }
}

/// Constants of `D = 1 / (a P + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthConstants {
    pub a: f64,
    pub b: f64,
}

impl Default for DepthConstants {
    fn default() -> Self {
        DepthConstants { a: 10.0, b: 0.01 }
    }
}

impl DepthConstants {
    pub fn depth(&self, disparity: f64) -> f64 {
        1.0 / (self.a * disparity + self.b)
    }
}

pub fn disp_to_depth<'t, T: Scalar>(disparity: Var<'t, T>, k: DepthConstants) -> Var<'t, T> {
    disparity.scale(T::from_f64(k.a)).add_scalar(T::from_f64(k.b)).recip()
}

/// Source-view pixel of target pixel `(u, v)` at depth `depth`, or `None`
/// when the point lands at non-positive source depth.
pub fn project_point(u: f64, v: f64, depth: f64, k: &Intrinsics, t: &RigidTransform) -> Option<(f64, f64)> {
    let p = [depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth];
    let q = t.transform_point(p);
    (q[2] > 0.0).then(|| (k.fx * q[0] / q[2] + k.cx, k.fy * q[1] / q[2] + k.cy))
}

/// Continuous source coordinates `[N, 2, H, W]` of every target pixel and the
/// validity mask `[N, 1, H, W]` (in front of the source camera and in frame).
///
/// `rotation` is `[N, 9]` row-major, `translation` is `[N, 3]`; `k` holds
/// one set of intrinsics for the whole batch or one per item.
pub fn project<'t, T: Scalar>(
    depth: Var<'t, T>,
    rotation: Var<'t, T>,
    translation: Var<'t, T>,
    k: &[Intrinsics],
) -> Result<(Var<'t, T>, Tensor<T>)> {
    let intr: Vec<[T; 4]> = k.iter().map(|k| k.as_array()).collect();
    depth.project(&rotation, &translation, &intr)
}

/// Bilinear sampling of `source` at `coords` with border clamping.
///
/// The returned mask marks samples whose coordinates lie inside the frame.
pub fn inverse_warp<'t, T: Scalar>(source: Var<'t, T>, coords: Var<'t, T>) -> Result<(Var<'t, T>, Tensor<T>)> {
    let warped = source.grid_sample(&coords)?;
    let c = coords.value();
    let (n, _, h, w) = c.dims4()?;
    let s = source.shape();
    let (xmax, ymax) = (T::from_f64((s[3] - 1) as f64), T::from_f64((s[2] - 1) as f64));
    let hw = h * w;
    let mut mask = alloc::vec![T::zero(); n * hw];
    for b in 0..n {
        for i in 0..hw {
            let x = c.data()[b * 2 * hw + i];
            let y = c.data()[b * 2 * hw + hw + i];
            if x >= T::zero() && x <= xmax && y >= T::zero() && y <= ymax {
                mask[b * hw + i] = T::one();
            }
        }
    }
    Ok((warped, Tensor::new(&[n, 1, h, w], mask)?))
}

/// Rotation matrices `[N, 9]` from axis-angle `[N, 3]`.
pub fn rotation_matrices<'t, T: Scalar>(axis_angle: Var<'t, T>) -> Result<Var<'t, T>> {
    axis_angle.axis_angle_to_matrix()
}
