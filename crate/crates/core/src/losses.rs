//! Photometric reconstruction and model-driven smoothness objectives.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// SSIM weight in the photometric cost.
    pub alpha: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// `c` in `beta = exp(-c r / mean(r))`.
    pub md_constant: f64,
    /// Weight of the smoothness term in the total.
    pub lambda: f64,
    /// Side of the square SSIM averaging window (odd).
    pub ssim_window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.85, ssim_c1: 0.01 * 0.01, ssim_c2: 0.03 * 0.03, md_constant: 10.0, lambda: 0.001, ssim_window: 3 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!("SSIM window must be odd, got {}", self.ssim_window)));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>, what: &str) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb || sa.len() != 4 {
        return Err(shape_err!("{what}: expected two equal [N, C, H, W] tensors, got {:?} and {:?}", sa, sb));
    }
    Ok(())
}

/// Per-pixel, per-channel SSIM with window means.
pub fn ssim<'t, T: Scalar>(x: Var<'t, T>, y: Var<'t, T>, cfg: &LossConfig) -> Result<Var<'t, T>> {
    same_shape(&x, &y, "ssim")?;
    let r = cfg.ssim_window / 2;
    let c1 = T::from_f64(cfg.ssim_c1);
    let c2 = T::from_f64(cfg.ssim_c2);
    let two = T::from_f64(2.0);
    let mu_x = x.box_filter(r)?;
    let mu_y = y.box_filter(r)?;
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x.mul(&mu_y)?;
    let sigma_x = x.square().box_filter(r)?.sub(&mu_xx)?;
    let sigma_y = y.square().box_filter(r)?.sub(&mu_yy)?;
    let sigma_xy = x.mul(&y)?.box_filter(r)?.sub(&mu_xy)?;
    let num = mu_xy.scale(two).add_scalar(c1).mul(&sigma_xy.scale(two).add_scalar(c2))?;
    let den = mu_xx.add(&mu_yy)?.add_scalar(c1).mul(&sigma_x.add(&sigma_y)?.add_scalar(c2))?;
    num.div(&den)
}

/// Channel-averaged `|a - b|`, shape `[N, 1, H, W]`.
pub fn l1_residual<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape(&a, &b, "l1 residual")?;
    a.sub(&b)?.abs().mean_channels()
}

/// `alpha (1 - SSIM) / 2 + (1 - alpha) |I_t - I_s^w|`, channel-averaged.
pub fn photometric_rho<'t, T: Scalar>(target: Var<'t, T>, warped: Var<'t, T>, cfg: &LossConfig) -> Result<Var<'t, T>> {
    let l1 = target.sub(&warped)?.abs();
    let mut cost = l1.scale(T::from_f64(1.0 - cfg.alpha));
    if cfg.alpha != 0.0 {
        let s = ssim(target, warped, cfg)?;
        let dssim = s.scale(T::from_f64(-cfg.alpha / 2.0)).add_scalar(T::from_f64(cfg.alpha / 2.0));
        cost = dssim.add(&cost)?;
    }
    cost.mean_channels()
}

/// Added to costs of invalid samples so the minimum avoids them.
const INVALID_COST: f64 = 1e4;

/// Per-pixel minimum over sources, averaged over pixels valid in at least one source.
///
/// With `masks = None` every pixel is valid and the result is the plain mean.
pub fn min_reprojection<'t, T: Scalar>(costs: &[Var<'t, T>], masks: Option<&[Tensor<T>]>) -> Result<Var<'t, T>> {
    let first = *costs.first().ok_or_else(|| Error::Contract(String::from("min_reprojection needs at least one source")))?;
    let shape = first.shape();
    for c in costs {
        if c.shape() != shape {
            return Err(shape_err!("source costs differ in shape: {:?} vs {:?}", shape, c.shape()));
        }
    }
    let Some(masks) = masks else {
        let mut m = first;
        for c in &costs[1..] {
            m = m.minimum(c)?;
        }
        return Ok(m.mean());
    };
    if masks.len() != costs.len() {
        return Err(Error::Contract(format!("{} costs but {} masks", costs.len(), masks.len())));
    }
    let big = T::from_f64(INVALID_COST);
    let mut any = Tensor::zeros(&shape);
    let mut m: Option<Var<'t, T>> = None;
    for (c, mask) in costs.iter().zip(masks) {
        if mask.shape() != shape.as_slice() {
            return Err(shape_err!("mask {:?} does not match cost {:?}", mask.shape(), shape));
        }
        let penalty = mask.map(|v| if v > T::zero() { T::zero() } else { big });
        let penalised = c.add_const(&penalty)?;
        m = Some(match m {
            None => penalised,
            Some(prev) => prev.minimum(&penalised)?,
        });
        any = any.zip_map(mask, |a, b| if b > T::zero() { T::one() } else { a })?;
    }
    let count = any.sum();
    if count == T::zero() {
        return Err(Error::Contract(String::from("no pixel is valid in any source view")));
    }
    Ok(m.expect("non-empty").mul_const(&any)?.sum().scale(T::one() / count))
}

/// `|dx d*| exp(-|dx I|) + |dy d*| exp(-|dy I|)` with `d* = d / mean(d)` per image.
pub fn edge_aware_smoothness<'t, T: Scalar>(disparity: Var<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
    let (ds, is) = (disparity.shape(), image.shape());
    if ds.len() != 4 || is.len() != 4 || ds[1] != 1 || ds[0] != is[0] || ds[2..] != is[2..] {
        return Err(shape_err!("smoothness expects disparity [N,1,H,W] and image [N,C,H,W], got {:?} and {:?}", ds, is));
    }
    let mean = disparity.global_avg_pool()?.recip();
    let norm = disparity.mul_channel(&mean)?;
    let wx = image.diff_x()?.abs().mean_channels()?.scale(-T::one()).exp();
    let wy = image.diff_y()?.abs().mean_channels()?.scale(-T::one()).exp();
    let sx = norm.diff_x()?.abs().mul(&wx)?;
    let sy = norm.diff_y()?.abs().mul(&wy)?;
    sx.add(&sy)
}

/// `beta_i = exp(-c r_i / mean(r))` per image, from a non-negative residual `[N, 1, H, W]`.
///
/// The mean runs over valid pixels only; invalid pixels get `beta = 1`. An
/// image whose valid residuals are all zero gets `beta = 1` everywhere.
pub fn model_driven_weight<T: Scalar>(residual: &Tensor<T>, valid: Option<&Tensor<T>>, c: f64) -> Result<Tensor<T>> {
    let (n, _, _, _) = residual.dims4()?;
    if let Some(v) = valid {
        residual.expect_same_shape(v)?;
    }
    let per = residual.numel() / n.max(1);
    let c = T::from_f64(c);
    let mut out = Vec::with_capacity(residual.numel());
    for b in 0..n {
        let r = &residual.data()[b * per..(b + 1) * per];
        let ok = |i: usize| valid.is_none_or(|v| v.data()[b * per + i] > T::zero());
        let (mut sum, mut count) = (T::zero(), 0usize);
        for (i, &x) in r.iter().enumerate() {
            if ok(i) {
                sum += x;
                count += 1;
            }
        }
        let mean = if count > 0 { sum / T::from_f64(count as f64) } else { T::zero() };
        for (i, &x) in r.iter().enumerate() {
            out.push(if mean > T::zero() && ok(i) { (-c * x / mean).exp() } else { T::one() });
        }
    }
    Tensor::new(residual.shape(), out)
}

/// Mean of `beta * smoothness` over all pixels.
pub fn md_smoothness_loss<'t, T: Scalar>(disparity: Var<'t, T>, image: Var<'t, T>, beta: &Tensor<T>) -> Result<Var<'t, T>> {
    let sm = edge_aware_smoothness(disparity, image)?;
    Ok(sm.mul_const(beta)?.mean())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleLoss {
    /// Head stride of this scale.
    pub scale: usize,
    pub photometric: f64,
    pub smoothness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub photometric: f64,
    pub md_smoothness: f64,
    pub per_scale: Vec<ScaleLoss>,
}

/// Per-scale terms feeding [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct ScaleTerms<'t, T: Scalar> {
    pub scale: usize,
    pub photometric: Var<'t, T>,
    pub md_smoothness: Var<'t, T>,
}

/// `sum_l L_ph + lambda sum_l L_md` and its report.
pub fn total_loss<'t, T: Scalar>(terms: &[ScaleTerms<'t, T>], cfg: &LossConfig) -> Result<(Var<'t, T>, LossReport)> {
    let first = terms.first().ok_or_else(|| Error::Contract(String::from("total_loss needs at least one scale")))?;
    let mut per_scale = Vec::with_capacity(terms.len());
    let mut ph = first.photometric;
    let mut md = first.md_smoothness;
    for (i, t) in terms.iter().enumerate() {
        let p = t.photometric.value().item().ok_or_else(|| shape_err!("photometric term must be scalar"))?.as_f64();
        let s = t.md_smoothness.value().item().ok_or_else(|| shape_err!("smoothness term must be scalar"))?.as_f64();
        if !p.is_finite() || !s.is_finite() {
            return Err(Error::NonFinite(format!("non-finite loss at scale {} (photometric {p}, smoothness {s})", t.scale)));
        }
        per_scale.push(ScaleLoss { scale: t.scale, photometric: p, smoothness: s });
        if i > 0 {
            ph = ph.add(&t.photometric)?;
            md = md.add(&t.md_smoothness)?;
        }
    }
    let total = ph.add(&md.scale(T::from_f64(cfg.lambda)))?;
    let report = LossReport {
        total: total.value().data()[0].as_f64(),
        photometric: ph.value().data()[0].as_f64(),
        md_smoothness: md.value().data()[0].as_f64(),
        per_scale,
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("total loss is {}", report.total)));
    }
    Ok((total, report))
}
