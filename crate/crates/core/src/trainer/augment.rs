//! Flip and colour-jitter augmentation applied identically to a triplet.

use num_traits::Float;
use rand::Rng;

use super::Triplet;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ranges the jitter factors are drawn from.
pub const BRIGHTNESS: (f64, f64) = (0.8, 1.2);
pub const CONTRAST: (f64, f64) = (0.8, 1.2);
pub const SATURATION: (f64, f64) = (0.8, 1.2);
pub const HUE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Factor `f` rotates hue by `f - 1` turns.
    pub hue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub flip: bool,
    pub jitter: Option<ColorJitter>,
}

impl AugmentParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let flip = rng.random_bool(0.5);
        let jitter = rng.random_bool(0.5).then(|| ColorJitter {
            brightness: rng.random_range(BRIGHTNESS.0..=BRIGHTNESS.1),
            contrast: rng.random_range(CONTRAST.0..=CONTRAST.1),
            saturation: rng.random_range(SATURATION.0..=SATURATION.1),
            hue: rng.random_range(HUE.0..=HUE.1),
        });
        AugmentParams { flip, jitter }
    }

    pub fn apply<T: Scalar>(&self, t: &Triplet<T>) -> Result<Triplet<T>> {
        let frame = |x: &Tensor<T>| -> Result<Tensor<T>> {
            let mut x = if self.flip { flip_horizontal(x)? } else { x.clone() };
            if let Some(j) = &self.jitter {
                x = color_jitter(&x, j)?;
            }
            Ok(x)
        };
        let (_, _, w) = dims3(&t.target)?;
        Ok(Triplet {
            prev: frame(&t.prev)?,
            target: frame(&t.target)?,
            next: frame(&t.next)?,
            intrinsics: if self.flip { t.intrinsics.flipped(w) } else { t.intrinsics },
        })
    }
}

/// One flip decision and one jitter draw shared by all three frames.
pub fn augment<T: Scalar, R: Rng + ?Sized>(t: &Triplet<T>, rng: &mut R) -> Result<Triplet<T>> {
    AugmentParams::sample(rng).apply(t)
}

fn dims3<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(crate::shape_err!("expected a [C, H, W] frame, got {:?}", x.shape())),
    }
}

/// Mirrors a `[C, H, W]` frame left to right.
pub fn flip_horizontal<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, w) = dims3(x)?;
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(x.shape(), data)
}

fn gray(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, contrast, saturation then hue, clamping to `[0, 1]` after each.
pub fn color_jitter<T: Scalar>(x: &Tensor<T>, j: &ColorJitter) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(x)?;
    if c != 3 {
        return Err(crate::shape_err!("colour jitter needs 3 channels, got {}", c));
    }
    let hw = h * w;
    let mut px: alloc::vec::Vec<[f64; 3]> =
        (0..hw).map(|i| [x.data()[i].as_f64(), x.data()[hw + i].as_f64(), x.data()[2 * hw + i].as_f64()]).collect();
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    for p in px.iter_mut() {
        *p = p.map(|v| clamp(v * j.brightness));
    }
    let mean = px.iter().map(|p| gray(p[0], p[1], p[2])).sum::<f64>() / hw as f64;
    for p in px.iter_mut() {
        *p = p.map(|v| clamp((v - mean) * j.contrast + mean));
    }
    for p in px.iter_mut() {
        let g = gray(p[0], p[1], p[2]);
        *p = p.map(|v| clamp((v - g) * j.saturation + g));
    }
    let shift = j.hue - 1.0;
    if shift != 0.0 {
        for p in px.iter_mut() {
            let (hh, s, v) = rgb_to_hsv(*p);
            *p = hsv_to_rgb(wrap_unit(hh + shift), s, v).map(clamp);
        }
    }
    let mut data = alloc::vec![T::zero(); 3 * hw];
    for (i, p) in px.iter().enumerate() {
        for ch in 0..3 {
            data[ch * hw + i] = T::from_f64(p[ch]);
        }
    }
    Tensor::new(x.shape(), data)
}

/// Hue in turns `[0, 1)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        wrap_unit((g - b) / d / 6.0)
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn wrap_unit(x: f64) -> f64 {
    let w = x - Float::floor(x);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = wrap_unit(h) * 6.0;
    let sector = Float::floor(h6) as i64;
    let f = h6 - Float::floor(h6);
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
