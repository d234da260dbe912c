//! Raw forward/backward kernels over flat NCHW buffers.
//!
//! Shapes are validated by the callers in `autodiff`; everything here assumes
//! consistent dimensions.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.c && self.groups == self.o
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds channels `[c0, c0 + cg)` of one image into a `(cg*k*k) x (ho*wo)` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, c0: usize, cg: usize, col: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let k = g.k;
    for ci in 0..cg {
        let plane = &x[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into image channels.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, c0: usize, cg: usize, dx: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let k = g.k;
    for ci in 0..cg {
        let plane = &mut dx[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let hw_out = ho * wo;
    let mut out = vec![T::zero(); g.n * g.o * hw_out];
    if g.is_depthwise() {
        depthwise_forward(x, w, g, &mut out);
    } else {
        let cg = g.c / g.groups;
        let og = g.o / g.groups;
        let kk = cg * g.k * g.k;
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw_out] };
        for n in 0..g.n {
            let xn = &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
            let on = &mut out[n * g.o * hw_out..(n + 1) * g.o * hw_out];
            for grp in 0..g.groups {
                let cols: &[T] = if g.is_pointwise() {
                    &xn[grp * cg * hw_out..(grp + 1) * cg * hw_out]
                } else {
                    im2col(xn, g, grp * cg, cg, &mut col);
                    &col
                };
                let wg = &w[grp * og * kk..(grp + 1) * og * kk];
                let og_out = &mut on[grp * og * hw_out..(grp + 1) * og * hw_out];
                T::gemm(
                    og,
                    kk,
                    hw_out,
                    T::one(),
                    wg,
                    kk as isize,
                    1,
                    cols,
                    hw_out as isize,
                    1,
                    T::zero(),
                    og_out,
                    hw_out as isize,
                    1,
                );
            }
        }
    }
    if let Some(b) = bias {
        for n in 0..g.n {
            for o in 0..g.o {
                let bo = b[o];
                out[(n * g.o + o) * hw_out..(n * g.o + o + 1) * hw_out]
                    .iter_mut()
                    .for_each(|v| *v += bo);
            }
        }
    }
    out
}

fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let k = g.k;
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
            let kw = &w[c * k * k..(c + 1) * k * k];
            let dst = &mut out[(n * g.c + c) * ho * wo..(n * g.c + c + 1) * ho * wo];
            for oy in 0..ho {
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for kx in 0..k {
                        let wv = kw[ky * k + kx];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d += wv * src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (ho, wo) = g.out_hw();
    let hw_out = ho * wo;
    let (want_dx, want_dw, want_db) = want;
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); w.len()]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); g.o];
        for n in 0..g.n {
            for (o, d) in db.iter_mut().enumerate() {
                *d += gout[(n * g.o + o) * hw_out..(n * g.o + o + 1) * hw_out].iter().copied().sum();
            }
        }
        db
    });

    if g.is_depthwise() {
        depthwise_backward(x, w, gout, g, dx.as_deref_mut(), dw.as_deref_mut());
        return ConvGrads { dx, dw, db };
    }

    let cg = g.c / g.groups;
    let og = g.o / g.groups;
    let kk = cg * g.k * g.k;
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kk * hw_out] };
    let mut dcol = if pointwise || !want_dx { Vec::new() } else { vec![T::zero(); kk * hw_out] };
    for n in 0..g.n {
        let xn = &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
        let gn = &gout[n * g.o * hw_out..(n + 1) * g.o * hw_out];
        for grp in 0..g.groups {
            let gg = &gn[grp * og * hw_out..(grp + 1) * og * hw_out];
            if let Some(dw) = dw.as_deref_mut() {
                let cols: &[T] = if pointwise {
                    &xn[grp * cg * hw_out..(grp + 1) * cg * hw_out]
                } else {
                    im2col(xn, g, grp * cg, cg, &mut col);
                    &col
                };
                // dW_g += gout_g * col^T
                T::gemm(
                    og,
                    hw_out,
                    kk,
                    T::one(),
                    gg,
                    hw_out as isize,
                    1,
                    cols,
                    1,
                    hw_out as isize,
                    T::one(),
                    &mut dw[grp * og * kk..(grp + 1) * og * kk],
                    kk as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                let wg = &w[grp * og * kk..(grp + 1) * og * kk];
                let dxn = &mut dx[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
                if pointwise {
                    // dx_g += W_g^T * gout_g, written straight into the image.
                    T::gemm(
                        kk,
                        og,
                        hw_out,
                        T::one(),
                        wg,
                        1,
                        kk as isize,
                        gg,
                        hw_out as isize,
                        1,
                        T::one(),
                        &mut dxn[grp * cg * hw_out..(grp + 1) * cg * hw_out],
                        hw_out as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        kk,
                        og,
                        hw_out,
                        T::one(),
                        wg,
                        1,
                        kk as isize,
                        gg,
                        hw_out as isize,
                        1,
                        T::zero(),
                        &mut dcol,
                        hw_out as isize,
                        1,
                    );
                    col2im(&dcol, g, grp * cg, cg, dxn);
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn depthwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (ho, wo) = g.out_hw();
    let k = g.k;
    for n in 0..g.n {
        for c in 0..g.c {
            let pbase = (n * g.c + c) * g.h * g.w;
            let plane = &x[pbase..pbase + g.h * g.w];
            let kw = &w[c * k * k..(c + 1) * k * k];
            let go = &gout[(n * g.c + c) * ho * wo..(n * g.c + c + 1) * ho * wo];
            for oy in 0..ho {
                let grow = &go[oy * wo..(oy + 1) * wo];
                for ky in 0..k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let roff = iy as usize * g.w;
                    for kx in 0..k {
                        let wv = kw[ky * k + kx];
                        let mut acc = T::zero();
                        for (ox, &gv) in grow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            acc += gv * plane[roff + ix];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[pbase + roff + ix] += gv * wv;
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[c * k * k + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Source index pair and weight for one output coordinate of an
/// align-corners-false bilinear resize.
#[derive(Clone, Copy)]
pub(crate) struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub frac: T,
}

pub(crate) fn resize_taps<T: Scalar>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            if input == output {
                return Tap { i0: o, i1: o, frac: T::zero() };
            }
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (num_traits::Float::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap { i0, i1, frac: T::from_f64(src - i0 as f64) }
        })
        .collect()
}

pub(crate) fn resize_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = resize_taps::<T>(h, oh);
    let tx = resize_taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.i0] + (r0[b.i1] - r0[b.i0]) * b.frac;
                let bot = r1[b.i0] + (r1[b.i1] - r1[b.i0]) * b.frac;
                dst[oy * ow + ox] = top + (bot - top) * a.frac;
            }
        }
    }
    out
}

pub(crate) fn resize_backward<T: Scalar>(
    gout: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = resize_taps::<T>(h, oh);
    let tx = resize_taps::<T>(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    let one = T::one();
    for p in 0..planes {
        let g = &gout[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let gv = g[oy * ow + ox];
                let top = gv * (one - a.frac);
                let bot = gv * a.frac;
                d[a.i0 * w + b.i0] += top * (one - b.frac);
                d[a.i0 * w + b.i1] += top * b.frac;
                d[a.i1 * w + b.i0] += bot * (one - b.frac);
                d[a.i1 * w + b.i1] += bot * b.frac;
            }
        }
    }
    dx
}

/// Mean over the in-bounds part of a `(2r+1)^2` window around each pixel.
pub(crate) fn box_filter<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, r: usize, adjoint: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let count = |y: usize, xx: usize| -> T {
        let ylo = y.saturating_sub(r);
        let yhi = (y + r).min(h - 1);
        let xlo = xx.saturating_sub(r);
        let xhi = (xx + r).min(w - 1);
        T::from_f64(((yhi - ylo + 1) * (xhi - xlo + 1)) as f64)
    };
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let ylo = y.saturating_sub(r);
            let yhi = (y + r).min(h - 1);
            for xx in 0..w {
                let xlo = xx.saturating_sub(r);
                let xhi = (xx + r).min(w - 1);
                if adjoint {
                    // Each output pixel spreads its value over its own window.
                    let v = src[y * w + xx] / count(y, xx);
                    for yy in ylo..=yhi {
                        for d in &mut dst[yy * w + xlo..=yy * w + xhi] {
                            *d += v;
                        }
                    }
                } else {
                    let mut acc = T::zero();
                    for yy in ylo..=yhi {
                        for &s in &src[yy * w + xlo..=yy * w + xhi] {
                            acc += s;
                        }
                    }
                    dst[y * w + xx] = acc / count(y, xx);
                }
            }
        }
    }
    out
}

/// 3x3/stride-2/pad-1 style max pooling; returns values and flat argmax indices.
pub(crate) fn max_pool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<usize>, (usize, usize)) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if x[i] > best || best_i == usize::MAX {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg, (oh, ow))
}

/// Bilinear sampling of `img` (`[n, c, h, w]`) at continuous pixel coordinates
/// `coords` (`[n, 2, oh, ow]`, x then y). Coordinates are clamped to the image
/// border; the integer-cornered grid puts pixel `(u, v)` at `(u, v)`.
pub(crate) fn grid_sample_forward<T: Scalar>(
    img: &[T],
    coords: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * oh * ow];
    let plane_out = oh * ow;
    for b in 0..n {
        let cx = &coords[(b * 2) * plane_out..(b * 2 + 1) * plane_out];
        let cy = &coords[(b * 2 + 1) * plane_out..(b * 2 + 2) * plane_out];
        for i in 0..plane_out {
            let s = sample_point(cx[i], cy[i], h, w);
            for ch in 0..c {
                let p = &img[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                out[(b * c + ch) * plane_out + i] = s.eval(p, w);
            }
        }
    }
    out
}

pub(crate) fn grid_sample_backward<T: Scalar>(
    img: &[T],
    coords: &[T],
    gout: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
    want: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let plane_out = oh * ow;
    let mut dimg = want.0.then(|| vec![T::zero(); img.len()]);
    let mut dcoord = want.1.then(|| vec![T::zero(); coords.len()]);
    let one = T::one();
    for b in 0..n {
        for i in 0..plane_out {
            let xv = coords[(b * 2) * plane_out + i];
            let yv = coords[(b * 2 + 1) * plane_out + i];
            let s = sample_point(xv, yv, h, w);
            let mut gx = T::zero();
            let mut gy = T::zero();
            for ch in 0..c {
                let g = gout[(b * c + ch) * plane_out + i];
                let pbase = (b * c + ch) * h * w;
                if let Some(d) = dimg.as_deref_mut() {
                    d[pbase + s.y0 * w + s.x0] += g * (one - s.fy) * (one - s.fx);
                    d[pbase + s.y0 * w + s.x1] += g * (one - s.fy) * s.fx;
                    d[pbase + s.y1 * w + s.x0] += g * s.fy * (one - s.fx);
                    d[pbase + s.y1 * w + s.x1] += g * s.fy * s.fx;
                }
                if dcoord.is_some() {
                    let p = &img[pbase..pbase + h * w];
                    let v00 = p[s.y0 * w + s.x0];
                    let v01 = p[s.y0 * w + s.x1];
                    let v10 = p[s.y1 * w + s.x0];
                    let v11 = p[s.y1 * w + s.x1];
                    if s.x_free {
                        gx += g * ((v01 - v00) * (one - s.fy) + (v11 - v10) * s.fy);
                    }
                    if s.y_free {
                        gy += g * ((v10 - v00) * (one - s.fx) + (v11 - v01) * s.fx);
                    }
                }
            }
            if let Some(d) = dcoord.as_deref_mut() {
                d[(b * 2) * plane_out + i] += gx;
                d[(b * 2 + 1) * plane_out + i] += gy;
            }
        }
    }
    (dimg, dcoord)
}

struct SamplePoint<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    x_free: bool,
    y_free: bool,
}

impl<T: Scalar> SamplePoint<T> {
    #[inline]
    fn eval(&self, p: &[T], w: usize) -> T {
        let top = p[self.y0 * w + self.x0] + (p[self.y0 * w + self.x1] - p[self.y0 * w + self.x0]) * self.fx;
        let bot = p[self.y1 * w + self.x0] + (p[self.y1 * w + self.x1] - p[self.y1 * w + self.x0]) * self.fx;
        top + (bot - top) * self.fy
    }
}

#[inline]
fn sample_point<T: Scalar>(x: T, y: T, h: usize, w: usize) -> SamplePoint<T> {
    let (x0, x1, fx, x_free) = axis_tap(x, w);
    let (y0, y1, fy, y_free) = axis_tap(y, h);
    SamplePoint { x0, x1, y0, y1, fx, fy, x_free, y_free }
}

#[inline]
fn axis_tap<T: Scalar>(v: T, size: usize) -> (usize, usize, T, bool) {
    let max = T::from_f64((size - 1) as f64);
    // NaN coordinates fall through to the clamped branch.
    let inside = v >= T::zero() && v <= max;
    let vc = if inside { v } else if v > max { max } else { T::zero() };
    let i0 = vc.floor().to_usize().unwrap_or(0).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, vc - T::from_f64(i0 as f64), inside)
}
