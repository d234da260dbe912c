//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Inputs are
//! always recorded before the nodes that consume them, so replaying the node
//! list backwards is a valid topological order. Each tape supports exactly
//! one [`Tape::backward`] call.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::fmt;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;

type NodeId = usize;

enum Op<T> {
    Leaf,
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Resize { x: NodeId, from: (usize, usize) },
    NearestUp2 { x: NodeId },
    Relu { x: NodeId },
    Relu6 { x: NodeId },
    Sigmoid { x: NodeId },
    Exp { x: NodeId },
    Abs { x: NodeId },
    Recip { x: NodeId },
    Square { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    Min { a: NodeId, b: NodeId },
    Scale { x: NodeId, k: T },
    Offset { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    Concat { a: NodeId, b: NodeId, ca: usize },
    Narrow { x: NodeId, start: usize },
    GlobalAvgPool { x: NodeId },
    MeanChannels { x: NodeId },
    MulChannel { x: NodeId, s: NodeId },
    BoxFilter { x: NodeId, radius: usize },
    DiffX { x: NodeId },
    DiffY { x: NodeId },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Reshape { x: NodeId },
    AxisAngle { v: NodeId },
    Project { depth: NodeId, rot: NodeId, trans: NodeId, intr: Vec<[T; 4]>, active: Vec<bool> },
    GridSample { img: NodeId, coords: NodeId },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a computation.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the root.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), consumed: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf that receives a gradient.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    fn value(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar `root`.
    ///
    /// Fails when `root` is not a single element or when this tape has
    /// already been differentiated.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        if !core::ptr::eq(root.tape, self) {
            return Err(Error::Contract(String::from("root belongs to a different tape")));
        }
        if self.consumed.replace(true) {
            return Err(Error::Contract(String::from("backward already ran on this tape")));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let root_shape = nodes[root.id].value.shape().to_vec();
        grads[root.id] = Some(Tensor::ones(&root_shape));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].as_ref() else { continue };
            for (input, gin) in backward_op(&nodes, id, g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gin),
                    slot @ None => *slot = Some(gin),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn elementwise<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    x.map(f)
}

fn gmul<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    // Shapes are identical by construction of the recording ops.
    g.zip_map(x, f).expect("gradient shape")
}

fn backward_op<T: Scalar>(nodes: &[Node<T>], id: NodeId, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
    let node = &nodes[id];
    let val = |i: NodeId| -> &Tensor<T> { &nodes[i].value };
    let needs = |i: NodeId| nodes[i].requires_grad;
    let zero = T::zero();
    let one = T::one();
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Conv { x, w, b, geom } => {
            let grads = kernels::conv2d_backward(
                val(*x).data(),
                val(*w).data(),
                g.data(),
                geom,
                (needs(*x), needs(*w), b.is_some_and(needs)),
            );
            let mut out = Vec::new();
            if let Some(dx) = grads.dx {
                out.push((*x, Tensor::new(val(*x).shape(), dx).unwrap()));
            }
            if let Some(dw) = grads.dw {
                out.push((*w, Tensor::new(val(*w).shape(), dw).unwrap()));
            }
            if let (Some(b), Some(db)) = (b, grads.db) {
                out.push((*b, Tensor::new(val(*b).shape(), db).unwrap()));
            }
            out
        }
        Op::Linear { x, w, b } => {
            let xv = val(*x);
            let wv = val(*w);
            let (n, i) = (xv.shape()[0], xv.shape()[1]);
            let o = wv.shape()[0];
            let mut out = Vec::new();
            if needs(*x) {
                let mut dx = vec![zero; n * i];
                T::gemm(n, o, i, one, g.data(), o as isize, 1, wv.data(), i as isize, 1, zero, &mut dx, i as isize, 1);
                out.push((*x, Tensor::new(xv.shape(), dx).unwrap()));
            }
            if needs(*w) {
                let mut dw = vec![zero; o * i];
                T::gemm(o, n, i, one, g.data(), 1, o as isize, xv.data(), i as isize, 1, zero, &mut dw, i as isize, 1);
                out.push((*w, Tensor::new(wv.shape(), dw).unwrap()));
            }
            if let Some(b) = b.filter(|b| needs(*b)) {
                let mut db = vec![zero; o];
                for row in g.data().chunks(o) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                out.push((b, Tensor::new(val(b).shape(), db).unwrap()));
            }
            out
        }
        Op::Resize { x, from } => {
            let s = g.shape();
            let planes = s[0] * s[1];
            let dx = kernels::resize_backward(g.data(), planes, *from, (s[2], s[3]));
            vec![(*x, Tensor::new(val(*x).shape(), dx).unwrap())]
        }
        Op::NearestUp2 { x } => {
            let xs = val(*x).shape();
            let (h, w) = (xs[2], xs[3]);
            let mut dx = vec![zero; val(*x).numel()];
            for p in 0..xs[0] * xs[1] {
                let gp = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dx[p * h * w + (y / 2) * w + xx / 2] += gp[y * 2 * w + xx];
                    }
                }
            }
            vec![(*x, Tensor::new(xs, dx).unwrap())]
        }
        Op::Relu { x } => vec![(*x, gmul(g, val(*x), |gv, xv| if xv > zero { gv } else { zero }))],
        Op::Relu6 { x } => {
            let six = T::from_f64(6.0);
            vec![(*x, gmul(g, val(*x), |gv, xv| if xv > zero && xv < six { gv } else { zero }))]
        }
        Op::Sigmoid { x } => vec![(*x, gmul(g, &node.value, |gv, y| gv * y * (one - y)))],
        Op::Exp { x } => vec![(*x, gmul(g, &node.value, |gv, y| gv * y))],
        Op::Abs { x } => vec![(*x, gmul(g, val(*x), |gv, xv| if xv > zero { gv } else if xv < zero { -gv } else { zero }))],
        Op::Recip { x } => vec![(*x, gmul(g, &node.value, |gv, y| -gv * y * y))],
        Op::Square { x } => vec![(*x, gmul(g, val(*x), |gv, xv| gv * (xv + xv)))],
        Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub { a, b } => vec![(*a, g.clone()), (*b, elementwise(g, |v| -v))],
        Op::Mul { a, b } => {
            let mut out = Vec::new();
            if needs(*a) {
                out.push((*a, gmul(g, val(*b), |gv, bv| gv * bv)));
            }
            if needs(*b) {
                out.push((*b, gmul(g, val(*a), |gv, av| gv * av)));
            }
            out
        }
        Op::Div { a, b } => {
            let mut out = Vec::new();
            if needs(*a) {
                out.push((*a, gmul(g, val(*b), |gv, bv| gv / bv)));
            }
            if needs(*b) {
                // d(a/b)/db = -(a/b)/b
                let q = gmul(&node.value, val(*b), |y, bv| y / bv);
                out.push((*b, gmul(g, &q, |gv, qv| -gv * qv)));
            }
            out
        }
        Op::Min { a, b } => {
            let av = val(*a);
            let bv = val(*b);
            let mut ga = Vec::with_capacity(g.numel());
            let mut gb = Vec::with_capacity(g.numel());
            for ((&gv, &x), &y) in g.data().iter().zip(av.data()).zip(bv.data()) {
                if x <= y {
                    ga.push(gv);
                    gb.push(zero);
                } else {
                    ga.push(zero);
                    gb.push(gv);
                }
            }
            vec![(*a, Tensor::new(av.shape(), ga).unwrap()), (*b, Tensor::new(bv.shape(), gb).unwrap())]
        }
        Op::Scale { x, k } => {
            let k = *k;
            vec![(*x, elementwise(g, |v| v * k))]
        }
        Op::Offset { x } => vec![(*x, g.clone())],
        Op::Sum { x } => {
            let gv = g.data()[0];
            vec![(*x, Tensor::full(val(*x).shape(), gv))]
        }
        Op::Mean { x } => {
            let n = T::from_f64(val(*x).numel() as f64);
            vec![(*x, Tensor::full(val(*x).shape(), g.data()[0] / n))]
        }
        Op::Concat { a, b, ca } => {
            let cb = g.shape()[1] - ca;
            vec![(*a, g.narrow_channels(0, *ca).unwrap()), (*b, g.narrow_channels(*ca, cb).unwrap())]
        }
        Op::Narrow { x, start } => {
            let xs = val(*x).shape();
            let outer = xs[0];
            let c = xs[1];
            let len = g.shape()[1];
            let inner: usize = xs[2..].iter().product();
            let mut dx = vec![zero; val(*x).numel()];
            for n in 0..outer {
                let dst = &mut dx[(n * c + start) * inner..(n * c + start + len) * inner];
                dst.copy_from_slice(&g.data()[n * len * inner..(n + 1) * len * inner]);
            }
            vec![(*x, Tensor::new(xs, dx).unwrap())]
        }
        Op::GlobalAvgPool { x } => {
            let xs = val(*x).shape();
            let hw = xs[2] * xs[3];
            let inv = one / T::from_f64(hw as f64);
            let mut dx = Vec::with_capacity(val(*x).numel());
            for &gv in g.data() {
                dx.extend(core::iter::repeat_n(gv * inv, hw));
            }
            vec![(*x, Tensor::new(xs, dx).unwrap())]
        }
        Op::MeanChannels { x } => {
            let xs = val(*x).shape();
            let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
            let inv = one / T::from_f64(c as f64);
            let mut dx = vec![zero; n * c * hw];
            for b in 0..n {
                let gp = &g.data()[b * hw..(b + 1) * hw];
                for ch in 0..c {
                    for (d, &gv) in dx[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter_mut().zip(gp) {
                        *d = gv * inv;
                    }
                }
            }
            vec![(*x, Tensor::new(xs, dx).unwrap())]
        }
        Op::MulChannel { x, s } => {
            let xv = val(*x);
            let sv = val(*s);
            let inner: usize = xv.shape()[2..].iter().product();
            let mut out = Vec::new();
            if needs(*x) {
                let mut dx = g.data().to_vec();
                for (chunk, &sc) in dx.chunks_mut(inner).zip(sv.data()) {
                    chunk.iter_mut().for_each(|v| *v *= sc);
                }
                out.push((*x, Tensor::new(xv.shape(), dx).unwrap()));
            }
            if needs(*s) {
                let ds: Vec<T> = g
                    .data()
                    .chunks(inner)
                    .zip(xv.data().chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                    .collect();
                out.push((*s, Tensor::new(sv.shape(), ds).unwrap()));
            }
            out
        }
        Op::BoxFilter { x, radius } => {
            let s = g.shape();
            let dx = kernels::box_filter(g.data(), s[0] * s[1], s[2], s[3], *radius, true);
            vec![(*x, Tensor::new(s, dx).unwrap())]
        }
        Op::DiffX { x } => {
            let s = g.shape();
            let w = s[3];
            let mut dx = vec![zero; g.numel()];
            for (row_g, row_d) in g.data().chunks(w).zip(dx.chunks_mut(w)) {
                // y[i] = x[i+1] - x[i] for i < w-1
                for i in 0..w.saturating_sub(1) {
                    row_d[i + 1] += row_g[i];
                    row_d[i] -= row_g[i];
                }
            }
            vec![(*x, Tensor::new(s, dx).unwrap())]
        }
        Op::DiffY { x } => {
            let s = g.shape();
            let (h, w) = (s[2], s[3]);
            let mut dx = vec![zero; g.numel()];
            for p in 0..s[0] * s[1] {
                let gp = &g.data()[p * h * w..(p + 1) * h * w];
                let dp = &mut dx[p * h * w..(p + 1) * h * w];
                for y in 0..h.saturating_sub(1) {
                    for xx in 0..w {
                        dp[(y + 1) * w + xx] += gp[y * w + xx];
                        dp[y * w + xx] -= gp[y * w + xx];
                    }
                }
            }
            vec![(*x, Tensor::new(s, dx).unwrap())]
        }
        Op::MaxPool { x, argmax } => {
            let mut dx = vec![zero; val(*x).numel()];
            for (&i, &gv) in argmax.iter().zip(g.data()) {
                dx[i] += gv;
            }
            vec![(*x, Tensor::new(val(*x).shape(), dx).unwrap())]
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
            let xs = val(*x).shape();
            let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
            let gam = val(*gamma).data();
            let m = T::from_f64((n * hw) as f64);
            let mut sum_g = vec![zero; c];
            let mut sum_gx = vec![zero; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        sum_g[ch] += g.data()[i];
                        sum_gx[ch] += g.data()[i] * xhat[i];
                    }
                }
            }
            let mut out = Vec::new();
            if needs(*x) {
                let mut dx = vec![zero; n * c * hw];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let k = gam[ch] * inv_std[ch];
                        for i in off..off + hw {
                            dx[i] = if *batch_stats {
                                k * (g.data()[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                            } else {
                                k * g.data()[i]
                            };
                        }
                    }
                }
                out.push((*x, Tensor::new(xs, dx).unwrap()));
            }
            if needs(*gamma) {
                out.push((*gamma, Tensor::new(&[c], sum_gx).unwrap()));
            }
            if needs(*beta) {
                out.push((*beta, Tensor::new(&[c], sum_g).unwrap()));
            }
            out
        }
        Op::Reshape { x } => vec![(*x, g.clone().reshape(val(*x).shape()).unwrap())],
        Op::AxisAngle { v } => {
            let vv = val(*v);
            let n = vv.shape()[0];
            let mut dv = vec![zero; n * 3];
            for b in 0..n {
                let axis = [vv.data()[3 * b], vv.data()[3 * b + 1], vv.data()[3 * b + 2]];
                let jac = rodrigues_jacobian(axis);
                let gb = &g.data()[9 * b..9 * b + 9];
                for (i, col) in jac.iter().enumerate() {
                    dv[3 * b + i] = col.iter().zip(gb).map(|(&a, &b)| a * b).sum();
                }
            }
            vec![(*v, Tensor::new(vv.shape(), dv).unwrap())]
        }
        Op::Project { depth, rot, trans, intr, active } => {
            project_backward(val(*depth), val(*rot), val(*trans), g, intr, active, (*depth, *rot, *trans), &needs)
        }
        Op::GridSample { img, coords } => {
            let iv = val(*img);
            let cv = val(*coords);
            let dims = iv.dims4().unwrap();
            let cs = cv.shape();
            let (di, dc) = kernels::grid_sample_backward(
                iv.data(),
                cv.data(),
                g.data(),
                dims,
                (cs[2], cs[3]),
                (needs(*img), needs(*coords)),
            );
            let mut out = Vec::new();
            if let Some(di) = di {
                out.push((*img, Tensor::new(iv.shape(), di).unwrap()));
            }
            if let Some(dc) = dc {
                out.push((*coords, Tensor::new(cs, dc).unwrap()));
            }
            out
        }
    }
}

/// Rotation matrix (row-major) of an axis-angle vector via Rodrigues' formula.
pub fn rodrigues<T: Scalar>(v: [T; 3]) -> [T; 9] {
    let theta2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let theta = theta2.sqrt();
    let k = skew(v);
    let k2 = mat_mul(&k, &k);
    let (a, b) = if theta < T::from_f64(1e-6) {
        (T::one() - theta2 / T::from_f64(6.0), T::from_f64(0.5) - theta2 / T::from_f64(24.0))
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    let mut r = [T::zero(); 9];
    for i in 0..9 {
        let id = if i % 4 == 0 { T::one() } else { T::zero() };
        r[i] = id + a * k[i] + b * k2[i];
    }
    r
}

/// `d R / d v_i` for each axis-angle component, each a row-major 3x3 matrix.
pub fn rodrigues_jacobian<T: Scalar>(v: [T; 3]) -> [[T; 9]; 3] {
    let theta2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let mut out = [[T::zero(); 9]; 3];
    let kv = skew(v);
    if theta2.sqrt() < T::from_f64(1e-4) {
        // Series: R = I + [v] + [v]^2/2 + O(|v|^3).
        let half = T::from_f64(0.5);
        for (i, slot) in out.iter_mut().enumerate() {
            let mut e = [T::zero(); 3];
            e[i] = T::one();
            let ke = skew(e);
            let a = mat_mul(&ke, &kv);
            let b = mat_mul(&kv, &ke);
            for j in 0..9 {
                slot[j] = ke[j] + half * (a[j] + b[j]);
            }
        }
        return out;
    }
    // Gallego & Yezzi: dR/dv_i = (v_i [v] + [v x (I - R) e_i]) R / |v|^2
    let r = rodrigues(v);
    for (i, slot) in out.iter_mut().enumerate() {
        // (I - R) e_i is column i of (I - R).
        let col = [
            (if i == 0 { T::one() } else { T::zero() }) - r[i],
            (if i == 1 { T::one() } else { T::zero() }) - r[3 + i],
            (if i == 2 { T::one() } else { T::zero() }) - r[6 + i],
        ];
        let cr = cross(v, col);
        let kc = skew(cr);
        let mut m = [T::zero(); 9];
        for j in 0..9 {
            m[j] = v[i] * kv[j] + kc[j];
        }
        let mr = mat_mul(&m, &r);
        for j in 0..9 {
            slot[j] = mr[j] / theta2;
        }
    }
    out
}

fn skew<T: Scalar>(v: [T; 3]) -> [T; 9] {
    let z = T::zero();
    [z, -v[2], v[1], v[2], z, -v[0], -v[1], v[0], z]
}

fn cross<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn mat_mul<T: Scalar>(a: &[T; 9], b: &[T; 9]) -> [T; 9] {
    let mut out = [T::zero(); 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

/// Source depth below which a projected point counts as behind the camera.
const MIN_SOURCE_DEPTH: f64 = 1e-3;

#[allow(clippy::type_complexity)]
fn project_forward<T: Scalar>(
    depth: &Tensor<T>,
    rot: &Tensor<T>,
    trans: &Tensor<T>,
    intr: &[[T; 4]],
) -> (Vec<T>, Vec<T>, Vec<bool>) {
    let s = depth.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let hw = h * w;
    let mut coords = vec![T::zero(); n * 2 * hw];
    let mut mask = vec![T::zero(); n * hw];
    let mut active = vec![false; n * hw];
    let one = T::one();
    let min_z = T::from_f64(MIN_SOURCE_DEPTH);
    let (wmax, hmax) = (T::from_f64((w - 1) as f64), T::from_f64((h - 1) as f64));
    for b in 0..n {
        let [fx, fy, cx, cy] = intr[if intr.len() == 1 { 0 } else { b }];
        let r = &rot.data()[9 * b..9 * b + 9];
        let t = &trans.data()[3 * b..3 * b + 3];
        // R - I keeps the identity transform bit-exact.
        let d = [r[0] - one, r[1], r[2], r[3], r[4] - one, r[5], r[6], r[7], r[8] - one];
        for v in 0..h {
            let vf = T::from_f64(v as f64);
            let yn = (vf - cy) / fy;
            for u in 0..w {
                let uf = T::from_f64(u as f64);
                let xn = (uf - cx) / fx;
                let i = b * hw + v * w + u;
                let z = depth.data()[i];
                let p = [z * xn, z * yn, z];
                let q0 = p[0] + (d[0] * p[0] + d[1] * p[1] + d[2] * p[2] + t[0]);
                let q1 = p[1] + (d[3] * p[0] + d[4] * p[1] + d[5] * p[2] + t[1]);
                let q2 = p[2] + (d[6] * p[0] + d[7] * p[1] + d[8] * p[2] + t[2]);
                let (x, y) = if q2 > min_z {
                    active[i] = true;
                    (uf + fx * (q0 / q2 - p[0] / p[2]), vf + fy * (q1 / q2 - p[1] / p[2]))
                } else {
                    (uf, vf)
                };
                coords[(b * 2) * hw + v * w + u] = x;
                coords[(b * 2 + 1) * hw + v * w + u] = y;
                let inside = x >= T::zero() && x <= wmax && y >= T::zero() && y <= hmax;
                if active[i] && inside {
                    mask[i] = one;
                }
            }
        }
    }
    (coords, mask, active)
}

#[allow(clippy::too_many_arguments)]
fn project_backward<T: Scalar>(
    depth: &Tensor<T>,
    rot: &Tensor<T>,
    trans: &Tensor<T>,
    g: &Tensor<T>,
    intr: &[[T; 4]],
    active: &[bool],
    (depth_id, rot_id, trans_id): (NodeId, NodeId, NodeId),
    needs: &dyn Fn(NodeId) -> bool,
) -> Vec<(NodeId, Tensor<T>)> {
    let s = depth.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let hw = h * w;
    let mut dd = vec![T::zero(); n * hw];
    let mut dr = vec![T::zero(); n * 9];
    let mut dt = vec![T::zero(); n * 3];
    for b in 0..n {
        let [fx, fy, cx, cy] = intr[if intr.len() == 1 { 0 } else { b }];
        let r = &rot.data()[9 * b..9 * b + 9];
        let t = &trans.data()[3 * b..3 * b + 3];
        for v in 0..h {
            let yn = (T::from_f64(v as f64) - cy) / fy;
            for u in 0..w {
                let i = b * hw + v * w + u;
                if !active[i] {
                    continue;
                }
                let xn = (T::from_f64(u as f64) - cx) / fx;
                let z = depth.data()[i];
                let a = [xn, yn, T::one()];
                let p = [z * xn, z * yn, z];
                let ra = [
                    r[0] * a[0] + r[1] * a[1] + r[2] * a[2],
                    r[3] * a[0] + r[4] * a[1] + r[5] * a[2],
                    r[6] * a[0] + r[7] * a[1] + r[8] * a[2],
                ];
                let q0 = z * ra[0] + t[0];
                let q1 = z * ra[1] + t[1];
                let q2 = z * ra[2] + t[2];
                let gx = g.data()[(b * 2) * hw + v * w + u];
                let gy = g.data()[(b * 2 + 1) * hw + v * w + u];
                let inv = T::one() / q2;
                let gq = [gx * fx * inv, gy * fy * inv, -(gx * fx * q0 + gy * fy * q1) * inv * inv];
                dd[i] = gq[0] * ra[0] + gq[1] * ra[1] + gq[2] * ra[2];
                for row in 0..3 {
                    for col in 0..3 {
                        dr[9 * b + row * 3 + col] += gq[row] * p[col];
                    }
                    dt[3 * b + row] += gq[row];
                }
            }
        }
    }
    let mut out = Vec::new();
    if needs(depth_id) {
        out.push((depth_id, Tensor::new(s, dd).unwrap()));
    }
    if needs(rot_id) {
        out.push((rot_id, Tensor::new(rot.shape(), dr).unwrap()));
    }
    if needs(trans_id) {
        out.push((trans_id, Tensor::new(&[n, 3], dt).unwrap()));
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> alloc::vec::Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if core::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(String::from("variables belong to different tapes")))
        }
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let out = self.value().map(f);
        self.tape.push(out, op, &[self.id])
    }

    fn binary(&self, other: &Var<'t, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let out = self.value().zip_map(&other.value(), f)?;
        Ok(self.tape.push(out, op, &[self.id, other.id]))
    }

    /// 2-D convolution with zero padding. `w` is `[O, C/groups, k, k]`.
    pub fn conv2d(
        &self,
        w: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(w)?;
        let xv = self.value();
        let wv = w.value();
        let (n, c, h, wd) = xv.dims4()?;
        let (o, ci, k, k2) = wv.dims4()?;
        if stride == 0 || groups == 0 {
            return Err(Error::Contract(String::from("conv2d stride and groups must be >= 1")));
        }
        if k != k2 || c % groups != 0 || o % groups != 0 || ci * groups != c {
            return Err(shape_err!(
                "conv2d input {:?} incompatible with weight {:?} (groups {})",
                xv.shape(),
                wv.shape(),
                groups
            ));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(shape_err!("conv2d kernel {} larger than padded input {:?}", k, xv.shape()));
        }
        let bv = match bias {
            Some(b) => {
                self.same_tape(b)?;
                let bv = b.value();
                if bv.shape() != [o] {
                    return Err(shape_err!("conv2d bias {:?} does not match {} outputs", bv.shape(), o));
                }
                Some(bv)
            }
            None => None,
        };
        let geom = ConvGeom { n, c, h, w: wd, o, k, stride, pad: padding, groups };
        let (ho, wo) = geom.out_hw();
        let data = kernels::conv2d_forward(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), &geom);
        let out = Tensor::new(&[n, o, ho, wo], data)?;
        let mut inputs = vec![self.id, w.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        Ok(self.tape.push(out, Op::Conv { x: self.id, w: w.id, b: bias.map(|b| b.id), geom }, &inputs))
    }

    /// `x W^T + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&self, w: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(w)?;
        let xv = self.value();
        let wv = w.value();
        let (n, i) = xv.dims2()?;
        let (o, wi) = wv.dims2()?;
        if wi != i {
            return Err(shape_err!("linear input {:?} incompatible with weight {:?}", xv.shape(), wv.shape()));
        }
        let mut data = vec![T::zero(); n * o];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [o] {
                return Err(shape_err!("linear bias {:?} does not match {} outputs", bv.shape(), o));
            }
            for row in data.chunks_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        T::gemm(n, i, o, T::one(), xv.data(), i as isize, 1, wv.data(), 1, i as isize, T::one(), &mut data, o as isize, 1);
        let out = Tensor::new(&[n, o], data)?;
        let mut inputs = vec![self.id, w.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        Ok(self.tape.push(out, Op::Linear { x: self.id, w: w.id, b: bias.map(|b| b.id) }, &inputs))
    }

    /// Bilinear resize with align-corners-false sampling.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(shape_err!("resize target must be at least 1x1, got {}x{}", out_h, out_w));
        }
        let data = kernels::resize_forward(xv.data(), n * c, (h, w), (out_h, out_w));
        let out = Tensor::new(&[n, c, out_h, out_w], data)?;
        Ok(self.tape.push(out, Op::Resize { x: self.id, from: (h, w) }, &[self.id]))
    }

    pub fn nearest_upsample2x(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let mut data = Vec::with_capacity(xv.numel() * 4);
        for p in 0..n * c {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            for y in 0..2 * h {
                let row = &src[(y / 2) * w..(y / 2 + 1) * w];
                for xx in 0..2 * w {
                    data.push(row[xx / 2]);
                }
            }
        }
        let out = Tensor::new(&[n, c, 2 * h, 2 * w], data)?;
        Ok(self.tape.push(out, Op::NearestUp2 { x: self.id }, &[self.id]))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(Op::Relu { x: self.id }, |v| if v < T::zero() { T::zero() } else { v })
    }

    pub fn relu6(&self) -> Var<'t, T> {
        let six = T::from_f64(6.0);
        self.unary(Op::Relu6 { x: self.id }, move |v| {
            if v < T::zero() {
                T::zero()
            } else if v > six {
                six
            } else {
                v
            }
        })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Op::Sigmoid { x: self.id }, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(Op::Exp { x: self.id }, |v| v.exp())
    }

    pub fn abs(&self) -> Var<'t, T> {
        self.unary(Op::Abs { x: self.id }, |v| v.abs())
    }

    pub fn recip(&self) -> Var<'t, T> {
        self.unary(Op::Recip { x: self.id }, |v| T::one() / v)
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary(Op::Square { x: self.id }, |v| v * v)
    }

    pub fn scale(&self, k: T) -> Var<'t, T> {
        self.unary(Op::Scale { x: self.id, k }, |v| v * k)
    }

    pub fn add_scalar(&self, k: T) -> Var<'t, T> {
        self.unary(Op::Offset { x: self.id }, |v| v + k)
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Add { a: self.id, b: other.id }, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Sub { a: self.id, b: other.id }, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Mul { a: self.id, b: other.id }, |a, b| a * b)
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Div { a: self.id, b: other.id }, |a, b| a / b)
    }

    /// Elementwise minimum; ties select `self`, which also receives the gradient.
    pub fn minimum(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Min { a: self.id, b: other.id }, |a, b| if a <= b { a } else { b })
    }

    /// Multiplies by a constant tensor of the same shape.
    pub fn mul_const(&self, k: &Tensor<T>) -> Result<Var<'t, T>> {
        let c = self.tape.constant(k.clone());
        self.mul(&c)
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&self, k: &Tensor<T>) -> Result<Var<'t, T>> {
        let c = self.tape.constant(k.clone());
        self.add(&c)
    }

    pub fn sum(&self) -> Var<'t, T> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum { x: self.id }, &[self.id])
    }

    pub fn mean(&self) -> Var<'t, T> {
        let s = self.value().mean();
        self.tape.push(Tensor::scalar(s), Op::Mean { x: self.id }, &[self.id])
    }

    pub fn concat_channels(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let a = self.value();
        let out = Tensor::concat_channels(&a, &other.value())?;
        Ok(self.tape.push(out, Op::Concat { a: self.id, b: other.id, ca: a.shape()[1] }, &[self.id, other.id]))
    }

    /// Channels `[start, start + len)` along dimension 1 (any rank >= 2).
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let out = self.value().narrow_channels(start, len)?;
        Ok(self.tape.push(out, Op::Narrow { x: self.id, start }, &[self.id]))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let inv = T::one() / T::from_f64((h * w) as f64);
        let data = xv.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(&[n, c], data)?;
        Ok(self.tape.push(out, Op::GlobalAvgPool { x: self.id }, &[self.id]))
    }

    /// `[N, C, H, W] -> [N, 1, H, W]` channel mean.
    pub fn mean_channels(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        let inv = T::one() / T::from_f64(c as f64);
        let mut data = vec![T::zero(); n * hw];
        for b in 0..n {
            for ch in 0..c {
                let src = &xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (d, &s) in data[b * hw..(b + 1) * hw].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        data.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(&[n, 1, h, w], data)?;
        Ok(self.tape.push(out, Op::MeanChannels { x: self.id }, &[self.id]))
    }

    /// Scales each `(n, c)` plane of `self` by `s[n, c]`.
    pub fn mul_channel(&self, s: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(s)?;
        let xv = self.value();
        let sv = s.value();
        if xv.rank() < 2 || sv.shape() != &xv.shape()[..2] {
            return Err(shape_err!("channel scale {:?} does not match {:?}", sv.shape(), xv.shape()));
        }
        let inner: usize = xv.shape()[2..].iter().product();
        let mut data = xv.data().to_vec();
        for (chunk, &k) in data.chunks_mut(inner.max(1)).zip(sv.data()) {
            chunk.iter_mut().for_each(|v| *v *= k);
        }
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.tape.push(out, Op::MulChannel { x: self.id, s: s.id }, &[self.id, s.id]))
    }

    /// Per-pixel mean over the in-bounds `(2r+1) x (2r+1)` neighbourhood.
    pub fn box_filter(&self, radius: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let data = kernels::box_filter(xv.data(), n * c, h, w, radius, false);
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.tape.push(out, Op::BoxFilter { x: self.id, radius }, &[self.id]))
    }

    /// Forward difference along x; the last column is zero.
    pub fn diff_x(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (_, _, _, w) = xv.dims4()?;
        let mut data = vec![T::zero(); xv.numel()];
        for (src, dst) in xv.data().chunks(w).zip(data.chunks_mut(w)) {
            for i in 0..w.saturating_sub(1) {
                dst[i] = src[i + 1] - src[i];
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.tape.push(out, Op::DiffX { x: self.id }, &[self.id]))
    }

    /// Forward difference along y; the last row is zero.
    pub fn diff_y(&self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let mut data = vec![T::zero(); xv.numel()];
        for p in 0..n * c {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * h * w..(p + 1) * h * w];
            for y in 0..h.saturating_sub(1) {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y + 1) * w + xx] - src[y * w + xx];
                }
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        Ok(self.tape.push(out, Op::DiffY { x: self.id }, &[self.id]))
    }

    pub fn max_pool2d(&self, k: usize, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        if h + 2 * padding < k || w + 2 * padding < k || stride == 0 || padding >= k {
            return Err(shape_err!("max_pool2d k={} s={} p={} invalid for {:?}", k, stride, padding, xv.shape()));
        }
        let (data, argmax, (oh, ow)) = kernels::max_pool_forward(xv.data(), n * c, (h, w), k, stride, padding);
        let out = Tensor::new(&[n, c, oh, ow], data)?;
        Ok(self.tape.push(out, Op::MaxPool { x: self.id, argmax }, &[self.id]))
    }

    /// Batch normalisation over `(N, H, W)` per channel.
    ///
    /// With `running = None` batch statistics are used and returned as
    /// `(mean, biased variance)`; otherwise the supplied `(mean, var)` are applied.
    pub fn batch_norm(
        &self,
        gamma: &Var<'t, T>,
        beta: &Var<'t, T>,
        running: Option<(&Tensor<T>, &Tensor<T>)>,
        eps: T,
    ) -> Result<(Var<'t, T>, Option<(Tensor<T>, Tensor<T>)>)> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let gv = gamma.value();
        let bv = beta.value();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(shape_err!("batch_norm affine {:?}/{:?} for {} channels", gv.shape(), bv.shape(), c));
        }
        let hw = h * w;
        let (mean, var) = match running {
            Some((m, v)) => {
                if m.shape() != [c] || v.shape() != [c] {
                    return Err(shape_err!("batch_norm running stats do not match {} channels", c));
                }
                (m.data().to_vec(), v.data().to_vec())
            }
            None => {
                let count = T::from_f64((n * hw) as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        mean[ch] += xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for b in 0..n {
                    for ch in 0..c {
                        for &x in &xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            let d = x - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut data = vec![T::zero(); xv.numel()];
        for b in 0..n {
            for ch in 0..c {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    let xh = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    data[i] = gv.data()[ch] * xh + bv.data()[ch];
                }
            }
        }
        let stats = running.is_none().then(|| (Tensor::new(&[c], mean).unwrap(), Tensor::new(&[c], var).unwrap()));
        let out = Tensor::new(xv.shape(), data)?;
        let op = Op::BatchNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, batch_stats: running.is_none() };
        Ok((self.tape.push(out, op, &[self.id, gamma.id, beta.id]), stats))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape { x: self.id }, &[self.id]))
    }

    /// `[N, 3]` axis-angle vectors to `[N, 9]` row-major rotation matrices.
    pub fn axis_angle_to_matrix(&self) -> Result<Var<'t, T>> {
        let vv = self.value();
        let (n, three) = vv.dims2()?;
        if three != 3 {
            return Err(shape_err!("axis-angle input must be [N, 3], got {:?}", vv.shape()));
        }
        let mut data = Vec::with_capacity(n * 9);
        for b in 0..n {
            data.extend_from_slice(&rodrigues([vv.data()[3 * b], vv.data()[3 * b + 1], vv.data()[3 * b + 2]]));
        }
        let out = Tensor::new(&[n, 9], data)?;
        Ok(self.tape.push(out, Op::AxisAngle { v: self.id }, &[self.id]))
    }

    /// Pinhole reprojection of every target pixel into a source view.
    ///
    /// `self` is target depth `[N, 1, H, W]`, `rot` is `[N, 9]` (row-major R),
    /// `trans` is `[N, 3]`, `intr` holds `[fx, fy, cx, cy]` once or per batch
    /// item. Returns continuous
    /// source coordinates `[N, 2, H, W]` (x then y) and a validity mask
    /// `[N, 1, H, W]` that is zero where the point lands behind the source
    /// camera or outside the frame.
    pub fn project(&self, rot: &Var<'t, T>, trans: &Var<'t, T>, intr: &[[T; 4]]) -> Result<(Var<'t, T>, Tensor<T>)> {
        self.same_tape(rot)?;
        self.same_tape(trans)?;
        let dv = self.value();
        let (n, one, h, w) = dv.dims4()?;
        let rv = rot.value();
        let tv = trans.value();
        if one != 1 || rv.shape() != [n, 9] || tv.shape() != [n, 3] {
            return Err(shape_err!(
                "project expects depth [N,1,H,W], rot [N,9], trans [N,3]; got {:?}, {:?}, {:?}",
                dv.shape(),
                rv.shape(),
                tv.shape()
            ));
        }
        if intr.len() != 1 && intr.len() != n {
            return Err(shape_err!("project got {} intrinsics for a batch of {}", intr.len(), n));
        }
        let (coords, mask, active) = project_forward(&dv, &rv, &tv, intr);
        let out = Tensor::new(&[n, 2, h, w], coords)?;
        let mask = Tensor::new(&[n, 1, h, w], mask)?;
        let op = Op::Project { depth: self.id, rot: rot.id, trans: trans.id, intr: intr.to_vec(), active };
        Ok((self.tape.push(out, op, &[self.id, rot.id, trans.id]), mask))
    }

    /// Bilinear sampling of `self` (`[N, C, H, W]`) at `coords` (`[N, 2, H', W']`).
    pub fn grid_sample(&self, coords: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(coords)?;
        let iv = self.value();
        let cv = coords.value();
        let (n, c, h, w) = iv.dims4()?;
        let (cn, two, oh, ow) = cv.dims4()?;
        if cn != n || two != 2 {
            return Err(shape_err!("grid_sample coords {:?} do not match image {:?}", cv.shape(), iv.shape()));
        }
        let data = kernels::grid_sample_forward(iv.data(), cv.data(), (n, c, h, w), (oh, ow));
        let out = Tensor::new(&[n, c, oh, ow], data)?;
        Ok(self.tape.push(out, Op::GridSample { img: self.id, coords: coords.id }, &[self.id, coords.id]))
    }
}
