//! Ego-motion network: ResNet-18 topology on a 6-channel frame pair,
//! four-convolution head, global average pooling and 0.01 output scaling.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{rodrigues, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::nn::{BatchNorm2d, Conv2d, ConvSpec};
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;

/// Scale applied to the pooled head output.
pub const POSE_SCALE: f64 = 0.01;

/// Axis-angle rotation (radians) and translation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6DoF {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose6DoF {
    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Pose6DoF { rotation, translation }
    }

    pub fn to_matrix(&self) -> RigidTransform {
        pose_to_matrix(self)
    }
}

/// Homogeneous `[R | t; 0 0 0 1]` with R from Rodrigues' formula.
pub fn pose_to_matrix(p: &Pose6DoF) -> RigidTransform {
    RigidTransform::from_rt(rodrigues(p.rotation), p.translation)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseNetConfig {
    /// 1.0 gives ResNet-18 widths 64/128/256/512.
    pub width_multiplier: f64,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        PoseNetConfig { width_multiplier: 1.0 }
    }
}

impl PoseNetConfig {
    pub fn width(&self, base: usize) -> usize {
        (num_traits::Float::round(base as f64 * self.width_multiplier) as usize).max(1)
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let downsample = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(store, &format!("{name}.downsample.0"), ConvSpec::new(in_ch, out_ch, 1, stride).no_bias(), rng),
                BatchNorm2d::new(store, &format!("{name}.downsample.1"), out_ch),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), ConvSpec::new(in_ch, out_ch, 3, stride).no_bias(), rng),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), out_ch),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), ConvSpec::new(out_ch, out_ch, 3, 1).no_bias(), rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), out_ch),
            downsample,
        }
    }

    fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.bn1.forward(s, self.conv1.forward(s, x)?)?.relu();
        let h = self.bn2.forward(s, self.conv2.forward(s, h)?)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward(s, conv.forward(s, x)?)?,
            None => x,
        };
        Ok(h.add(&shortcut)?.relu())
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.conv1.param_ids();
        ids.extend(self.bn1.param_ids());
        ids.extend(self.conv2.param_ids());
        ids.extend(self.bn2.param_ids());
        if let Some((c, b)) = &self.downsample {
            ids.extend(c.param_ids());
            ids.extend(b.param_ids());
        }
        ids
    }
}

/// Pose of each source relative to the target, as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct PoseOutput<'t, T: Scalar> {
    /// `[N, 3]` axis-angle.
    pub rotation: Var<'t, T>,
    /// `[N, 3]` translation.
    pub translation: Var<'t, T>,
}

impl<T: Scalar> PoseOutput<'_, T> {
    pub fn poses(&self) -> Vec<Pose6DoF> {
        let r = self.rotation.value();
        let t = self.translation.value();
        r.data()
            .chunks(3)
            .zip(t.data().chunks(3))
            .map(|(r, t)| {
                Pose6DoF::new([r[0].as_f64(), r[1].as_f64(), r[2].as_f64()], [t[0].as_f64(), t[1].as_f64(), t[2].as_f64()])
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PoseNet {
    pub cfg: PoseNetConfig,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    layers: Vec<BasicBlock>,
    head: Vec<Conv2d>,
}

impl PoseNet {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: PoseNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(cfg.width_multiplier > 0.0 && cfg.width_multiplier.is_finite()) {
            return Err(Error::Config(format!("width multiplier must be positive, got {}", cfg.width_multiplier)));
        }
        let c0 = cfg.width(64);
        let conv1 = Conv2d::new(store, &format!("{prefix}.conv1"), ConvSpec::new(6, c0, 7, 2).no_bias(), rng);
        let bn1 = BatchNorm2d::new(store, &format!("{prefix}.bn1"), c0);
        let mut layers = Vec::new();
        let mut in_ch = c0;
        for (li, base) in [64usize, 128, 256, 512].into_iter().enumerate() {
            let out_ch = cfg.width(base);
            for bi in 0..2 {
                let stride = if li > 0 && bi == 0 { 2 } else { 1 };
                let name = format!("{prefix}.layer{}.{bi}", li + 1);
                layers.push(BasicBlock::new(store, &name, in_ch, out_ch, stride, rng));
                in_ch = out_ch;
            }
        }
        let hc = cfg.width(256);
        let head = [(in_ch, hc), (hc, hc), (hc, hc), (hc, 6)]
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| Conv2d::new(store, &format!("{prefix}.head.{i}"), ConvSpec::new(a, b, 3, 1), rng))
            .collect();
        Ok(PoseNet { cfg, conv1, bn1, layers, head })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.conv1.param_ids();
        ids.extend(self.bn1.param_ids());
        for l in &self.layers {
            ids.extend(l.param_ids());
        }
        for h in &self.head {
            ids.extend(h.param_ids());
        }
        ids
    }

    /// Pooled head output before the 0.01 scaling, `[N, 6]`.
    pub fn raw_output<'t, T: Scalar>(
        &self,
        s: &Session<'t, '_, T>,
        target: Var<'t, T>,
        source: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (ts, ss) = (target.shape(), source.shape());
        if ts != ss || ts.len() != 4 || ts[1] != 3 {
            return Err(shape_err!("pose network expects two equal [N, 3, H, W] frames, got {:?} and {:?}", ts, ss));
        }
        let x = target.concat_channels(&source)?;
        let x = self.bn1.forward(s, self.conv1.forward(s, x)?)?.relu();
        let mut x = x.max_pool2d(3, 2, 1)?;
        for l in &self.layers {
            x = l.forward(s, x)?;
        }
        let last = self.head.len() - 1;
        for (i, conv) in self.head.iter().enumerate() {
            x = conv.forward(s, x)?;
            if i < last {
                x = x.relu();
            }
        }
        x.global_avg_pool()
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        s: &Session<'t, '_, T>,
        target: Var<'t, T>,
        source: Var<'t, T>,
    ) -> Result<PoseOutput<'t, T>> {
        let raw = self.raw_output(s, target, source)?.scale(T::from_f64(POSE_SCALE));
        Ok(PoseOutput { rotation: raw.narrow_channels(0, 3)?, translation: raw.narrow_channels(3, 3)? })
    }

    /// Inference-mode poses for a batch of frame pairs.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, target: &Tensor<T>, source: &Tensor<T>) -> Result<Vec<Pose6DoF>> {
        let tape = Tape::new();
        let s = Session::eval(&tape, store);
        let out = self.forward(&s, tape.constant(target.clone()), tape.constant(source.clone()))?;
        Ok(out.poses())
    }
}
