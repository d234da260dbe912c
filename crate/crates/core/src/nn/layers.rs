use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{join, LayerCost};
use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{xavier_uniform, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;

/// Shape of a convolution; padding is always `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        ConvSpec { in_ch, out_ch, k, stride, groups: 1, bias: true }
    }

    pub fn depthwise(ch: usize, k: usize, stride: usize) -> Self {
        ConvSpec { in_ch: ch, out_ch: ch, k, stride, groups: ch, bias: true }
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn padding(&self) -> usize {
        self.k / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch / self.groups, self.k, self.k]
    }

    pub fn param_count(&self) -> u64 {
        let w = self.out_ch * (self.in_ch / self.groups) * self.k * self.k;
        (w + if self.bias { self.out_ch } else { 0 }) as u64
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    pub fn cost(&self, name: &str, h: usize, w: usize) -> LayerCost {
        let (oh, ow) = self.out_hw(h, w);
        let out = (self.out_ch * oh * ow) as u64;
        LayerCost {
            name: name.into(),
            params: self.param_count(),
            macs: out * ((self.in_ch / self.groups) * self.k * self.k) as u64,
            elementwise: if self.bias { out } else { 0 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let weight = store.add(join(name, "weight"), xavier_uniform(&spec.weight_shape(), rng), true);
        let bias = spec.bias.then(|| store.add(join(name, "bias"), Tensor::zeros(&[spec.out_ch]), true));
        Conv2d { spec, weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        x.conv2d(&w, b.as_ref(), self.spec.stride, self.spec.padding(), self.spec.groups)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.weight];
        ids.extend(self.bias);
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearSpec {
    pub fn param_count(&self) -> u64 {
        (self.in_features * self.out_features + self.out_features) as u64
    }

    /// Cost per image (batch size one).
    pub fn cost(&self, name: &str) -> LayerCost {
        LayerCost {
            name: name.into(),
            params: self.param_count(),
            macs: (self.in_features * self.out_features) as u64,
            elementwise: self.out_features as u64,
        }
    }
}

/// Fully connected layer with bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub spec: LinearSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, spec: LinearSpec, rng: &mut R) -> Self {
        let weight = store.add(join(name, "weight"), xavier_uniform(&[spec.out_features, spec.in_features], rng), true);
        let bias = store.add(join(name, "bias"), Tensor::zeros(&[spec.out_features]), true);
        Linear { spec, weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(&s.param(self.weight), Some(&s.param(self.bias)))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Batch normalisation with running statistics kept as non-trainable buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: store.add(join(name, "weight"), Tensor::ones(&[channels]), true),
            beta: store.add(join(name, "bias"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(join(name, "running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(join(name, "running_var"), Tensor::ones(&[channels]), false),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn param_count(&self) -> u64 {
        2 * self.channels as u64
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(shape_err!("batch norm over {} channels got input {:?}", self.channels, shape));
        }
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let eps = T::from_f64(self.eps);
        if s.training() {
            let (y, stats) = x.batch_norm(&gamma, &beta, None, eps)?;
            if let Some((mean, var)) = stats {
                let count = (shape[0] * shape[2] * shape[3]) as f64;
                // Running variance tracks the unbiased estimate.
                let unbias = T::from_f64(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
                let m = T::from_f64(self.momentum);
                let keep = T::one() - m;
                let store = s.store();
                let rm = store.value(self.running_mean).zip_map(&mean, |r, b| keep * r + m * b)?;
                let rv = store.value(self.running_var).zip_map(&var, |r, b| keep * r + m * b * unbias)?;
                s.update_buffer(self.running_mean, rm);
                s.update_buffer(self.running_var, rv);
            }
            Ok(y)
        } else {
            let store = s.store();
            let (y, _) = x.batch_norm(
                &gamma,
                &beta,
                Some((store.value(self.running_mean), store.value(self.running_var))),
                eps,
            )?;
            Ok(y)
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}
