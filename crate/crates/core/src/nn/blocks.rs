use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Conv2d, ConvSpec, Linear, LinearSpec};
use super::{join, LayerCost};
use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::shape_err;

fn check_channels<T: Scalar>(x: &Var<'_, T>, expected: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != expected {
        return Err(shape_err!("{what} expects {expected} input channels, got {:?}", s));
    }
    Ok(())
}

/// Squeeze-and-excitation: pool, FC, ReLU, FC, sigmoid, channel scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeConfig {
    pub channels: usize,
    pub reduction: usize,
}

impl SeConfig {
    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }

    fn fc1(&self) -> LinearSpec {
        LinearSpec { in_features: self.channels, out_features: self.hidden() }
    }

    fn fc2(&self) -> LinearSpec {
        LinearSpec { in_features: self.hidden(), out_features: self.channels }
    }

    pub fn param_count(&self) -> u64 {
        self.fc1().param_count() + self.fc2().param_count()
    }

    pub fn costs(&self, prefix: &str, h: usize, w: usize) -> Vec<LayerCost> {
        let map = (self.channels * h * w) as u64;
        let mut fc1 = self.fc1().cost(&join(prefix, "fc1"));
        fc1.elementwise += self.hidden() as u64;
        let mut fc2 = self.fc2().cost(&join(prefix, "fc2"));
        fc2.elementwise += self.channels as u64;
        alloc::vec![
            LayerCost::elementwise(join(prefix, "pool"), map),
            fc1,
            fc2,
            LayerCost::elementwise(join(prefix, "scale"), map),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SeBlock {
    pub cfg: SeConfig,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: SeConfig, rng: &mut R) -> Self {
        SeBlock {
            cfg,
            fc1: Linear::new(store, &join(name, "fc1"), cfg.fc1(), rng),
            fc2: Linear::new(store, &join(name, "fc2"), cfg.fc2(), rng),
        }
    }

    /// Per-channel gate in (0, 1), shape `[N, C]`.
    pub fn gate<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check_channels(&x, self.cfg.channels, "SE block")?;
        let pooled = x.global_avg_pool()?;
        let hidden = self.fc1.forward(s, pooled)?.relu();
        Ok(self.fc2.forward(s, hidden)?.sigmoid())
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let g = self.gate(s, x)?;
        x.mul_channel(&g)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.fc1.param_ids();
        ids.extend(self.fc2.param_ids());
        ids
    }
}

/// Expand (1x1, ReLU6), depthwise 3x3 (ReLU6), SE, linear 1x1 projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvertedResidualConfig {
    pub channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub se_reduction: usize,
}

impl InvertedResidualConfig {
    pub fn hidden(&self) -> usize {
        self.channels * self.expansion
    }

    pub fn has_shortcut(&self) -> bool {
        self.stride == 1
    }

    fn expand(&self) -> ConvSpec {
        ConvSpec::new(self.channels, self.hidden(), 1, 1)
    }

    fn depthwise(&self) -> ConvSpec {
        ConvSpec::depthwise(self.hidden(), 3, self.stride)
    }

    fn project(&self) -> ConvSpec {
        ConvSpec::new(self.hidden(), self.channels, 1, 1)
    }

    pub fn se(&self) -> SeConfig {
        SeConfig { channels: self.hidden(), reduction: self.se_reduction }
    }

    pub fn param_count(&self) -> u64 {
        self.expand().param_count() + self.depthwise().param_count() + self.se().param_count() + self.project().param_count()
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.depthwise().out_hw(h, w)
    }

    pub fn costs(&self, prefix: &str, h: usize, w: usize) -> Vec<LayerCost> {
        let mut out = Vec::new();
        let mut expand = self.expand().cost(&join(prefix, "expand"), h, w);
        expand.elementwise += (self.hidden() * h * w) as u64;
        out.push(expand);
        let (oh, ow) = self.out_hw(h, w);
        let mut dw = self.depthwise().cost(&join(prefix, "dw"), h, w);
        dw.elementwise += (self.hidden() * oh * ow) as u64;
        out.push(dw);
        out.extend(self.se().costs(&join(prefix, "se"), oh, ow));
        let mut project = self.project().cost(&join(prefix, "project"), oh, ow);
        if self.has_shortcut() {
            project.elementwise += (self.channels * oh * ow) as u64;
        }
        out.push(project);
        out
    }
}

#[derive(Debug, Clone)]
pub struct InvertedResidual {
    pub cfg: InvertedResidualConfig,
    pub expand: Conv2d,
    pub depthwise: Conv2d,
    pub se: SeBlock,
    pub project: Conv2d,
}

impl InvertedResidual {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: InvertedResidualConfig,
        rng: &mut R,
    ) -> Self {
        InvertedResidual {
            cfg,
            expand: Conv2d::new(store, &join(name, "expand"), cfg.expand(), rng),
            depthwise: Conv2d::new(store, &join(name, "dw"), cfg.depthwise(), rng),
            se: SeBlock::new(store, &join(name, "se"), cfg.se(), rng),
            project: Conv2d::new(store, &join(name, "project"), cfg.project(), rng),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check_channels(&x, self.cfg.channels, "inverted residual block")?;
        let h = self.expand.forward(s, x)?.relu6();
        let h = self.depthwise.forward(s, h)?.relu6();
        let h = self.se.forward(s, h)?;
        let h = self.project.forward(s, h)?;
        if self.cfg.has_shortcut() {
            h.add(&x)
        } else {
            Ok(h)
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.expand.param_ids();
        ids.extend(self.depthwise.param_ids());
        ids.extend(self.se.param_ids());
        ids.extend(self.project.param_ids());
        ids
    }
}

/// Residual depthwise-separable block, or its standard-convolution ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsConvConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Disparity heads skip the ReLU; the caller applies the sigmoid.
    pub head: bool,
    /// `false` swaps the block for a plain 3x3 convolution without shortcut.
    pub lightweight: bool,
}

impl DsConvConfig {
    pub fn new(in_ch: usize, out_ch: usize) -> Self {
        DsConvConfig { in_ch, out_ch, head: false, lightweight: true }
    }

    pub fn has_shortcut(&self) -> bool {
        self.lightweight && self.in_ch == self.out_ch
    }

    fn convs(&self) -> Vec<(&'static str, ConvSpec)> {
        if self.lightweight {
            alloc::vec![
                ("dw", ConvSpec::depthwise(self.in_ch, 3, 1)),
                ("pw", ConvSpec::new(self.in_ch, self.out_ch, 1, 1)),
            ]
        } else {
            alloc::vec![("conv", ConvSpec::new(self.in_ch, self.out_ch, 3, 1))]
        }
    }

    pub fn param_count(&self) -> u64 {
        self.convs().iter().map(|(_, c)| c.param_count()).sum()
    }

    pub fn costs(&self, prefix: &str, h: usize, w: usize) -> Vec<LayerCost> {
        let mut out: Vec<LayerCost> = self.convs().iter().map(|(n, c)| c.cost(&join(prefix, n), h, w)).collect();
        let last = out.last_mut().expect("at least one conv");
        let map = (self.out_ch * h * w) as u64;
        if !self.head {
            last.elementwise += map;
        }
        if self.has_shortcut() {
            last.elementwise += map;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DsConv {
    pub cfg: DsConvConfig,
    pub convs: Vec<Conv2d>,
}

impl DsConv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: DsConvConfig, rng: &mut R) -> Self {
        let convs = cfg.convs().into_iter().map(|(n, spec)| Conv2d::new(store, &join(name, n), spec, rng)).collect();
        DsConv { cfg, convs }
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check_channels(&x, self.cfg.in_ch, "DSconv block")?;
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(s, h)?;
        }
        if !self.cfg.head {
            h = h.relu();
        }
        if self.cfg.has_shortcut() {
            h = h.add(&x)?;
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|c| c.param_ids()).collect()
    }
}

/// Decoder stage: DSconv, nearest 2x upsample, optional skip concat, DSconv,
/// optional sigmoid disparity head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpsampleConfig {
    pub channels: usize,
    pub has_skip: bool,
    pub emits_disparity: bool,
    pub lightweight: bool,
}

impl UpsampleConfig {
    fn ds1(&self) -> DsConvConfig {
        DsConvConfig { lightweight: self.lightweight, ..DsConvConfig::new(self.channels, self.channels) }
    }

    fn ds2(&self) -> DsConvConfig {
        let in_ch = if self.has_skip { 2 * self.channels } else { self.channels };
        DsConvConfig { lightweight: self.lightweight, ..DsConvConfig::new(in_ch, self.channels) }
    }

    fn head(&self) -> Option<DsConvConfig> {
        self.emits_disparity
            .then_some(DsConvConfig { head: true, lightweight: self.lightweight, ..DsConvConfig::new(self.channels, 1) })
    }

    pub fn param_count(&self) -> u64 {
        self.ds1().param_count() + self.ds2().param_count() + self.head().map_or(0, |h| h.param_count())
    }

    /// Costs for an input of spatial size `h x w` (output is `2h x 2w`).
    pub fn costs(&self, prefix: &str, h: usize, w: usize) -> Vec<LayerCost> {
        let mut out = self.ds1().costs(&join(prefix, "ds1"), h, w);
        let (oh, ow) = (2 * h, 2 * w);
        out.push(LayerCost::elementwise(join(prefix, "upsample"), (self.channels * oh * ow) as u64));
        out.extend(self.ds2().costs(&join(prefix, "ds2"), oh, ow));
        if let Some(head) = self.head() {
            let mut c = head.costs(&join(prefix, "head"), oh, ow);
            c.last_mut().expect("head conv").elementwise += (oh * ow) as u64;
            out.extend(c);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct UpsampleBlock {
    pub cfg: UpsampleConfig,
    pub ds1: DsConv,
    pub ds2: DsConv,
    pub head: Option<DsConv>,
}

#[derive(Debug, Clone, Copy)]
pub struct UpsampleOutput<'t, T: Scalar> {
    pub features: Var<'t, T>,
    pub disparity: Option<Var<'t, T>>,
}

impl UpsampleBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: UpsampleConfig, rng: &mut R) -> Self {
        UpsampleBlock {
            cfg,
            ds1: DsConv::new(store, &join(name, "ds1"), cfg.ds1(), rng),
            ds2: DsConv::new(store, &join(name, "ds2"), cfg.ds2(), rng),
            head: cfg.head().map(|h| DsConv::new(store, &join(name, "head"), h, rng)),
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        s: &Session<'t, '_, T>,
        x: Var<'t, T>,
        skip: Option<Var<'t, T>>,
    ) -> Result<UpsampleOutput<'t, T>> {
        let h = self.ds1.forward(s, x)?.nearest_upsample2x()?;
        let h = match (self.cfg.has_skip, skip) {
            (true, Some(skip)) => {
                let (hs, ss) = (h.shape(), skip.shape());
                if ss.len() != 4 || ss[0] != hs[0] || ss[1] != self.cfg.channels || ss[2..] != hs[2..] {
                    return Err(shape_err!("skip {:?} does not match upsampled features {:?}", ss, hs));
                }
                h.concat_channels(&skip)?
            }
            (false, None) => h,
            (true, None) => return Err(shape_err!("upsample block expects a skip connection")),
            (false, Some(_)) => return Err(shape_err!("upsample block has no skip input")),
        };
        let features = self.ds2.forward(s, h)?;
        let disparity = match &self.head {
            Some(head) => Some(head.forward(s, features)?.sigmoid()),
            None => None,
        };
        Ok(UpsampleOutput { features, disparity })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.ds1.param_ids();
        ids.extend(self.ds2.param_ids());
        if let Some(h) = &self.head {
            ids.extend(h.param_ids());
        }
        ids
    }
}
