//! Recurrent lightweight depth network.
//!
//! A stride-2 3x3 convolution feeds a recurrent module that is applied `T`
//! times, halving the resolution on every pass. The decoder climbs back from
//! stride `2^(T+1)` to full resolution with one upsample block per octave,
//! taking skips from the first convolution and the recurrent iterations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, InvertedResidual, InvertedResidualConfig, LayerCost, UpsampleBlock, UpsampleConfig};
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Original,
    Medium,
    Small,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Original, Variant::Medium, Variant::Small];

    /// `(expansion, stride)` of each inverted residual block in the recurrent module.
    pub fn blocks(self) -> &'static [(usize, usize)] {
        match self {
            Variant::Original => &[(2, 1), (2, 1), (2, 2), (4, 1), (4, 1)],
            Variant::Medium => &[(2, 2), (2, 1)],
            Variant::Small => &[(2, 2)],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Original => "original",
            Variant::Medium => "medium",
            Variant::Small => "small",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Variant::Original),
            "medium" => Ok(Variant::Medium),
            "small" => Ok(Variant::Small),
            _ => Err(Error::Config(format!("unknown variant {s:?} (expected original, medium or small)"))),
        }
    }
}

/// Finest disparity scale produced: full, half, quarter or eighth resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputRes {
    F,
    H,
    Q,
    E,
}

impl OutputRes {
    pub const ALL: [OutputRes; 4] = [OutputRes::F, OutputRes::H, OutputRes::Q, OutputRes::E];

    pub fn stride(self) -> usize {
        match self {
            OutputRes::F => 1,
            OutputRes::H => 2,
            OutputRes::Q => 4,
            OutputRes::E => 8,
        }
    }
}

impl fmt::Display for OutputRes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputRes::F => "F",
            OutputRes::H => "H",
            OutputRes::Q => "Q",
            OutputRes::E => "E",
        })
    }
}

impl FromStr for OutputRes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F" => Ok(OutputRes::F),
            "H" => Ok(OutputRes::H),
            "Q" => Ok(OutputRes::Q),
            "E" => Ok(OutputRes::E),
            _ => Err(Error::Config(format!("unknown output resolution {s:?} (expected F, H, Q or E)"))),
        }
    }
}

/// Coarsest stride that carries a disparity head.
pub const MAX_HEAD_STRIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthNetConfig {
    pub variant: Variant,
    pub output_res: OutputRes,
    pub base_channels: usize,
    pub iterations: usize,
    pub share_recurrent_weights: bool,
    pub lightweight_decoder: bool,
    pub se_reduction: usize,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        DepthNetConfig::new(Variant::Original, OutputRes::F)
    }
}

/// One decoder stage as laid out by a [`DepthNetConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderStage {
    /// Output stride of the block.
    pub stride: usize,
    /// Index into the encoder feature list for the skip connection.
    pub skip: Option<usize>,
    pub block: UpsampleConfig,
}

impl DepthNetConfig {
    pub fn new(variant: Variant, output_res: OutputRes) -> Self {
        DepthNetConfig {
            variant,
            output_res,
            base_channels: 64,
            iterations: 4,
            share_recurrent_weights: true,
            lightweight_decoder: true,
            se_reduction: 16,
        }
    }

    pub fn name(&self) -> String {
        let mut s = format!("{} {}", self.variant, self.output_res);
        if !self.share_recurrent_weights {
            s.push_str(" w/o reuse");
        }
        if !self.lightweight_decoder {
            s.push_str(" w/o lightweight decoder");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.iterations == 0 || self.se_reduction == 0 {
            return Err(Error::Config(String::from("channels, iterations and SE reduction must be positive")));
        }
        if self.output_res.stride() > (1 << self.iterations) {
            return Err(Error::Config(format!(
                "output resolution {} needs a decoder stage at stride {}, but {} iterations only reach stride {}",
                self.output_res,
                self.output_res.stride(),
                self.iterations,
                1usize << self.iterations
            )));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this (the encoder output stride).
    pub fn divisor(&self) -> usize {
        1 << (self.iterations + 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::Config(format!("input {h}x{w} is not divisible by the encoder output stride {d}")));
        }
        Ok(())
    }

    pub fn first_conv(&self) -> ConvSpec {
        ConvSpec::new(3, self.base_channels, 3, 2)
    }

    pub fn recurrent_blocks(&self) -> Vec<InvertedResidualConfig> {
        self.variant
            .blocks()
            .iter()
            .map(|&(expansion, stride)| InvertedResidualConfig {
                channels: self.base_channels,
                expansion,
                stride,
                se_reduction: self.se_reduction,
            })
            .collect()
    }

    /// Number of distinct recurrent weight sets.
    pub fn module_copies(&self) -> usize {
        if self.share_recurrent_weights {
            1
        } else {
            self.iterations
        }
    }

    pub fn decoder_stages(&self) -> Vec<DecoderStage> {
        let finest = self.output_res.stride();
        (0..=self.iterations)
            .rev()
            .map(|e| 1usize << e)
            .take_while(|&stride| stride >= finest)
            .map(|stride| DecoderStage {
                stride,
                skip: (stride >= 2).then(|| stride.trailing_zeros() as usize - 1),
                block: UpsampleConfig {
                    channels: self.base_channels,
                    has_skip: stride >= 2,
                    emits_disparity: stride <= MAX_HEAD_STRIDE,
                    lightweight: self.lightweight_decoder,
                },
            })
            .collect()
    }

    /// Strides of the disparity heads, finest first.
    pub fn head_strides(&self) -> Vec<usize> {
        let mut s: Vec<usize> =
            self.decoder_stages().iter().filter(|st| st.block.emits_disparity).map(|st| st.stride).collect();
        s.reverse();
        s
    }

    pub fn module_param_count(&self) -> u64 {
        self.recurrent_blocks().iter().map(|b| b.param_count()).sum()
    }

    pub fn decoder_param_count(&self) -> u64 {
        self.decoder_stages().iter().map(|s| s.block.param_count()).sum()
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> u64 {
        self.first_conv().param_count()
            + self.module_copies() as u64 * self.module_param_count()
            + self.decoder_param_count()
    }

    /// Per-layer costs of one forward pass on an `h x w` image.
    pub fn costs(&self, h: usize, w: usize) -> Result<Vec<LayerCost>> {
        self.validate()?;
        self.check_input(h, w)?;
        let mut out = Vec::new();
        let first = self.first_conv();
        let mut c = first.cost("conv1", h, w);
        let (mut fh, mut fw) = first.out_hw(h, w);
        c.elementwise += (self.base_channels * fh * fw) as u64;
        out.push(c);
        let blocks = self.recurrent_blocks();
        for it in 0..self.iterations {
            for (b, cfg) in blocks.iter().enumerate() {
                let mut costs = cfg.costs(&format!("iter{it}.block{b}"), fh, fw);
                // Shared weights are counted once, on the first iteration.
                if self.share_recurrent_weights && it > 0 {
                    costs.iter_mut().for_each(|c| c.params = 0);
                }
                out.extend(costs);
                (fh, fw) = cfg.out_hw(fh, fw);
            }
        }
        for stage in self.decoder_stages() {
            out.extend(stage.block.costs(&format!("dec.s{}", stage.stride), fh, fw));
            (fh, fw) = (fh * 2, fw * 2);
            if stage.block.emits_disparity && stage.stride > 1 {
                out.push(LayerCost::elementwise(format!("dec.s{}.resize", stage.stride), (h * w) as u64));
            }
        }
        Ok(out)
    }
}

/// Disparity maps of one forward pass, finest scale first.
#[derive(Debug, Clone)]
pub struct DepthOutput<'t, T: Scalar> {
    /// Encoder features at strides 2, 4, ..., `2^(T+1)`.
    pub features: Vec<Var<'t, T>>,
    /// Head strides matching `raw` and `disparities`.
    pub strides: Vec<usize>,
    /// Sigmoid outputs at their native resolution.
    pub raw: Vec<Var<'t, T>>,
    /// The same maps bilinearly resized to the input resolution.
    pub disparities: Vec<Var<'t, T>>,
}

#[derive(Debug, Clone)]
pub struct DepthNet {
    pub cfg: DepthNetConfig,
    pub first_conv: Conv2d,
    /// One block list per distinct weight set.
    pub modules: Vec<Vec<InvertedResidual>>,
    pub decoder: Vec<(DecoderStage, UpsampleBlock)>,
}

impl DepthNet {
    /// Registers all weights under `prefix` and returns the network.
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: DepthNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let first_conv = Conv2d::new(store, &format!("{prefix}.conv1"), cfg.first_conv(), rng);
        let modules = (0..cfg.module_copies())
            .map(|m| {
                cfg.recurrent_blocks()
                    .into_iter()
                    .enumerate()
                    .map(|(b, bc)| InvertedResidual::new(store, &format!("{prefix}.rec{m}.block{b}"), bc, rng))
                    .collect()
            })
            .collect();
        let decoder = cfg
            .decoder_stages()
            .into_iter()
            .map(|st| (st, UpsampleBlock::new(store, &format!("{prefix}.dec.s{}", st.stride), st.block, rng)))
            .collect();
        Ok(DepthNet { cfg, first_conv, modules, decoder })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.first_conv.param_ids();
        for m in &self.modules {
            for b in m {
                ids.extend(b.param_ids());
            }
        }
        for (_, b) in &self.decoder {
            ids.extend(b.param_ids());
        }
        ids
    }

    /// Parameter ids of the recurrent weight set used at `iteration`.
    pub fn module_param_ids(&self, iteration: usize) -> Vec<ParamId> {
        let m = if self.cfg.share_recurrent_weights { 0 } else { iteration };
        self.modules[m].iter().flat_map(|b| b.param_ids()).collect()
    }

    fn check_image<T: Scalar>(&self, image: &Var<'_, T>) -> Result<(usize, usize)> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(shape_err!("depth network expects [N, 3, H, W], got {:?}", s));
        }
        self.cfg.check_input(s[2], s[3])?;
        Ok((s[2], s[3]))
    }

    /// Encoder features at strides 2, 4, ..., `2^(T+1)`.
    pub fn encoder_features<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, image: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        self.check_image(&image)?;
        let mut feats = Vec::with_capacity(self.cfg.iterations + 1);
        let mut x = self.first_conv.forward(s, image)?.relu();
        feats.push(x);
        for it in 0..self.cfg.iterations {
            let m = if self.cfg.share_recurrent_weights { 0 } else { it };
            for block in &self.modules[m] {
                x = block.forward(s, x)?;
            }
            feats.push(x);
        }
        Ok(feats)
    }

    pub fn forward<'t, T: Scalar>(&self, s: &Session<'t, '_, T>, image: Var<'t, T>) -> Result<DepthOutput<'t, T>> {
        let (h, w) = self.check_image(&image)?;
        let features = self.encoder_features(s, image)?;
        let mut x = *features.last().expect("at least one iteration");
        let mut strides = Vec::new();
        let mut raw = Vec::new();
        for (stage, block) in &self.decoder {
            let out = block.forward(s, x, stage.skip.map(|i| features[i]))?;
            x = out.features;
            if let Some(d) = out.disparity {
                strides.push(stage.stride);
                raw.push(d);
            }
        }
        strides.reverse();
        raw.reverse();
        let disparities = raw.iter().map(|d| d.bilinear_resize(h, w)).collect::<Result<Vec<_>>>()?;
        Ok(DepthOutput { features, strides, raw, disparities })
    }

    /// Inference-mode disparities at input resolution, finest first.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let tape = Tape::new();
        let s = Session::eval(&tape, store);
        let out = self.forward(&s, tape.constant(image.clone()))?;
        Ok(out.disparities.iter().map(|d| (*d.value()).clone()).collect())
    }
}
