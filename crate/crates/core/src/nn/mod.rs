//! Layers and the reusable blocks both networks are assembled from.

mod blocks;
mod layers;

pub use blocks::{
    DsConv, DsConvConfig, InvertedResidual, InvertedResidualConfig, SeBlock, SeConfig, UpsampleBlock,
    UpsampleConfig, UpsampleOutput,
};
pub use layers::{BatchNorm2d, Conv2d, ConvSpec, Linear, LinearSpec};

use alloc::string::String;

/// Analytic cost of one layer (or fused elementwise stage) at a given resolution.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    /// Multiply-accumulates of convolutions and fully connected layers.
    pub macs: u64,
    /// Bias additions, activations, pooling, resampling and shortcut additions.
    pub elementwise: u64,
}

/// How a multiply-accumulate is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacConvention {
    /// One flop per MAC.
    One,
    /// Two flops per MAC (a multiply and an add).
    Two,
}

impl MacConvention {
    pub fn factor(self) -> u64 {
        match self {
            MacConvention::One => 1,
            MacConvention::Two => 2,
        }
    }
}

impl LayerCost {
    pub fn new(name: impl Into<String>) -> Self {
        LayerCost { name: name.into(), ..Default::default() }
    }

    pub fn elementwise(name: impl Into<String>, count: u64) -> Self {
        LayerCost { name: name.into(), elementwise: count, ..Default::default() }
    }

    pub fn flops(&self, convention: MacConvention) -> u64 {
        self.macs * convention.factor() + self.elementwise
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}
