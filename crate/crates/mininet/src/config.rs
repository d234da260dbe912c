//! Model and training settings as stored in checkpoints and `--config` files.
//!
//! Config files are either a JSON object or `key = value` lines (`#` starts a
//! comment); both use the field names of [`TrainSettings`].

use std::path::Path;

use mininet_core::depthnet::{DepthNetConfig, OutputRes, Variant};
use mininet_core::losses::LossConfig;
use mininet_core::posenet::PoseNetConfig;
use mininet_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, IoContext, Result};

/// Everything needed to rebuild both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    pub out_res: String,
    pub base_channels: usize,
    pub iterations: usize,
    pub share_recurrent_weights: bool,
    pub lightweight_decoder: bool,
    pub se_reduction: usize,
    pub pose_width: f64,
}

impl ModelConfig {
    pub fn new(depth: &DepthNetConfig, pose: &PoseNetConfig) -> Self {
        ModelConfig {
            variant: depth.variant.to_string(),
            out_res: depth.output_res.to_string(),
            base_channels: depth.base_channels,
            iterations: depth.iterations,
            share_recurrent_weights: depth.share_recurrent_weights,
            lightweight_decoder: depth.lightweight_decoder,
            se_reduction: depth.se_reduction,
            pose_width: pose.width_multiplier,
        }
    }

    pub fn depth(&self) -> Result<DepthNetConfig> {
        let cfg = DepthNetConfig {
            base_channels: self.base_channels,
            iterations: self.iterations,
            share_recurrent_weights: self.share_recurrent_weights,
            lightweight_decoder: self.lightweight_decoder,
            se_reduction: self.se_reduction,
            ..DepthNetConfig::new(self.variant.parse::<Variant>()?, self.out_res.parse::<OutputRes>()?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pose(&self) -> Result<PoseNetConfig> {
        if !(self.pose_width > 0.0) {
            return Err(Error::Config(format!("pose_width must be positive, got {}", self.pose_width)));
        }
        Ok(PoseNetConfig { width_multiplier: self.pose_width })
    }
}

/// Flat training settings; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub variant: String,
    pub out_res: String,
    pub base_channels: usize,
    pub iterations: usize,
    pub share_recurrent_weights: bool,
    pub lightweight_decoder: bool,
    pub se_reduction: usize,
    pub pose_width: f64,
    pub width: usize,
    pub height: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimiser steps in total (0 = no limit).
    pub max_steps: usize,
    pub lr: f64,
    pub lr_decay_epochs: usize,
    pub seed: u64,
    pub augment: bool,
    pub ssim_alpha: f64,
    pub smoothness_weight: f64,
    pub md_constant: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let depth = DepthNetConfig::default();
        let train = TrainConfig::default();
        let loss = LossConfig::default();
        TrainSettings {
            variant: depth.variant.to_string(),
            out_res: depth.output_res.to_string(),
            base_channels: depth.base_channels,
            iterations: depth.iterations,
            share_recurrent_weights: depth.share_recurrent_weights,
            lightweight_decoder: depth.lightweight_decoder,
            se_reduction: depth.se_reduction,
            pose_width: PoseNetConfig::default().width_multiplier,
            width: 640,
            height: 192,
            batch_size: train.batch_size,
            epochs: train.epochs,
            max_steps: 0,
            lr: train.lr0,
            lr_decay_epochs: train.lr_decay_epochs,
            seed: train.seed,
            augment: train.augment,
            ssim_alpha: loss.alpha,
            smoothness_weight: loss.lambda,
            md_constant: loss.md_constant,
        }
    }
}

impl TrainSettings {
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') { serde_json::from_str(text)? } else { Value::Object(parse_key_values(text)?) };
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant.clone(),
            out_res: self.out_res.clone(),
            base_channels: self.base_channels,
            iterations: self.iterations,
            share_recurrent_weights: self.share_recurrent_weights,
            lightweight_decoder: self.lightweight_decoder,
            se_reduction: self.se_reduction,
            pose_width: self.pose_width,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr0: self.lr,
            lr_decay_epochs: self.lr_decay_epochs,
            seed: self.seed,
            augment: self.augment,
            loss: LossConfig { alpha: self.ssim_alpha, lambda: self.smoothness_weight, md_constant: self.md_constant, ..d.loss },
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        let model = self.model();
        model.depth()?.check_input(self.height, self.width)?;
        model.pose()?;
        self.train_config()?;
        Ok(())
    }
}

fn parse_key_values(text: &str) -> Result<Map<String, Value>> {
    let mut map = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        let v = v.trim();
        // Numbers and booleans keep their JSON meaning; anything else is a string.
        let value = serde_json::from_str::<Value>(v).ok().filter(|x| x.is_number() || x.is_boolean()).unwrap_or_else(|| Value::String(v.trim_matches('"').to_string()));
        if map.insert(k.trim().to_string(), value).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {:?}", i + 1, k.trim())));
        }
    }
    Ok(map)
}
