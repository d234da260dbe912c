//! Parameter, model-size and FLOP accounting for depth network configurations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::depthnet::{DepthNet, DepthNetConfig};
use crate::error::Result;
use crate::nn::{LayerCost, MacConvention};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Bytes per stored parameter (32-bit floats).
pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub total: u64,
    /// `(parameter name, element count)`, each tensor once.
    pub breakdown: Vec<(String, u64)>,
}

/// Counts trainable elements among `ids`; repeated ids are counted once.
pub fn count_params<T: Scalar>(store: &ParamStore<T>, ids: &[ParamId]) -> ParamReport {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let breakdown: Vec<(String, u64)> = ids
        .iter()
        .map(|&id| store.get(id))
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.value.numel() as u64))
        .collect();
    ParamReport { total: breakdown.iter().map(|(_, n)| n).sum(), breakdown }
}

pub fn count_net_params<T: Scalar>(net: &DepthNet, store: &ParamStore<T>) -> ParamReport {
    count_params(store, &net.param_ids())
}

pub fn model_size_bytes(params: u64) -> u64 {
    params * BYTES_PER_PARAM
}

/// Decimal megabytes (10^6 bytes).
pub fn model_size_mb(params: u64) -> f64 {
    model_size_bytes(params) as f64 / 1e6
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub height: usize,
    pub width: usize,
    pub records: Vec<LayerCost>,
}

impl FlopReport {
    pub fn macs(&self) -> u64 {
        self.records.iter().map(|r| r.macs).sum()
    }

    pub fn elementwise(&self) -> u64 {
        self.records.iter().map(|r| r.elementwise).sum()
    }

    pub fn total(&self, convention: MacConvention) -> u64 {
        self.macs() * convention.factor() + self.elementwise()
    }
}

pub fn count_flops(cfg: &DepthNetConfig, height: usize, width: usize) -> Result<FlopReport> {
    Ok(FlopReport { height, width, records: cfg.costs(height, width)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub name: String,
    pub config: DepthNetConfig,
    pub params: u64,
    pub model_size_bytes: u64,
    pub flops: FlopReport,
}

impl ProfileReport {
    pub fn model_size_mb(&self) -> f64 {
        self.model_size_bytes as f64 / 1e6
    }

    pub fn gflops(&self, convention: MacConvention) -> f64 {
        self.flops.total(convention) as f64 / 1e9
    }
}

/// Builds the network (weights are irrelevant) and profiles it at `height x width`.
pub fn profile(cfg: &DepthNetConfig, height: usize, width: usize) -> Result<ProfileReport> {
    let mut store = ParamStore::<f32>::new();
    let net = DepthNet::build(&mut store, "depth", *cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let params = count_net_params(&net, &store).total;
    Ok(ProfileReport {
        name: cfg.name(),
        config: *cfg,
        params,
        model_size_bytes: model_size_bytes(params),
        flops: count_flops(cfg, height, width)?,
    })
}

/// Comma-separated and aligned-text renderings of a profile table.
///
/// FLOPs are listed under both MAC conventions; `primary` picks the column
/// labelled `gflops`.
pub fn profile_table(reports: &[ProfileReport], primary: MacConvention) -> (String, String) {
    let header = ["model", "input", "params", "params_m", "size_mb", "gflops", "gflops_1mac", "gflops_2mac"];
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                format!("{}x{}", r.flops.width, r.flops.height),
                format!("{}", r.params),
                format!("{:.3}", r.params as f64 / 1e6),
                format!("{:.3}", r.model_size_mb()),
                format!("{:.3}", r.gflops(primary)),
                format!("{:.3}", r.gflops(MacConvention::One)),
                format!("{:.3}", r.gflops(MacConvention::Two)),
            ]
        })
        .collect();
    let mut csv = header.join(",");
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut text = String::new();
    let mut line = |cells: &[&str]| {
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(text, "{cell:<w$}");
            } else {
                let _ = write!(text, "  {cell:>w$}");
            }
        }
        text.push('\n');
    };
    line(&header);
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&cells);
    }
    (csv, text)
}
