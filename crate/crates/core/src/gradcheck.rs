//! Central finite-difference checks of reverse-mode gradients in 64-bit.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::depthnet::{DepthNet, DepthNetConfig, OutputRes, Variant};
use crate::error::Result;
use crate::geometry::{disp_to_depth, inverse_warp, project, DepthConstants, Intrinsics};
use crate::losses::{
    edge_aware_smoothness, md_smoothness_loss, min_reprojection, photometric_rho, ssim, total_loss, LossConfig,
    ScaleTerms,
};
use crate::nn::{
    BatchNorm2d, DsConv, DsConvConfig, InvertedResidual, InvertedResidualConfig, SeBlock, SeConfig, UpsampleBlock,
    UpsampleConfig,
};
use crate::params::{ParamId, ParamStore, Session};
use crate::posenet::{PoseNet, PoseNetConfig};
use crate::tensor::Tensor;
use crate::trainer::{compute_loss_with_weights, generate_synthetic_sequence, Batch, SynthSceneConfig, TrainConfig};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so vanishing gradients are compared absolutely.
pub const DENOM_FLOOR: f64 = 1e-6;
/// Floor for the end-to-end objective. Its evaluation carries roughly 1e-15 of
/// rounding noise, i.e. about 1e-10 in each central difference.
pub const END_TO_END_DENOM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Number of scalar coordinates compared.
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    rel_error_floored(analytic, numeric, DENOM_FLOOR)
}

pub fn rel_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Fixed random weights turning a tensor output into a scalar.
fn reduce<'t>(out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    if out.value().numel() == 1 {
        return out.sum().reshape(&[]).map(|v| v.sum());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok(out.mul_const(&w)?.sum())
}

/// Indices to probe: all of them, or `limit` random ones.
fn sample_indices(n: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
        _ => (0..n).collect(),
    }
}

/// Checks the gradient of `f` with respect to every input tensor.
///
/// Non-scalar outputs are reduced with fixed random weights. At most
/// `limit` coordinates per input are probed when given.
pub fn check_fn<F>(name: &str, inputs: &[Tensor<f64>], limit: Option<usize>, seed: u64, f: F) -> Result<CheckResult>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = xs.iter().map(|x| tape.var(x.clone())).collect();
        Ok(reduce(f(&tape, &vars)?, seed)?.value().data()[0])
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let root = reduce(f(&tape, &vars)?, seed)?;
    let grads = tape.backward(root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v);
        for i in sample_indices(inputs[k].numel(), limit, &mut rng) {
            let x0 = inputs[k].data()[i];
            xs[k].data_mut()[i] = x0 + STEP;
            let fp = eval(&xs)?;
            xs[k].data_mut()[i] = x0 - STEP;
            let fm = eval(&xs)?;
            xs[k].data_mut()[i] = x0;
            worst = worst.max(rel_error(g.data()[i], (fp - fm) / (2.0 * STEP)));
            checked += 1;
        }
    }
    Ok(CheckResult { name: String::from(name), max_rel_error: worst, checked })
}

/// Checks parameter gradients of a session-based computation.
///
/// `coords` lists `(parameter, element index)` pairs to probe.
pub fn check_params<F>(name: &str, store: &ParamStore<f64>, coords: &[(ParamId, usize)], seed: u64, f: F) -> Result<CheckResult>
where
    F: for<'t, 's> Fn(&Session<'t, 's, f64>) -> Result<Var<'t, f64>>,
{
    check_params_floored(name, store, coords, seed, DENOM_FLOOR, f)
}

/// [`check_params`] with an explicit relative-error denominator floor.
pub fn check_params_floored<F>(
    name: &str,
    store: &ParamStore<f64>,
    coords: &[(ParamId, usize)],
    seed: u64,
    floor: f64,
    f: F,
) -> Result<CheckResult>
where
    F: for<'t, 's> Fn(&Session<'t, 's, f64>) -> Result<Var<'t, f64>>,
{
    let eval = |st: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let s = Session::with_mode(&tape, st, true, false);
        Ok(reduce(f(&s)?, seed)?.value().data()[0])
    };
    let tape = Tape::new();
    let s = Session::train(&tape, store);
    let root = reduce(f(&s)?, seed)?;
    let grads = tape.backward(root)?;
    let param_grads = s.param_grads(&grads);
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for &(id, i) in coords {
        let analytic = param_grads.iter().find(|(p, _)| *p == id).map_or(0.0, |(_, g)| g.data()[i]);
        let x0 = store.value(id).data()[i];
        work.value_mut(id).data_mut()[i] = x0 + STEP;
        let fp = eval(&work)?;
        work.value_mut(id).data_mut()[i] = x0 - STEP;
        let fm = eval(&work)?;
        work.value_mut(id).data_mut()[i] = x0;
        worst = worst.max(rel_error_floored(analytic, (fp - fm) / (2.0 * STEP), floor));
    }
    Ok(CheckResult { name: String::from(name), max_rel_error: worst, checked: coords.len() })
}

/// `limit` random `(parameter, index)` pairs over the trainable entries of `ids`
/// (every element when `limit` is `None`).
pub fn sample_param_coords(store: &ParamStore<f64>, ids: &[ParamId], limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<(ParamId, usize)> {
    let mut all: Vec<(ParamId, usize)> = Vec::new();
    for &id in ids {
        if store.get(id).trainable {
            all.extend((0..store.value(id).numel()).map(|i| (id, i)));
        }
    }
    match limit {
        Some(k) if k < all.len() => (0..k).map(|_| all[rng.random_range(0..all.len())]).collect(),
        _ => all,
    }
}

/// Moves zero-initialised biases and batch-norm shifts to small random values.
///
/// With zero biases, a convolution over an all-zero ReLU patch outputs exactly
/// 0, the kink of the next activation, where central differences disagree
/// with any one-sided derivative.
pub fn randomize_offsets(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let p = store.get(id);
        if p.trainable && (p.name.ends_with("bias") || p.name.ends_with("beta")) {
            for v in store.value_mut(id).data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

type OpCheck = (&'static str, Vec<Tensor<f64>>, Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>>);

fn op_checks(rng: &mut ChaCha8Rng) -> Vec<OpCheck> {
    let x = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -2.0, 2.0);
    let pos = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, 0.5, 2.0);
    vec![
        ("conv2d 3x3", vec![x(rng, &[2, 3, 5, 6]), x(rng, &[4, 3, 3, 3]), x(rng, &[4])], Box::new(|_, v| v[0].conv2d(&v[1], Some(&v[2]), 1, 1, 1))),
        ("conv2d stride 2", vec![x(rng, &[1, 2, 7, 6]), x(rng, &[3, 2, 3, 3]), x(rng, &[3])], Box::new(|_, v| v[0].conv2d(&v[1], Some(&v[2]), 2, 1, 1))),
        ("conv2d grouped", vec![x(rng, &[1, 4, 5, 5]), x(rng, &[6, 2, 3, 3])], Box::new(|_, v| v[0].conv2d(&v[1], None, 1, 1, 2))),
        ("conv2d depthwise stride 2", vec![x(rng, &[2, 3, 6, 6]), x(rng, &[3, 1, 3, 3]), x(rng, &[3])], Box::new(|_, v| v[0].conv2d(&v[1], Some(&v[2]), 2, 1, 3))),
        ("conv2d pointwise", vec![x(rng, &[2, 3, 4, 5]), x(rng, &[5, 3, 1, 1]), x(rng, &[5])], Box::new(|_, v| v[0].conv2d(&v[1], Some(&v[2]), 1, 0, 1))),
        ("conv2d 7x7 stride 2", vec![x(rng, &[1, 2, 9, 8]), x(rng, &[2, 2, 7, 7])], Box::new(|_, v| v[0].conv2d(&v[1], None, 2, 3, 1))),
        ("linear", vec![x(rng, &[3, 4]), x(rng, &[5, 4]), x(rng, &[5])], Box::new(|_, v| v[0].linear(&v[1], Some(&v[2])))),
        ("bilinear upsample", vec![x(rng, &[1, 2, 3, 4])], Box::new(|_, v| v[0].bilinear_resize(7, 9))),
        ("bilinear downsample", vec![x(rng, &[1, 2, 8, 6])], Box::new(|_, v| v[0].bilinear_resize(3, 5))),
        ("nearest upsample", vec![x(rng, &[2, 2, 3, 3])], Box::new(|_, v| v[0].nearest_upsample2x())),
        ("relu", vec![x(rng, &[2, 3, 4])], Box::new(|_, v| Ok(v[0].relu()))),
        ("relu6", vec![uniform(rng, &[2, 3, 4], -3.0, 9.0)], Box::new(|_, v| Ok(v[0].relu6()))),
        ("sigmoid", vec![x(rng, &[2, 3, 4])], Box::new(|_, v| Ok(v[0].sigmoid()))),
        ("exp", vec![x(rng, &[2, 3, 4])], Box::new(|_, v| Ok(v[0].exp()))),
        ("abs", vec![x(rng, &[2, 3, 4])], Box::new(|_, v| Ok(v[0].abs()))),
        ("recip", vec![pos(rng, &[2, 3, 4])], Box::new(|_, v| Ok(v[0].recip()))),
        ("square", vec![x(rng, &[2, 3, 4])], Box::new(|_, v| Ok(v[0].square()))),
        ("add", vec![x(rng, &[2, 5]), x(rng, &[2, 5])], Box::new(|_, v| v[0].add(&v[1]))),
        ("sub", vec![x(rng, &[2, 5]), x(rng, &[2, 5])], Box::new(|_, v| v[0].sub(&v[1]))),
        ("mul", vec![x(rng, &[2, 5]), x(rng, &[2, 5])], Box::new(|_, v| v[0].mul(&v[1]))),
        ("div", vec![x(rng, &[2, 5]), pos(rng, &[2, 5])], Box::new(|_, v| v[0].div(&v[1]))),
        ("elementwise min", vec![x(rng, &[3, 5]), x(rng, &[3, 5])], Box::new(|_, v| v[0].minimum(&v[1]))),
        ("scalar mul", vec![x(rng, &[2, 5])], Box::new(|_, v| Ok(v[0].scale(-1.7)))),
        ("add scalar", vec![x(rng, &[2, 5])], Box::new(|_, v| Ok(v[0].add_scalar(0.3).square()))),
        ("sum", vec![x(rng, &[2, 5])], Box::new(|_, v| Ok(v[0].square().sum()))),
        ("mean", vec![x(rng, &[2, 5])], Box::new(|_, v| Ok(v[0].square().mean()))),
        ("concat channels", vec![x(rng, &[2, 2, 3, 3]), x(rng, &[2, 3, 3, 3])], Box::new(|_, v| v[0].concat_channels(&v[1]))),
        ("narrow channels", vec![x(rng, &[2, 5, 3])], Box::new(|_, v| v[0].narrow_channels(1, 3))),
        ("global average pool", vec![x(rng, &[2, 3, 4, 5])], Box::new(|_, v| v[0].global_avg_pool())),
        ("channel mean", vec![x(rng, &[2, 3, 4, 5])], Box::new(|_, v| v[0].mean_channels())),
        ("channel scale", vec![x(rng, &[2, 3, 4, 4]), x(rng, &[2, 3])], Box::new(|_, v| v[0].mul_channel(&v[1]))),
        ("box filter", vec![x(rng, &[2, 2, 5, 6])], Box::new(|_, v| v[0].box_filter(1))),
        ("forward difference x", vec![x(rng, &[2, 2, 4, 5])], Box::new(|_, v| v[0].diff_x())),
        ("forward difference y", vec![x(rng, &[2, 2, 4, 5])], Box::new(|_, v| v[0].diff_y())),
        ("max pool", vec![x(rng, &[2, 2, 7, 6])], Box::new(|_, v| v[0].max_pool2d(3, 2, 1))),
        (
            "batch norm (batch statistics)",
            vec![x(rng, &[3, 2, 3, 4]), pos(rng, &[2]), x(rng, &[2])],
            Box::new(|_, v| Ok(v[0].batch_norm(&v[1], &v[2], None, 1e-5)?.0)),
        ),
        (
            "batch norm (running statistics)",
            vec![x(rng, &[2, 2, 3, 3]), pos(rng, &[2]), x(rng, &[2])],
            Box::new(|_, v| {
                let (m, var) = (Tensor::new(&[2], vec![0.1, -0.2])?, Tensor::new(&[2], vec![0.8, 1.3])?);
                Ok(v[0].batch_norm(&v[1], &v[2], Some((&m, &var)), 1e-5)?.0)
            }),
        ),
        ("reshape", vec![x(rng, &[2, 6])], Box::new(|_, v| Ok(v[0].reshape(&[3, 4])?.square()))),
        ("axis-angle to matrix", vec![x(rng, &[3, 3])], Box::new(|_, v| v[0].axis_angle_to_matrix())),
        ("axis-angle to matrix near zero", vec![uniform(rng, &[2, 3], -1e-5, 1e-5)], Box::new(|_, v| v[0].axis_angle_to_matrix())),
        (
            "grid sample",
            vec![x(rng, &[2, 2, 5, 6]), {
                let mut c = uniform(rng, &[2, 2, 4, 3], -0.8, 5.8);
                // Keep y in its own range.
                for b in 0..2 {
                    for i in 0..12 {
                        let y = &mut c.data_mut()[b * 24 + 12 + i];
                        *y = *y * 5.0 / 6.6;
                    }
                }
                c
            }],
            Box::new(|_, v| v[0].grid_sample(&v[1])),
        ),
        (
            "projection",
            vec![uniform(rng, &[2, 1, 4, 5], 1.0, 3.0), x(rng, &[2, 3]).map(|v| v * 0.05), x(rng, &[2, 3]).map(|v| v * 0.1)],
            Box::new(|_, v| {
                let r = v[1].axis_angle_to_matrix()?;
                let k = [[4.0, 4.5, 2.0, 1.5], [5.0, 4.0, 2.5, 2.0]];
                Ok(v[0].project(&r, &v[2], &k)?.0)
            }),
        ),
    ]
}

fn block_checks(rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut check_block = |name: &str,
                           build: &dyn Fn(&mut ParamStore<f64>, &mut ChaCha8Rng) -> Box<dyn for<'t, 's> Fn(&Session<'t, 's, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>>,
                           input: Tensor<f64>,
                           rng: &mut ChaCha8Rng|
     -> Result<()> {
        let mut store = ParamStore::new();
        let fwd = build(&mut store, rng);
        randomize_offsets(&mut store, rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let coords = sample_param_coords(&store, &ids, Some(60), rng);
        let x = input.clone();
        out.push(check_params(&format!("{name} (weights)"), &store, &coords, seed, |s| fwd(s, s.tape().constant(x.clone())))?);
        let st = store.clone();
        out.push(check_fn(&format!("{name} (input)"), &[input], Some(60), seed, |tape, v| {
            let s = Session::with_mode(tape, &st, true, false);
            fwd(&s, v[0])
        })?);
        Ok(())
    };
    let se = SeConfig { channels: 8, reduction: 4 };
    check_block(
        "SE block",
        &|st, r| {
            let b = SeBlock::new(st, "se", se, r);
            Box::new(move |s, x| b.forward(s, x))
        },
        uniform(rng, &[2, 8, 3, 3], -2.0, 2.0),
        rng,
    )?;
    for stride in [1, 2] {
        let cfg = InvertedResidualConfig { channels: 4, expansion: 2, stride, se_reduction: 4 };
        check_block(
            &format!("inverted residual stride {stride}"),
            &|st, r| {
                let b = InvertedResidual::new(st, "ir", cfg, r);
                Box::new(move |s, x| b.forward(s, x))
            },
            uniform(rng, &[2, 4, 6, 6], -2.0, 2.0),
            rng,
        )?;
    }
    for (name, cfg) in [
        ("residual DSconv with shortcut", DsConvConfig::new(4, 4)),
        ("residual DSconv without shortcut", DsConvConfig::new(6, 3)),
        ("DSconv disparity head", DsConvConfig { head: true, ..DsConvConfig::new(4, 1) }),
        ("standard conv decoder block", DsConvConfig { lightweight: false, ..DsConvConfig::new(4, 4) }),
    ] {
        check_block(
            name,
            &|st, r| {
                let b = DsConv::new(st, "ds", cfg, r);
                Box::new(move |s, x| b.forward(s, x))
            },
            uniform(rng, &[2, cfg.in_ch, 4, 5], -2.0, 2.0),
            rng,
        )?;
    }
    let skip = uniform(rng, &[1, 4, 6, 8], -2.0, 2.0);
    for (name, has_skip) in [("upsample block with skip", true), ("upsample block without skip", false)] {
        let cfg = UpsampleConfig { channels: 4, has_skip, emits_disparity: true, lightweight: true };
        let skip = skip.clone();
        check_block(
            name,
            &|st, r| {
                let b = UpsampleBlock::new(st, "up", cfg, r);
                let skip = skip.clone();
                Box::new(move |s, x| {
                    let sk = has_skip.then(|| s.tape().constant(skip.clone()));
                    let o = b.forward(s, x, sk)?;
                    // Both outputs feed the scalar.
                    o.features.mean().add(&o.disparity.expect("head").sum()).map(|v| v.reshape(&[1]).expect("scalar"))
                })
            },
            uniform(rng, &[1, 4, 3, 4], -2.0, 2.0),
            rng,
        )?;
    }
    check_block(
        "batch norm layer",
        &|st, _| {
            let b = BatchNorm2d::new(st, "bn", 3);
            Box::new(move |s, x| b.forward(s, x))
        },
        uniform(rng, &[2, 3, 3, 3], -2.0, 2.0),
        rng,
    )?;
    Ok(out)
}

fn warp_and_loss_checks(rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let k = Intrinsics { fx: 6.0, fy: 6.0, cx: 3.5, cy: 3.5 };
    let cfg = LossConfig::default();
    let img = |rng: &mut ChaCha8Rng, n: usize| uniform(rng, &[n, 3, 8, 8], 0.0, 1.0);
    let source = img(rng, 1);
    let target = img(rng, 1);
    let disp = uniform(rng, &[1, 1, 8, 8], 0.05, 0.15);
    let rot = uniform(rng, &[1, 3], -0.02, 0.02);
    let trans = uniform(rng, &[1, 3], -0.05, 0.05);
    {
        let source = source.clone();
        out.push(check_fn("inverse warp (disparity, pose, image)", &[disp.clone(), rot.clone(), trans.clone(), source.clone()], None, seed, move |_, v| {
            let depth = disp_to_depth(v[0], DepthConstants::default());
            let (coords, _) = project(depth, v[1].axis_angle_to_matrix()?, v[2], &[k])?;
            Ok(inverse_warp(v[3], coords)?.0)
        })?);
    }
    out.push(check_fn("ssim", &[img(rng, 1), img(rng, 1)], None, seed, |_, v| ssim(v[0], v[1], &cfg))?);
    out.push(check_fn("photometric cost", &[img(rng, 1), img(rng, 1)], None, seed, |_, v| photometric_rho(v[0], v[1], &cfg))?);
    let masks = [
        Tensor::new(&[1, 1, 4, 4], (0..16).map(|i| f64::from(u8::from(i % 5 != 0))).collect())?,
        Tensor::new(&[1, 1, 4, 4], (0..16).map(|i| f64::from(u8::from(i % 3 != 0))).collect())?,
    ];
    out.push(check_fn(
        "masked min reprojection",
        &[uniform(rng, &[1, 1, 4, 4], 0.0, 1.0), uniform(rng, &[1, 1, 4, 4], 0.0, 1.0)],
        None,
        seed,
        |_, v| min_reprojection(&[v[0], v[1]], Some(&masks)),
    )?);
    out.push(check_fn("edge-aware smoothness", &[uniform(rng, &[2, 1, 5, 6], 0.1, 1.0), uniform(rng, &[2, 3, 5, 6], 0.0, 1.0)], None, seed, |_, v| {
        edge_aware_smoothness(v[0], v[1])
    })?);
    let beta = uniform(rng, &[1, 1, 5, 6], 0.0, 1.0);
    out.push(check_fn("model-driven smoothness", &[uniform(rng, &[1, 1, 5, 6], 0.1, 1.0)], None, seed, |tape, v| {
        md_smoothness_loss(v[0], tape.constant(Tensor::full(&[1, 3, 5, 6], 0.5)), &beta)
    })?);
    {
        let (source, target) = (source.clone(), target.clone());
        out.push(check_fn("total loss (disparity, pose)", &[disp, rot, trans], None, seed, move |tape, v| {
            let depth = disp_to_depth(v[0], DepthConstants::default());
            let (coords, mask) = project(depth, v[1].axis_angle_to_matrix()?, v[2], &[k])?;
            let t = tape.constant(target.clone());
            let warped = tape.constant(source.clone()).grid_sample(&coords)?;
            let ph = min_reprojection(&[photometric_rho(t, warped, &cfg)?], Some(&[mask]))?;
            let beta = Tensor::full(&[1, 1, 8, 8], 0.7);
            let md = md_smoothness_loss(v[0], t, &beta)?;
            Ok(total_loss(&[ScaleTerms { scale: 1, photometric: ph, md_smoothness: md }], &LossConfig { lambda: 0.5, ..cfg })?.0)
        })?);
    }
    Ok(out)
}

/// Fixture for the end-to-end check: a 16x32 synthetic triplet and tiny networks.
pub fn end_to_end_fixture(seed: u64) -> Result<(DepthNet, PoseNet, ParamStore<f64>, Batch<f64>, TrainConfig)> {
    let seq = generate_synthetic_sequence(&SynthSceneConfig { width: 32, height: 16, frames: 3, seed, speed: 0.3, min_in_frame: 0.5 })?;
    let batch = Batch::from_triplets(&seq.triplets())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let depth_cfg = DepthNetConfig { base_channels: 8, iterations: 3, se_reduction: 4, ..DepthNetConfig::new(Variant::Small, OutputRes::F) };
    let depth = DepthNet::build(&mut store, "depth", depth_cfg, &mut rng)?;
    let pose = PoseNet::build(&mut store, "pose", PoseNetConfig { width_multiplier: 0.125 }, &mut rng)?;
    randomize_offsets(&mut store, &mut rng);
    Ok((depth, pose, store, batch, TrainConfig { batch_size: 1, ..TrainConfig::default() }))
}

/// Gradient of the full training objective with respect to random weights of both networks.
pub fn end_to_end_check(seed: u64, coords_per_net: usize) -> Result<CheckResult> {
    let (depth, pose, store, batch, cfg) = end_to_end_fixture(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let mut coords = sample_param_coords(&store, &depth.param_ids(), Some(coords_per_net), &mut rng);
    coords.extend(sample_param_coords(&store, &pose.param_ids(), Some(coords_per_net), &mut rng));
    // The smoothness weights are detached, so they are held at their values at the base point.
    let betas = {
        let tape = Tape::new();
        let s = Session::with_mode(&tape, &store, true, false);
        compute_loss_with_weights(&s, &depth, &pose, &batch, &cfg, None)?.2
    };
    check_params_floored("train_step objective (16x32 scene)", &store, &coords, seed, END_TO_END_DENOM_FLOOR, |s| {
        Ok(compute_loss_with_weights(s, &depth, &pose, &batch, &cfg, Some(&betas))?.0)
    })
}

/// Every check: tensor ops, blocks, warp, loss terms and the end-to-end objective.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, f) in op_checks(&mut rng) {
        out.push(check_fn(name, &inputs, None, seed, |t, v| f(t, v))?);
    }
    out.extend(block_checks(&mut rng, seed)?);
    out.extend(warp_and_loss_checks(&mut rng, seed)?);
    out.push(end_to_end_check(seed, 40)?);
    Ok(out)
}
