//! Self-supervised training: augmentation, normalisation, learning-rate
//! schedule, the per-step objective and a synthetic data source.

mod augment;
mod synth;

pub use augment::{augment, color_jitter, flip_horizontal, hsv_to_rgb, rgb_to_hsv, AugmentParams, ColorJitter};
pub use synth::{
    default_intrinsics, generate_synthetic_sequence, in_frame_fraction, Scene, SynthFrame, SynthSceneConfig, SynthSequence,
};

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::depthnet::{DepthNet, DepthNetConfig};
use crate::error::{Error, Result};
use crate::geometry::{disp_to_depth, project, DepthConstants, Intrinsics};
use crate::losses::{
    l1_residual, md_smoothness_loss, min_reprojection, model_driven_weight, photometric_rho, total_loss, LossConfig,
    LossReport, ScaleTerms,
};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamStore, Session};
use crate::posenet::{PoseNet, PoseNetConfig};
use crate::scalar::Scalar;
use crate::shape_err;
use crate::tensor::Tensor;

pub const NORM_MEAN: f64 = 0.45;
pub const NORM_STD: f64 = 0.225;

/// `(x - 0.45) / 0.225`.
pub fn normalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let m = T::from_f64(NORM_MEAN);
    let s = T::from_f64(NORM_STD);
    x.map(|v| (v - m) / s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// The learning rate halves every this many epochs.
    pub lr_decay_epochs: usize,
    pub seed: u64,
    pub augment: bool,
    pub loss: LossConfig,
    pub depth_constants: DepthConstants,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 6,
            epochs: 40,
            lr0: 1e-4,
            lr_decay_epochs: 30,
            seed: 0,
            augment: true,
            loss: LossConfig::default(),
            depth_constants: DepthConstants::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("batch_size must be at least 1")));
        }
        if !(self.lr0 > 0.0) || self.lr_decay_epochs == 0 {
            return Err(Error::Config(format!("invalid learning-rate schedule: lr0 {} every {}", self.lr0, self.lr_decay_epochs)));
        }
        self.loss.validate()
    }
}

/// `lr0 * 0.5^floor(epoch / lr_decay_epochs)`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * Float::powi(0.5f64, (epoch / cfg.lr_decay_epochs) as i32)
}

/// Three consecutive frames `[3, H, W]` in `[0, 1]`; the middle one is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet<T> {
    pub prev: Tensor<T>,
    pub target: Tensor<T>,
    pub next: Tensor<T>,
    pub intrinsics: Intrinsics,
}

impl<T: Scalar> Triplet<T> {
    pub fn cast<U: Scalar>(&self) -> Triplet<U> {
        Triplet { prev: self.prev.cast(), target: self.target.cast(), next: self.next.cast(), intrinsics: self.intrinsics }
    }
}

/// Stacked triplets, frames `[N, 3, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub prev: Tensor<T>,
    pub target: Tensor<T>,
    pub next: Tensor<T>,
    pub intrinsics: Vec<Intrinsics>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_triplets(items: &[Triplet<T>]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Contract(format!("cannot build an empty batch")));
        }
        let stack = |f: &dyn Fn(&Triplet<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
            let frames: Vec<Tensor<T>> = items
                .iter()
                .map(|t| {
                    let x = f(t);
                    let mut s = alloc::vec![1];
                    s.extend_from_slice(x.shape());
                    x.clone().reshape(&s)
                })
                .collect::<Result<_>>()?;
            Tensor::stack_batch(&frames)
        };
        let b = Batch {
            prev: stack(&|t| &t.prev)?,
            target: stack(&|t| &t.target)?,
            next: stack(&|t| &t.next)?,
            intrinsics: items.iter().map(|t| t.intrinsics).collect(),
        };
        let s = b.target.shape();
        if s.len() != 4 || s[1] != 3 || b.prev.shape() != s || b.next.shape() != s {
            return Err(shape_err!("triplet frames must share a [3, H, W] shape"));
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the full objective for one batch on the session's tape.
pub fn compute_loss<'t, T: Scalar>(
    s: &Session<'t, '_, T>,
    depth_net: &DepthNet,
    pose_net: &PoseNet,
    batch: &Batch<T>,
    cfg: &TrainConfig,
) -> Result<(Var<'t, T>, LossReport)> {
    let (loss, report, _) = compute_loss_with_weights(s, depth_net, pose_net, batch, cfg, None)?;
    Ok((loss, report))
}

/// [`compute_loss`] with the smoothness weights optionally fixed (one map per
/// scale, finest first). Also returns the weights that were used.
///
/// The weights never carry gradient; fixing them turns the objective into the
/// function whose gradient backpropagation computes.
pub fn compute_loss_with_weights<'t, T: Scalar>(
    s: &Session<'t, '_, T>,
    depth_net: &DepthNet,
    pose_net: &PoseNet,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    fixed_beta: Option<&[Tensor<T>]>,
) -> Result<(Var<'t, T>, LossReport, Vec<Tensor<T>>)> {
    let tape = s.tape();
    let target_raw = tape.constant(batch.target.clone());
    let target_in = tape.constant(normalize(&batch.target));
    let sources = [&batch.prev, &batch.next];
    let depth_out = depth_net.forward(s, target_in)?;
    for (&stride, d) in depth_out.strides.iter().zip(&depth_out.disparities) {
        ensure_finite(&d.value(), || format!("disparity at scale {stride}"))?;
    }
    let mut poses = Vec::with_capacity(sources.len());
    let mut source_raw = Vec::with_capacity(sources.len());
    for src in sources {
        let src_in = tape.constant(normalize(src));
        let p = pose_net.forward(s, target_in, src_in)?;
        ensure_finite(&p.rotation.value(), || "pose rotation".into())?;
        ensure_finite(&p.translation.value(), || "pose translation".into())?;
        poses.push((p.rotation.axis_angle_to_matrix()?, p.translation));
        source_raw.push(tape.constant(src.clone()));
    }
    if let Some(b) = fixed_beta {
        if b.len() != depth_out.disparities.len() {
            return Err(Error::Contract(format!("{} fixed weight maps for {} scales", b.len(), depth_out.disparities.len())));
        }
    }
    let mut terms = Vec::with_capacity(depth_out.disparities.len());
    let mut betas = Vec::with_capacity(depth_out.disparities.len());
    for (k, (&scale, &disp)) in depth_out.strides.iter().zip(&depth_out.disparities).enumerate() {
        let depth = disp_to_depth(disp, cfg.depth_constants);
        let mut costs = Vec::with_capacity(sources.len());
        let mut masks = Vec::with_capacity(sources.len());
        let mut residuals = Vec::with_capacity(sources.len());
        for (&(rot, trans), &src) in poses.iter().zip(&source_raw) {
            let (coords, mask) = project(depth, rot, trans, &batch.intrinsics)?;
            let warped = src.grid_sample(&coords)?;
            costs.push(photometric_rho(target_raw, warped, &cfg.loss)?);
            residuals.push((*l1_residual(target_raw, warped.detach())?.value()).clone());
            masks.push(mask);
        }
        let photometric = min_reprojection(&costs, Some(&masks))?;
        let beta = match fixed_beta {
            Some(b) => b[k].clone(),
            None => {
                let (residual, valid) = min_valid_residual(&residuals, &masks)?;
                model_driven_weight(&residual, Some(&valid), cfg.loss.md_constant)?
            }
        };
        let md_smoothness = md_smoothness_loss(disp, target_raw, &beta)?;
        terms.push(ScaleTerms { scale, photometric, md_smoothness });
        betas.push(beta);
    }
    let (loss, report) = total_loss(&terms, &cfg.loss)?;
    Ok((loss, report, betas))
}

fn ensure_finite<T: Scalar>(t: &Tensor<T>, what: impl FnOnce() -> alloc::string::String) -> Result<()> {
    match t.data().iter().filter(|v| !v.is_finite()).count() {
        0 => Ok(()),
        n => Err(Error::NonFinite(format!("{n} non-finite values in {}", what()))),
    }
}

/// Per-pixel minimum residual over the sources in which the pixel is valid,
/// zero where it is valid in none, and the union of the masks.
fn min_valid_residual<T: Scalar>(residuals: &[Tensor<T>], masks: &[Tensor<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = residuals[0].shape();
    let mut best = alloc::vec![T::infinity(); residuals[0].numel()];
    for (r, m) in residuals.iter().zip(masks) {
        r.expect_same_shape(m)?;
        for ((b, &rv), &mv) in best.iter_mut().zip(r.data()).zip(m.data()) {
            if mv > T::zero() && rv < *b {
                *b = rv;
            }
        }
    }
    let valid: Vec<T> = best.iter().map(|b| if b.is_finite() { T::one() } else { T::zero() }).collect();
    let best = best.into_iter().map(|b| if b.is_finite() { b } else { T::zero() }).collect();
    Ok((Tensor::new(shape, best)?, Tensor::new(shape, valid)?))
}

/// Both networks, their shared parameter store and the optimiser.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub depth: DepthNet,
    pub pose: PoseNet,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(depth_cfg: DepthNetConfig, pose_cfg: PoseNetConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let depth = DepthNet::build(&mut store, "depth", depth_cfg, &mut rng)?;
        let pose = PoseNet::build(&mut store, "pose", pose_cfg, &mut rng)?;
        let adam = Adam::new(AdamConfig { lr: cfg.lr0, ..cfg.adam });
        Ok(Trainer { depth, pose, store, adam, cfg, rng })
    }

    /// Reassembles a trainer around existing weights.
    pub fn from_parts(depth: DepthNet, pose: PoseNet, store: ParamStore<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(AdamConfig { lr: cfg.lr0, ..cfg.adam });
        Ok(Trainer { depth, pose, store, adam, rng: ChaCha8Rng::seed_from_u64(cfg.seed), cfg })
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.adam.set_lr(lr_at_epoch(epoch, &self.cfg));
    }

    /// Loss of `batch` under the current weights without updating anything.
    pub fn evaluate(&self, batch: &Batch<T>) -> Result<LossReport> {
        let tape = Tape::new();
        let s = Session::with_mode(&tape, &self.store, true, false);
        Ok(compute_loss(&s, &self.depth, &self.pose, batch, &self.cfg)?.1)
    }

    /// One forward/backward pass and one Adam update; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<LossReport> {
        let (report, grads, buffers) = {
            let tape = Tape::new();
            let s = Session::train(&tape, &self.store);
            let (loss, report) = compute_loss(&s, &self.depth, &self.pose, batch, &self.cfg)?;
            let g = tape.backward(loss)?;
            let grads = s.param_grads(&g);
            (report, grads, s.finish())
        };
        self.adam.step(&mut self.store, &grads)?;
        for (id, value) in buffers {
            *self.store.value_mut(id) = value;
        }
        Ok(report)
    }

    /// One pass over `data` in shuffled batches, augmenting when configured.
    pub fn run_epoch(&mut self, data: &[Triplet<T>], epoch: usize) -> Result<Vec<LossReport>> {
        self.set_epoch(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut reports = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let items = chunk
                .iter()
                .map(|&i| if self.cfg.augment { augment(&data[i], &mut self.rng) } else { Ok(data[i].clone()) })
                .collect::<Result<Vec<_>>>()?;
            reports.push(self.train_step(&Batch::from_triplets(&items)?)?);
        }
        Ok(reports)
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}
