//! The `mininet` command line.
//!
//! Usage errors exit with status 2, runtime failures with status 1 after
//! printing `error: ...` to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mininet_core::depthnet::{DepthNetConfig, OutputRes, Variant};
use mininet_core::eval::{self, DepthEvalConfig, DepthMetrics};
use mininet_core::geometry::RigidTransform;
use mininet_core::gradcheck;
use mininet_core::nn::MacConvention;
use mininet_core::profiler;
use mininet_core::trainer::{augment, generate_synthetic_sequence, Batch, SynthSceneConfig, Trainer, Triplet};
use mininet_core::Tensor;
use rand::seq::SliceRandom;

use crate::checkpoint::{save_checkpoint, Model};
use crate::config::TrainSettings;
use crate::dataset::{self, SequenceDataset};
use crate::error::{Error, IoContext, Result};
use crate::image_io;
use crate::inference;
use crate::tensor_file;

#[derive(Debug, Parser)]
#[command(name = "mininet", version, about = "Lightweight self-supervised monocular depth and ego-motion")]
pub struct Cli {
    /// Worker threads for the matrix kernels (overrides MININET_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train depth and pose networks on a dataset or synthetic sequences.
    Train(TrainArgs),
    /// Predict disparity maps for images.
    Infer(InferArgs),
    /// Depth error metrics of predictions against ground truth.
    EvalDepth(EvalDepthArgs),
    /// Absolute trajectory error over 5-frame snippets.
    EvalPose(EvalPoseArgs),
    /// Parameter count, model size and FLOPs of depth network variants.
    Profile(ProfileArgs),
    /// Write a synthetic sequence dataset.
    SynthData(SynthArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Settings file, JSON or `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sequence dataset directories; synthetic sequences when omitted.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub synth_frames: usize,
    #[arg(long, default_value_t = 1)]
    pub synth_sequences: usize,
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
    /// Output directory for checkpoints and loss.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub out_res: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many optimiser steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub pose_width: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file, directory of images or sequence dataset.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Resize inputs to this width (defaults to the image width).
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredKind {
    Depth,
    Disparity,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    /// Prediction tensor file or directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth depth tensor file or directory, paired with `--pred` in sorted order.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = PredKind::Depth)]
    pub pred_kind: PredKind,
    #[arg(long, default_value_t = 80.0)]
    pub cap: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub cap_min: f64,
    #[arg(long)]
    pub no_median_scaling: bool,
    /// Evaluate on the centred 2:1 crop.
    #[arg(long)]
    pub make3d_crop: bool,
    /// Print one row per image before the mean.
    #[arg(long)]
    pub per_image: bool,
}

#[derive(Debug, Args)]
pub struct EvalPoseArgs {
    /// Ground-truth camera-to-world poses, 12 numbers per line.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted camera-to-world poses in the same format.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub snippet: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Original,
    Medium,
    Small,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResArg {
    F,
    H,
    Q,
    E,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MacArg {
    One,
    Two,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_enum, num_args = 1.., default_values_t = [VariantArg::All])]
    pub variant: Vec<VariantArg>,
    #[arg(long, value_enum, ignore_case = true, num_args = 1.., default_values_t = [ResArg::All])]
    pub out_res: Vec<ResArg>,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 192)]
    pub height: usize,
    /// Comma-separated output instead of the aligned table.
    #[arg(long)]
    pub csv: bool,
    /// Flops per multiply-accumulate in the `gflops` column.
    #[arg(long, value_enum, default_value_t = MacArg::Two)]
    pub mac: MacArg,
    /// Separate weights for every recurrent iteration.
    #[arg(long)]
    pub unshared: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Camera translation per frame.
    #[arg(long, default_value_t = 0.3)]
    pub speed: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let threads = cli.threads.or_else(|| std::env::var(crate::THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()));
    if let Some(n) = threads {
        crate::set_threads(n);
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::EvalDepth(a) => eval_depth(a),
        Command::EvalPose(a) => eval_pose(a),
        Command::Profile(a) => profile(a),
        Command::SynthData(a) => synth_data(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut s = match &a.config {
        Some(p) => TrainSettings::load(p)?,
        None => TrainSettings::default(),
    };
    if let Some(v) = a.variant {
        s.variant = v;
    }
    if let Some(v) = a.out_res {
        s.out_res = v;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { s.$f = v; })* };
    }
    set!(width, height, epochs, batch_size, lr, seed, max_steps, pose_width);
    if a.no_augment {
        s.augment = false;
    }
    s.validate()?;
    let model_cfg = s.model();
    let depth_cfg = model_cfg.depth()?;
    depth_cfg.check_input(s.height, s.width)?;
    let train_cfg = s.train_config()?;

    let data: Vec<Triplet<f32>> = if a.data.is_empty() {
        if a.synth_frames < 3 || a.synth_sequences == 0 {
            return Err(Error::Config("synthetic training needs at least one sequence of 3 frames".into()));
        }
        let mut out = Vec::new();
        for i in 0..a.synth_sequences as u64 {
            let seq = generate_synthetic_sequence(&SynthSceneConfig {
                width: s.width,
                height: s.height,
                frames: a.synth_frames,
                seed: a.synth_seed + i,
                ..Default::default()
            })?;
            out.extend(seq.triplets().iter().map(|t| t.cast()));
        }
        out
    } else {
        let mut out = Vec::new();
        for dir in &a.data {
            out.extend(SequenceDataset::open(dir)?.triplets::<f32>(s.width, s.height)?);
        }
        out
    };
    if data.is_empty() {
        return Err(Error::Config("no training triplets".into()));
    }
    info!("{} training triplets at {}x{}", data.len(), s.width, s.height);

    let mut tr = Trainer::<f32>::new(depth_cfg, model_cfg.pose()?, train_cfg)?;
    fs::create_dir_all(&a.out).at(&a.out)?;
    let log_path = a.out.join("loss.csv");
    let mut log = String::from("step,L_ph,L_md,total\n");
    let mut step = 0usize;
    let limit = if s.max_steps == 0 { usize::MAX } else { s.max_steps };
    'epochs: for epoch in 0..s.epochs {
        tr.set_epoch(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(tr.rng());
        for chunk in order.chunks(s.batch_size) {
            if step >= limit {
                break 'epochs;
            }
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                items.push(if s.augment { augment(&data[i], tr.rng())? } else { data[i].clone() });
            }
            let r = tr.train_step(&Batch::from_triplets(&items)?)?;
            step += 1;
            let _ = writeln!(log, "{step},{},{},{}", r.photometric, r.md_smoothness, r.total);
            info!("epoch {} step {step} loss {:.6}", epoch + 1, r.total);
        }
        fs::write(&log_path, &log).at(&log_path)?;
        save_checkpoint(a.out.join(format!("epoch_{:03}.ckpt", epoch + 1)), &model_cfg, &tr.store)?;
    }
    fs::write(&log_path, &log).at(&log_path)?;
    let final_path = a.out.join("final.ckpt");
    save_checkpoint(&final_path, &model_cfg, &tr.store)?;
    println!("{step} steps, checkpoint {}", final_path.display());
    Ok(())
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "ppm", "pnm", "jpg", "jpeg"];

fn sorted_files(dir: &Path, accept: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).at(dir)? {
        let p = e.at(dir)?.path();
        if p.is_file() && accept(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn has_extension(p: &Path, exts: &[&str]) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if input.join(dataset::IMAGE_DIR).is_dir() {
        return Ok(SequenceDataset::open(input)?.frames);
    }
    let files = sorted_files(input, |p| has_extension(p, &IMAGE_EXTENSIONS))?;
    if files.is_empty() {
        return Err(Error::Config(format!("no images found in {}", input.display())));
    }
    Ok(files)
}

fn load_frame(path: &Path, width: Option<usize>, height: Option<usize>) -> Result<Tensor<f32>> {
    match (width, height) {
        (None, None) => image_io::load_image(path),
        (w, h) => {
            let (iw, ih) = image_io::read_rgb(path).map(|i| (i.width() as usize, i.height() as usize))?;
            image_io::load_image_resized(path, w.unwrap_or(iw), h.unwrap_or(ih))
        }
    }
}

fn infer(a: InferArgs) -> Result<()> {
    let model = Model::<f32>::load(&a.checkpoint)?;
    let inputs = image_inputs(&a.input)?;
    let mut frames = Vec::with_capacity(inputs.len());
    for p in &inputs {
        let img = load_frame(p, a.width, a.height)?;
        model.depth.cfg.check_input(img.shape()[1], img.shape()[2]).map_err(|e| {
            Error::Config(format!("{}: {e} (use --width/--height to resize)", p.display()))
        })?;
        frames.push(img);
    }
    fs::create_dir_all(&a.out).at(&a.out)?;
    for (p, img) in inputs.iter().zip(&frames) {
        let disp = inference::predict_disparity(&model, img)?.swap_remove(0);
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into());
        let (t, g) = image_io::save_disparity(a.out.join(format!("{stem}_disp")), &disp)?;
        println!("{} -> {} {}", p.display(), t.display(), g.display());
    }
    Ok(())
}

fn tensor_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let files = sorted_files(path, |p| has_extension(p, &["tnsr"]))?;
        if files.is_empty() {
            return Err(Error::Config(format!("no .tnsr files in {}", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Height and width of a tensor whose leading dimensions are all 1.
fn plane_dims(t: &Tensor<f64>, path: &Path) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::Record { name: path.display().to_string(), reason: format!("expected a single map, got shape {s:?}") });
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

fn eval_depth(a: EvalDepthArgs) -> Result<()> {
    let cfg = DepthEvalConfig { cap_min: a.cap_min, cap_max: a.cap, median_scaling: !a.no_median_scaling };
    cfg.validate()?;
    let preds = tensor_inputs(&a.pred)?;
    let gts = tensor_inputs(&a.gt)?;
    if preds.len() != gts.len() {
        return Err(Error::Config(format!("{} predictions but {} ground-truth maps", preds.len(), gts.len())));
    }
    let mut rows = Vec::with_capacity(preds.len());
    for (pp, gp) in preds.iter().zip(&gts) {
        let pred = tensor_file::load_tensor(pp)?.cast::<f64>();
        let gt = tensor_file::load_tensor(gp)?.cast::<f64>();
        let (ph, pw) = plane_dims(&pred, pp)?;
        let (gh, gw) = plane_dims(&gt, gp)?;
        if (ph, pw) != (gh, gw) {
            return Err(Error::Config(format!(
                "{} is {pw}x{ph} but {} is {gw}x{gh}",
                pp.display(),
                gp.display()
            )));
        }
        let mut p: Vec<f64> = pred.data().to_vec();
        if a.pred_kind == PredKind::Disparity {
            p.iter_mut().for_each(|d| *d = 1.0 / *d);
        }
        let mut g = gt.data().to_vec();
        if a.make3d_crop {
            p = eval::make3d_crop(&p, 1, ph, pw)?.0;
            g = eval::make3d_crop(&g, 1, gh, gw)?.0;
        }
        let m = eval::depth_metrics(&p, &g, None, &cfg)
            .map_err(|e| Error::Config(format!("{} vs {}: {e}", pp.display(), gp.display())))?;
        rows.push(m);
    }
    println!("{}", DepthMetrics::CSV_HEADER);
    if a.per_image {
        for m in &rows {
            println!("{}", m.csv_row());
        }
    }
    println!("{}", DepthMetrics::mean(&rows)?.csv_row());
    Ok(())
}

/// Relative pose of frame `k + 1` in frame `k` from camera-to-world poses.
fn consecutive(poses: &[RigidTransform]) -> Vec<RigidTransform> {
    poses.windows(2).map(|w| w[0].inverse().compose(&w[1])).collect()
}

fn eval_pose(a: EvalPoseArgs) -> Result<()> {
    if a.snippet < 2 {
        return Err(Error::Config("snippet length must be at least 2".into()));
    }
    let gt = dataset::read_poses(&a.gt)?;
    let pairwise = match (&a.pred, &a.checkpoint, &a.data) {
        (Some(p), None, None) => {
            let pred = dataset::read_poses(p)?;
            if pred.len() != gt.len() {
                return Err(Error::Config(format!("{} predicted poses but {} ground-truth poses", pred.len(), gt.len())));
            }
            consecutive(&pred)
        }
        (None, Some(ck), Some(data)) => {
            let model = Model::<f32>::load(ck)?;
            let ds = SequenceDataset::open(data)?;
            if ds.len() != gt.len() {
                return Err(Error::Config(format!("{} frames but {} ground-truth poses", ds.len(), gt.len())));
            }
            let (w, h) = (a.width.unwrap_or(ds.width), a.height.unwrap_or(ds.height));
            model.depth.cfg.check_input(h, w)?;
            let frames = (0..ds.len()).map(|i| ds.frame::<f32>(i, w, h)).collect::<Result<Vec<_>>>()?;
            inference::predict_consecutive(&model, &frames)?
        }
        _ => return Err(Error::Config("give either --pred or both --checkpoint and --data".into())),
    };
    if gt.len() < a.snippet {
        return Err(Error::Config(format!("{} poses are fewer than one {}-frame snippet", gt.len(), a.snippet)));
    }
    let errors: Vec<f64> = (0..=gt.len() - a.snippet)
        .map(|i| eval::ate_snippet(&pairwise[i..i + a.snippet - 1], &gt[i..i + a.snippet]))
        .collect();
    println!("ATE: {} ({} snippets)", eval::format_mean_std(&errors)?, errors.len());
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let variants: Vec<Variant> = if a.variant.contains(&VariantArg::All) {
        vec![Variant::Original, Variant::Medium, Variant::Small]
    } else {
        a.variant
            .iter()
            .map(|v| match v {
                VariantArg::Original => Variant::Original,
                VariantArg::Medium => Variant::Medium,
                _ => Variant::Small,
            })
            .collect()
    };
    let resolutions: Vec<OutputRes> = if a.out_res.contains(&ResArg::All) {
        vec![OutputRes::F, OutputRes::H, OutputRes::Q, OutputRes::E]
    } else {
        a.out_res
            .iter()
            .map(|r| match r {
                ResArg::F => OutputRes::F,
                ResArg::H => OutputRes::H,
                ResArg::Q => OutputRes::Q,
                _ => OutputRes::E,
            })
            .collect()
    };
    let mut reports = Vec::new();
    for v in &variants {
        for r in &resolutions {
            let cfg = DepthNetConfig { share_recurrent_weights: !a.unshared, ..DepthNetConfig::new(*v, *r) };
            reports.push(profiler::profile(&cfg, a.height, a.width)?);
        }
    }
    let mac = match a.mac {
        MacArg::One => MacConvention::One,
        MacArg::Two => MacConvention::Two,
    };
    let (csv, text) = profiler::profile_table(&reports, mac);
    print!("{}", if a.csv { csv } else { text });
    Ok(())
}

fn synth_data(a: SynthArgs) -> Result<()> {
    if a.out.join(dataset::IMAGE_DIR).exists() {
        return Err(Error::Config(format!("{} already holds a dataset", a.out.display())));
    }
    let seq = generate_synthetic_sequence(&SynthSceneConfig {
        width: a.width,
        height: a.height,
        frames: a.frames,
        seed: a.seed,
        speed: a.speed,
        ..Default::default()
    })?;
    dataset::write_synthetic(&a.out, &seq)?;
    println!("{} frames of {}x{} in {}", a.frames, a.width, a.height, a.out.display());
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = gradcheck::run_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:4} {:<40} max rel error {:.3e} ({} entries)", r.name, r.max_rel_error, r.checked);
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        warn!("{failed} gradient checks above tolerance {:e}", gradcheck::TOLERANCE);
        return Err(Error::Config(format!("{failed} of {} gradient checks failed", results.len())));
    }
    println!("all {} checks within {:e}", results.len(), gradcheck::TOLERANCE);
    Ok(())
}
