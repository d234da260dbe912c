//! On-disk frame sequences.
//!
//! ```text
//! root/
//!   images/000000.png ...   contiguous numbering, PNG or PPM, one resolution
//!   intrinsics.txt          "fx fy cx cy" or a row-major 3x3 matrix
//!   depth/000000.tnsr ...   optional ground-truth depth, one per frame
//!   poses.txt               optional, one camera-to-world 3x4 matrix per line
//! ```

use std::path::{Path, PathBuf};

use mininet_core::geometry::{Intrinsics, RigidTransform};
use mininet_core::trainer::{SynthSequence, Triplet};
use mininet_core::{Scalar, Tensor};

use crate::error::{Error, IoContext, Result};
use crate::image_io::{load_image_resized, save_image};
use crate::tensor_file::{load_tensor, save_tensor};

pub const IMAGE_DIR: &str = "images";
pub const DEPTH_DIR: &str = "depth";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const POSES_FILE: &str = "poses.txt";

#[derive(Debug, Clone)]
pub struct SequenceDataset {
    pub root: PathBuf,
    pub frames: Vec<PathBuf>,
    /// Native image size.
    pub width: usize,
    pub height: usize,
    /// Intrinsics at the native size.
    pub intrinsics: Intrinsics,
    pub depth: Option<Vec<PathBuf>>,
    pub poses: Option<Vec<RigidTransform>>,
}

fn numbers(text: &str, path: &Path) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("{}: {s:?} is not a number", path.display()))))
        .collect()
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    let path = path.as_ref();
    let v = numbers(&std::fs::read_to_string(path).at(path)?, path)?;
    let k = match v.len() {
        4 => Intrinsics::new(v[0], v[1], v[2], v[3]),
        9 => Intrinsics::new(v[0], v[4], v[2], v[5]),
        n => return Err(Error::Format(format!("{}: expected 4 or 9 numbers, found {n}", path.display()))),
    };
    Ok(k?)
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &Intrinsics) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy)).at(path)
}

/// One camera-to-world pose per line: 12 numbers, row-major 3x4.
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v = numbers(line, path)?;
        if v.len() != 12 {
            return Err(Error::Format(format!("{} line {}: expected 12 numbers, found {}", path.display(), i + 1, v.len())));
        }
        out.push(RigidTransform::from_rt([v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]], [v[3], v[7], v[11]]));
    }
    Ok(out)
}

pub fn format_pose(p: &RigidTransform) -> String {
    p.m[..12].iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[RigidTransform]) -> Result<()> {
    let path = path.as_ref();
    let text: String = poses.iter().map(|p| format_pose(p) + "\n").collect();
    std::fs::write(path, text).at(path)
}

fn frame_number(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if ext != "png" && ext != "ppm" {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

impl SequenceDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let image_dir = root.join(IMAGE_DIR);
        let mut numbered = Vec::new();
        for entry in std::fs::read_dir(&image_dir).at(&image_dir)? {
            let path = entry.at(&image_dir)?.path();
            if let Some(n) = frame_number(&path) {
                numbered.push((n, path));
            }
        }
        numbered.sort();
        if numbered.is_empty() {
            return Err(Error::Format(format!("{}: no numbered .png or .ppm frames", image_dir.display())));
        }
        for (k, w) in numbered.windows(2).enumerate() {
            if w[1].0 != w[0].0 + 1 {
                return Err(Error::Format(format!("frame numbering is not contiguous after frame {} ({})", k, w[0].1.display())));
            }
        }
        let frames: Vec<PathBuf> = numbered.into_iter().map(|(_, p)| p).collect();
        let dims = |p: &Path| image::image_dimensions(p).map_err(|source| Error::Image { path: p.to_path_buf(), source });
        let (width, height) = dims(&frames[0])?;
        for f in &frames[1..] {
            if dims(f)? != (width, height) {
                return Err(Error::Format(format!("{} is not {width}x{height} like the first frame", f.display())));
            }
        }
        let intrinsics = read_intrinsics(root.join(INTRINSICS_FILE))?;
        let depth_dir = root.join(DEPTH_DIR);
        let depth = if depth_dir.is_dir() {
            let files: Vec<PathBuf> = frames.iter().map(|f| depth_dir.join(f.file_stem().expect("numbered")).with_extension("tnsr")).collect();
            if let Some(missing) = files.iter().find(|p| !p.is_file()) {
                return Err(Error::Format(format!("missing ground-truth depth {}", missing.display())));
            }
            Some(files)
        } else {
            None
        };
        let poses_path = root.join(POSES_FILE);
        let poses = if poses_path.is_file() {
            let p = read_poses(&poses_path)?;
            if p.len() != frames.len() {
                return Err(Error::Format(format!("{} has {} poses for {} frames", poses_path.display(), p.len(), frames.len())));
            }
            Some(p)
        } else {
            None
        };
        Ok(SequenceDataset { root, frames, width: width as usize, height: height as usize, intrinsics, depth, poses })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Intrinsics after resizing to `width x height`.
    pub fn intrinsics_at(&self, width: usize, height: usize) -> Intrinsics {
        if (width, height) == (self.width, self.height) {
            return self.intrinsics;
        }
        let (sx, sy) = (width as f64 / self.width as f64, height as f64 / self.height as f64);
        let k = self.intrinsics.scaled(sx, sy);
        log::info!("rescaling intrinsics from {}x{} to {width}x{height}: {:?} -> {:?}", self.width, self.height, self.intrinsics, k);
        k
    }

    pub fn frame<T: Scalar>(&self, i: usize, width: usize, height: usize) -> Result<Tensor<T>> {
        load_image_resized(&self.frames[i], width, height)
    }

    pub fn depth<T: Scalar>(&self, i: usize) -> Result<Option<Tensor<T>>> {
        self.depth.as_ref().map(|d| Ok(load_tensor(&d[i])?.cast())).transpose()
    }

    /// Every window of three consecutive frames at `width x height`.
    pub fn triplets<T: Scalar>(&self, width: usize, height: usize) -> Result<Vec<Triplet<T>>> {
        let k = self.intrinsics_at(width, height);
        let images = (0..self.len()).map(|i| self.frame(i, width, height)).collect::<Result<Vec<Tensor<T>>>>()?;
        Ok(images
            .windows(3)
            .map(|w| Triplet { prev: w[0].clone(), target: w[1].clone(), next: w[2].clone(), intrinsics: k })
            .collect())
    }
}

/// Writes a synthetic sequence in the layout above (PNG frames).
pub fn write_synthetic(root: impl AsRef<Path>, seq: &SynthSequence) -> Result<()> {
    let root = root.as_ref();
    let (images, depth) = (root.join(IMAGE_DIR), root.join(DEPTH_DIR));
    std::fs::create_dir_all(&images).at(&images)?;
    std::fs::create_dir_all(&depth).at(&depth)?;
    for (i, f) in seq.frames.iter().enumerate() {
        save_image(images.join(format!("{i:06}.png")), &f.image)?;
        save_tensor(depth.join(format!("{i:06}.tnsr")), &f.depth)?;
    }
    write_intrinsics(root.join(INTRINSICS_FILE), &seq.intrinsics)?;
    write_poses(root.join(POSES_FILE), &seq.frames.iter().map(|f| f.pose).collect::<Vec<_>>())
}
