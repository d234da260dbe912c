//! Ray-cast two-plane scenes (ground plane and a back wall) with known depth
//! and camera motion.
//!
//! The texture is a sum of sinusoids attached to the scene: a world point is
//! coloured by where it appears in the first camera of the sequence. That
//! keeps the pattern continuous across the crease between the planes and
//! bounds its image-space frequency, so bilinear resampling stays accurate.

use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Triplet;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, RigidTransform};
use crate::posenet::{pose_to_matrix, Pose6DoF};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    /// Mean forward travel per frame in scene units; 0 freezes the camera.
    pub speed: f64,
    /// Minimum fraction of target pixels that must stay inside each neighbour.
    pub min_in_frame: f64,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        SynthSceneConfig { width: 128, height: 64, frames: 3, seed: 0, speed: 0.3, min_in_frame: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    amplitude: [f64; 3],
    /// Radians per reference-image pixel along u and v.
    freq: (f64, f64),
    phase: [f64; 3],
}

/// Scene geometry and texture; the world frame is the first camera's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera_height: f64,
    pub wall_depth: f64,
    pub reference: Intrinsics,
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Scene {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, reference: Intrinsics) -> Self {
        let base = [rng.random_range(0.4..0.6), rng.random_range(0.4..0.6), rng.random_range(0.4..0.6)];
        let mut waves = Vec::new();
        for (freq, amp) in [(0.07, 0.12), (0.14, 0.08), (0.28, 0.035)] {
            for _ in 0..2 {
                let angle: f64 = rng.random_range(0.0..core::f64::consts::PI);
                let f: f64 = freq * rng.random_range(0.8..1.2);
                waves.push(Wave {
                    amplitude: [amp * rng.random_range(0.5..1.0), amp * rng.random_range(0.5..1.0), amp * rng.random_range(0.5..1.0)],
                    freq: (f * Float::cos(angle), f * Float::sin(angle)),
                    phase: [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)],
                });
            }
        }
        Scene {
            camera_height: rng.random_range(0.8..1.2),
            wall_depth: rng.random_range(12.0..25.0),
            reference,
            base,
            waves,
        }
    }

    /// Ray parameter (equal to camera depth for `dir = R (x, y, 1)`) of the
    /// nearest plane hit from `origin` along `dir`.
    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut best: Option<f64> = None;
        if dir[2] > 0.0 {
            best = Some((self.wall_depth - origin[2]) / dir[2]);
        }
        if dir[1] > 0.0 {
            let l = (self.camera_height - origin[1]) / dir[1];
            best = Some(best.map_or(l, |b| b.min(l)));
        }
        best.filter(|l| *l > 0.0)
    }

    fn color(&self, p: [f64; 3]) -> [f64; 3] {
        let k = &self.reference;
        let u = k.fx * p[0] / p[2] + k.cx;
        let v = k.fy * p[1] / p[2] + k.cy;
        let mut c = self.base;
        for w in &self.waves {
            let arg = w.freq.0 * u + w.freq.1 * v;
            for ch in 0..3 {
                c[ch] += w.amplitude[ch] * Float::sin(arg + w.phase[ch]);
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }

    /// Image `[3, H, W]` and depth `[1, H, W]` seen by a camera with
    /// camera-to-world transform `pose`.
    pub fn render(&self, pose: &RigidTransform, k: &Intrinsics, width: usize, height: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let hw = width * height;
        let mut image = alloc::vec![0.0; 3 * hw];
        let mut depth = alloc::vec![0.0; hw];
        let r = pose.rotation();
        let o = pose.translation();
        for v in 0..height {
            for u in 0..width {
                let d = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
                let dir = [
                    r[0] * d[0] + r[1] * d[1] + r[2] * d[2],
                    r[3] * d[0] + r[4] * d[1] + r[5] * d[2],
                    r[6] * d[0] + r[7] * d[1] + r[8] * d[2],
                ];
                let l = self
                    .intersect(o, dir)
                    .ok_or_else(|| Error::Config(alloc::format!("pixel ({u}, {v}) sees no scene surface")))?;
                let p = [o[0] + l * dir[0], o[1] + l * dir[1], o[2] + l * dir[2]];
                let c = self.color(p);
                let i = v * width + u;
                depth[i] = l;
                for ch in 0..3 {
                    image[ch * hw + i] = c[ch];
                }
            }
        }
        Ok((Tensor::new(&[3, height, width], image)?, Tensor::new(&[1, height, width], depth)?))
    }
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub image: Tensor<f64>,
    pub depth: Tensor<f64>,
    /// Camera-to-world transform.
    pub pose: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub intrinsics: Intrinsics,
    pub scene: Scene,
    pub frames: Vec<SynthFrame>,
}

impl SynthSequence {
    /// Transform taking points from frame `target`'s camera to frame `source`'s.
    pub fn relative_pose(&self, target: usize, source: usize) -> RigidTransform {
        self.frames[source].pose.inverse().compose(&self.frames[target].pose)
    }

    /// Every window of three consecutive frames.
    pub fn triplets(&self) -> Vec<Triplet<f64>> {
        self.frames
            .windows(3)
            .map(|w| Triplet {
                prev: w[0].image.clone(),
                target: w[1].image.clone(),
                next: w[2].image.clone(),
                intrinsics: self.intrinsics,
            })
            .collect()
    }
}

/// Default pinhole model for synthetic frames of the given size.
pub fn default_intrinsics(width: usize, height: usize) -> Intrinsics {
    let f = 0.6 * width as f64;
    Intrinsics { fx: f, fy: f, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
}

/// Fraction of target pixels whose ground-truth reprojection lands inside the source frame.
pub fn in_frame_fraction(depth: &Tensor<f64>, k: &Intrinsics, target_to_source: &RigidTransform) -> f64 {
    let s = depth.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut inside = 0usize;
    for v in 0..h {
        for u in 0..w {
            if let Some((x, y)) = crate::geometry::project_point(u as f64, v as f64, depth.data()[v * w + u], k, target_to_source) {
                if x >= 0.0 && x <= (w - 1) as f64 && y >= 0.0 && y <= (h - 1) as f64 {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / (h * w) as f64
}

fn random_step<R: Rng + ?Sized>(rng: &mut R, speed: f64, damping: f64) -> Pose6DoF {
    let s = speed * damping;
    // Rotation noise is sized for the default speed and scales with it.
    let r = speed / 0.3 * damping;
    Pose6DoF::new(
        [rng.random_range(-0.01..0.01) * r, rng.random_range(-0.02..0.02) * r, rng.random_range(-0.01..0.01) * r],
        [rng.random_range(-0.15..0.15) * s, rng.random_range(-0.05..0.05) * s, rng.random_range(0.7..1.3) * s],
    )
}

/// Deterministic sequence of rendered frames under random forward motion.
pub fn generate_synthetic_sequence(cfg: &SynthSceneConfig) -> Result<SynthSequence> {
    if cfg.width < 4 || cfg.height < 4 || cfg.frames == 0 {
        return Err(Error::Config(alloc::format!("synthetic sequence needs at least 4x4 pixels and one frame, got {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = default_intrinsics(cfg.width, cfg.height);
    let scene = Scene::random(&mut rng, k);
    let mut frames: Vec<SynthFrame> = Vec::with_capacity(cfg.frames);
    let pose = RigidTransform::identity();
    let (image, depth) = scene.render(&pose, &k, cfg.width, cfg.height)?;
    frames.push(SynthFrame { image, depth, pose });
    while frames.len() < cfg.frames {
        let prev = frames.last().expect("non-empty");
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let step = random_step(&mut rng, cfg.speed, damping);
            let candidate = prev.pose.compose(&pose_to_matrix(&step));
            let (image, depth) = scene.render(&candidate, &k, cfg.width, cfg.height)?;
            let fwd = candidate.inverse().compose(&prev.pose);
            let bwd = fwd.inverse();
            if in_frame_fraction(&prev.depth, &k, &fwd) >= cfg.min_in_frame && in_frame_fraction(&depth, &k, &bwd) >= cfg.min_in_frame {
                accepted = Some(SynthFrame { image, depth, pose: candidate });
                break;
            }
            damping *= 0.5;
        }
        let frame = match accepted {
            Some(f) => f,
            None => {
                let (image, depth) = scene.render(&prev.pose, &k, cfg.width, cfg.height)?;
                SynthFrame { image, depth, pose: prev.pose }
            }
        };
        frames.push(frame);
    }
    Ok(SynthSequence { intrinsics: k, scene, frames })
}
