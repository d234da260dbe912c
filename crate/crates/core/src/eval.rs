//! Depth error metrics, central cropping and 5-frame trajectory error.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::posenet::Pose6DoF;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEvalConfig {
    pub cap_min: f64,
    pub cap_max: f64,
    pub median_scaling: bool,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        DepthEvalConfig { cap_min: 1e-3, cap_max: 80.0, median_scaling: true }
    }
}

impl DepthEvalConfig {
    pub fn with_cap(cap_max: f64) -> Self {
        DepthEvalConfig { cap_max, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap_min < self.cap_max) || !(self.cap_min >= 0.0) {
            return Err(Error::Config(format!("invalid depth caps [{}, {}]", self.cap_min, self.cap_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";

    pub fn as_array(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]
    }

    pub fn csv_row(&self) -> String {
        let v = self.as_array();
        format!("{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}", v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    /// Unweighted mean over images.
    pub fn mean(items: &[DepthMetrics]) -> Result<DepthMetrics> {
        if items.is_empty() {
            return Err(Error::EmptyEvaluation(String::from("no images to average")));
        }
        let mut acc = [0.0; 7];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.as_array()) {
                *a += v;
            }
        }
        let n = items.len() as f64;
        let a = acc.map(|v| v / n);
        Ok(DepthMetrics { abs_rel: a[0], sq_rel: a[1], rmse: a[2], rmse_log: a[3], delta1: a[4], delta2: a[5], delta3: a[6] })
    }
}

/// Median with the two middle values averaged for even lengths.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Errors of `pred` against `gt` over pixels with `cap_min < gt < cap_max`
/// (and `valid`, when given).
pub fn depth_metrics(pred: &[f64], gt: &[f64], valid: Option<&[bool]>, cfg: &DepthEvalConfig) -> Result<DepthMetrics> {
    cfg.validate()?;
    if pred.len() != gt.len() || valid.is_some_and(|v| v.len() != gt.len()) {
        return Err(Error::InvalidShape(format!(
            "prediction has {} values, ground truth {}, mask {:?}",
            pred.len(),
            gt.len(),
            valid.map(|v| v.len())
        )));
    }
    let idx: Vec<usize> = (0..gt.len())
        .filter(|&i| valid.is_none_or(|v| v[i]) && gt[i] > cfg.cap_min && gt[i] < cfg.cap_max)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyEvaluation(String::from("no valid ground-truth pixels inside the depth caps")));
    }
    let g: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
    let mut p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
    if p.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Contract(String::from("predicted depth must be positive and finite on valid pixels")));
    }
    if cfg.median_scaling {
        let mg = median(&mut g.clone()).expect("non-empty");
        let mp = median(&mut p.clone()).expect("non-empty");
        let ratio = mg / mp;
        p.iter_mut().for_each(|v| *v *= ratio);
    }
    p.iter_mut().for_each(|v| *v = v.clamp(cfg.cap_min, cfg.cap_max));
    let n = g.len() as f64;
    let mut m = DepthMetrics::default();
    let (t1, t2, t3) = (1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25);
    for (&gi, &pi) in g.iter().zip(&p) {
        let d = gi - pi;
        m.abs_rel += d.abs() / gi;
        m.sq_rel += d * d / gi;
        m.rmse += d * d;
        let dl = gi.log10() - pi.log10();
        m.rmse_log += dl * dl;
        let ratio = (gi / pi).max(pi / gi);
        m.delta1 += f64::from(u8::from(ratio < t1));
        m.delta2 += f64::from(u8::from(ratio < t2));
        m.delta3 += f64::from(u8::from(ratio < t3));
    }
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = (m.rmse / n).sqrt();
    m.rmse_log = (m.rmse_log / n).sqrt();
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    Ok(m)
}

/// Rows `[start, start + len)` of a centred `2 x 1` (width x height) crop.
pub fn make3d_crop_rows(height: usize, width: usize) -> Result<(usize, usize)> {
    let target = width / 2;
    if target == 0 || height < target {
        return Err(Error::InvalidCrop(format!("{width}x{height} image is shorter than its 2:1 crop height {target}")));
    }
    Ok(((height - target) / 2, target))
}

/// Rows of a map of `height` rows that correspond to the 2:1 crop of a
/// `ref_height x ref_width` image, scaled proportionally.
pub fn make3d_crop_rows_proportional(height: usize, ref_height: usize, ref_width: usize) -> Result<(usize, usize)> {
    let (_, ref_rows) = make3d_crop_rows(ref_height, ref_width)?;
    let keep = (height as f64 * ref_rows as f64 / ref_height as f64).round() as usize;
    if keep == 0 || keep > height {
        return Err(Error::InvalidCrop(format!("cannot keep {keep} of {height} rows")));
    }
    Ok(((height - keep) / 2, keep))
}

/// Crops a `[C, H, W]` (or `[H, W]` with `channels = 1`) row-major buffer.
pub fn crop_rows<T: Copy>(data: &[T], channels: usize, height: usize, width: usize, rows: (usize, usize)) -> Result<Vec<T>> {
    if data.len() != channels * height * width || rows.0 + rows.1 > height {
        return Err(Error::InvalidCrop(format!(
            "buffer of {} values cannot be cropped as {channels}x{height}x{width} rows {:?}",
            data.len(),
            rows
        )));
    }
    let mut out = Vec::with_capacity(channels * rows.1 * width);
    for c in 0..channels {
        let plane = &data[c * height * width..(c + 1) * height * width];
        out.extend_from_slice(&plane[rows.0 * width..(rows.0 + rows.1) * width]);
    }
    Ok(out)
}

/// Centred 2:1 crop of a `[C, H, W]` image; returns the data and the new height.
pub fn make3d_crop<T: Copy>(data: &[T], channels: usize, height: usize, width: usize) -> Result<(Vec<T>, usize)> {
    let rows = make3d_crop_rows(height, width)?;
    Ok((crop_rows(data, channels, height, width, rows)?, rows.1))
}

/// Pairwise relative poses chained into a trajectory starting at the identity.
pub fn chain_poses(pairwise: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(pairwise.len() + 1);
    out.push(RigidTransform::identity());
    for p in pairwise {
        let last = *out.last().expect("non-empty");
        out.push(last.compose(p));
    }
    out
}

/// Absolute trajectory error of a 5-frame snippet.
///
/// `pred` holds the four relative poses between consecutive frames (frame
/// `k + 1` expressed in frame `k`); `gt` holds five absolute poses. Both
/// trajectories are taken relative to their first frame, the predicted
/// positions are aligned with one least-squares scale, and the mean position
/// error over the five frames is returned.
pub fn ate_5frame(pred: &[Pose6DoF; 4], gt: &[RigidTransform; 5]) -> f64 {
    let mats: Vec<RigidTransform> = pred.iter().map(|p| p.to_matrix()).collect();
    ate_snippet(&mats, gt)
}

/// [`ate_5frame`] on already-converted relative transforms of any snippet length.
pub fn ate_snippet(pred_pairwise: &[RigidTransform], gt: &[RigidTransform]) -> f64 {
    assert_eq!(pred_pairwise.len() + 1, gt.len(), "snippet needs one more ground-truth pose than relative poses");
    let traj = chain_poses(pred_pairwise);
    let g0 = gt[0].inverse();
    let p: Vec<[f64; 3]> = traj.iter().map(|t| t.translation()).collect();
    let g: Vec<[f64; 3]> = gt.iter().map(|t| g0.compose(t).translation()).collect();
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let gg: f64 = g.iter().map(|v| dot(v, v)).sum();
    let pp: f64 = p.iter().map(|v| dot(v, v)).sum();
    let gp: f64 = g.iter().zip(&p).map(|(a, b)| dot(a, b)).sum();
    let scale = if gg == 0.0 || pp == 0.0 { 1.0 } else { gp / pp };
    let total: f64 = g
        .iter()
        .zip(&p)
        .map(|(gv, pv)| {
            let d = [scale * pv[0] - gv[0], scale * pv[1] - gv[1], scale * pv[2] - gv[2]];
            dot(&d, &d).sqrt()
        })
        .sum();
    total / g.len() as f64
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// `"0.017 ± 0.008"`.
pub fn format_mean_std(values: &[f64]) -> Result<String> {
    let (m, s) = mean_std(values).ok_or_else(|| Error::EmptyEvaluation(String::from("no snippets to summarise")))?;
    Ok(format!("{m:.3} ± {s:.3}"))
}

/// Ranks starting at 1, ties sharing their average rank. NaN sorts last.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of the average ranks.
/// `None` for fewer than two values or a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(crate::shape_err!("spearman inputs of length {} and {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Ok(None);
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some(sab / Float::sqrt(saa * sbb)))
}
