use mininet_core::error::Error;
use mininet_core::eval::*;
use mininet_core::geometry::RigidTransform;
use mininet_core::posenet::{pose_to_matrix, Pose6DoF};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn no_scaling() -> DepthEvalConfig {
    DepthEvalConfig { median_scaling: false, ..Default::default() }
}

/// Per-pixel reference: selection-based median, explicit loops, no shared helpers.
fn brute_force(pred: &[f64], gt: &[f64], valid: &[bool], cfg: &DepthEvalConfig) -> [f64; 7] {
    let mut g = Vec::new();
    let mut p = Vec::new();
    for i in 0..gt.len() {
        if valid[i] && gt[i] > cfg.cap_min && gt[i] < cfg.cap_max {
            g.push(gt[i]);
            p.push(pred[i]);
        }
    }
    let select = |v: &[f64], k: usize| -> f64 {
        // k-th smallest by counting.
        for &x in v {
            let below = v.iter().filter(|&&y| y < x).count();
            let equal = v.iter().filter(|&&y| y == x).count();
            if below <= k && k < below + equal {
                return x;
            }
        }
        unreachable!()
    };
    let med = |v: &[f64]| {
        let n = v.len();
        if n % 2 == 1 {
            select(v, n / 2)
        } else {
            (select(v, n / 2 - 1) + select(v, n / 2)) / 2.0
        }
    };
    if cfg.median_scaling {
        let r = med(&g) / med(&p);
        for x in p.iter_mut() {
            *x *= r;
        }
    }
    let n = g.len() as f64;
    let mut out = [0.0; 7];
    for i in 0..g.len() {
        let pi = p[i].max(cfg.cap_min).min(cfg.cap_max);
        let gi = g[i];
        out[0] += (gi - pi).abs() / gi / n;
        out[1] += (gi - pi).powi(2) / gi / n;
        out[2] += (gi - pi).powi(2) / n;
        out[3] += (gi.log10() - pi.log10()).powi(2) / n;
        let t = if gi / pi > pi / gi { gi / pi } else { pi / gi };
        for (j, thr) in [1.25f64, 1.5625, 1.953125].iter().enumerate() {
            if t < *thr {
                out[4 + j] += 1.0 / n;
            }
        }
    }
    out[2] = out[2].sqrt();
    out[3] = out[3].sqrt();
    out
}

fn random_maps(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let gt: Vec<f64> = (0..n).map(|_| r.random_range(0.5..90.0)).collect();
    let pred: Vec<f64> = gt.iter().map(|g| g * r.random_range(0.3..3.0)).collect();
    let valid: Vec<bool> = (0..n).map(|i| i == 0 || r.random_bool(0.8)).collect();
    (pred, gt, valid)
}

#[test]
fn perfect_prediction() {
    let gt = [1.0, 5.0, 20.0, 7.5];
    let m = depth_metrics(&gt, &gt, None, &no_scaling()).unwrap();
    assert_eq!(m.as_array(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn median_scaling_removes_a_uniform_factor() {
    let gt = [1.0, 5.0, 20.0, 7.5, 3.25];
    let pred = gt.map(|g| 2.0 * g);
    let m = depth_metrics(&pred, &gt, None, &DepthEvalConfig::default()).unwrap();
    assert_eq!(m.as_array(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn single_pixel_twice_too_far() {
    let m = depth_metrics(&[2.0], &[1.0], None, &no_scaling()).unwrap();
    assert_eq!((m.abs_rel, m.sq_rel, m.rmse), (1.0, 1.0, 1.0));
    assert!((m.rmse_log - 2f64.log10()).abs() < 1e-15);
    // A ratio of 2 exceeds 1.25, 1.25^2 and 1.25^3 = 1.953125.
    assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
    let m = depth_metrics(&[1.9], &[1.0], None, &no_scaling()).unwrap();
    assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 1.0));
}

#[test]
fn empty_valid_set_is_an_error() {
    assert!(matches!(depth_metrics(&[1.0], &[0.0], None, &no_scaling()), Err(Error::EmptyEvaluation(_))));
    assert!(matches!(depth_metrics(&[1.0], &[100.0], None, &no_scaling()), Err(Error::EmptyEvaluation(_))));
    assert!(matches!(depth_metrics(&[1.0], &[5.0], Some(&[false]), &no_scaling()), Err(Error::EmptyEvaluation(_))));
    assert!(matches!(depth_metrics(&[1.0, 2.0], &[5.0], None, &no_scaling()), Err(Error::InvalidShape(_))));
    assert!(depth_metrics(&[1.0], &[5.0], None, &DepthEvalConfig { cap_min: 10.0, cap_max: 5.0, median_scaling: false }).is_err());
}

#[test]
fn predictions_beyond_the_cap_count_as_the_cap() {
    let gt = [10.0, 60.0, 75.0];
    let capped = depth_metrics(&[80.0, 80.0, 30.0], &gt, None, &no_scaling()).unwrap();
    let beyond = depth_metrics(&[500.0, 81.0, 30.0], &gt, None, &no_scaling()).unwrap();
    assert_eq!(capped, beyond);
    let tight = DepthEvalConfig { cap_max: 50.0, ..no_scaling() };
    let m = depth_metrics(&[10.0, 1.0, 1.0], &gt, None, &tight).unwrap();
    assert_eq!(m.abs_rel, 0.0);
}

#[test]
fn metrics_match_a_brute_force_reference() {
    for seed in 0..200 {
        let (pred, gt, valid) = random_maps(seed, 25);
        for cfg in [DepthEvalConfig::default(), no_scaling(), DepthEvalConfig::with_cap(50.0), DepthEvalConfig { cap_max: 70.0, ..no_scaling() }] {
            let Ok(m) = depth_metrics(&pred, &gt, Some(&valid), &cfg) else { continue };
            let r = brute_force(&pred, &gt, &valid, &cfg);
            for (a, b) in m.as_array().iter().zip(r) {
                assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
            }
            assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);
        }
    }
}

proptest! {
    #[test]
    fn median_scaling_ignores_power_of_two_factors(seed in any::<u64>(), e in -20i32..20) {
        let (pred, gt, valid) = random_maps(seed, 25);
        let cfg = DepthEvalConfig::default();
        let a = depth_metrics(&pred, &gt, Some(&valid), &cfg).unwrap();
        let scaled: Vec<f64> = pred.iter().map(|p| p * 2f64.powi(e)).collect();
        prop_assert_eq!(a, depth_metrics(&scaled, &gt, Some(&valid), &cfg).unwrap());
    }

    #[test]
    fn median_scaling_ignores_any_factor(seed in any::<u64>(), k in 1e-3f64..1e3) {
        let (pred, gt, valid) = random_maps(seed, 25);
        let cfg = DepthEvalConfig::default();
        let a = depth_metrics(&pred, &gt, Some(&valid), &cfg).unwrap();
        let scaled: Vec<f64> = pred.iter().map(|p| p * k).collect();
        let b = depth_metrics(&scaled, &gt, Some(&valid), &cfg).unwrap();
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ate_ignores_the_predicted_scale(seed in any::<u64>(), k in 0.01f64..100.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut step = || Pose6DoF::new(
            [r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05)],
            [r.random_range(-0.5..0.5), r.random_range(-0.2..0.2), r.random_range(0.5..1.5)],
        );
        let pred: [Pose6DoF; 4] = core::array::from_fn(|_| step());
        let gt_steps: Vec<RigidTransform> = (0..4).map(|_| pose_to_matrix(&step())).collect();
        let gt: [RigidTransform; 5] = chain_poses(&gt_steps).try_into().unwrap();
        let scaled = pred.map(|p| Pose6DoF::new(p.rotation, p.translation.map(|t| k * t)));
        prop_assert!((ate_5frame(&pred, &gt) - ate_5frame(&scaled, &gt)).abs() < 1e-9);
    }
}

#[test]
fn make3d_crops() {
    assert_eq!(make3d_crop_rows(2272, 1704).unwrap(), (710, 852));
    assert_eq!(make3d_crop_rows_proportional(55, 2272, 1704).unwrap(), (17, 21));
    let img: Vec<u8> = (0..3 * 8 * 4).map(|i| i as u8).collect();
    let (out, h) = make3d_crop(&img, 3, 8, 4).unwrap();
    assert_eq!(h, 2);
    assert_eq!(&out[..8], &img[3 * 4..5 * 4]);
    assert_eq!(&out[16..], &img[2 * 32 + 12..2 * 32 + 20]);
    let square: Vec<u8> = (0..2 * 4).map(|i| i as u8).collect();
    assert_eq!(make3d_crop(&square, 1, 2, 4).unwrap(), (square.clone(), 2));
    assert!(matches!(make3d_crop(&square, 1, 1, 8), Err(Error::InvalidCrop(_))));
}

fn translation(t: [f64; 3]) -> RigidTransform {
    RigidTransform::from_rt([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], t)
}

fn relative(gt: &[RigidTransform]) -> Vec<RigidTransform> {
    gt.windows(2).map(|w| w[0].inverse().compose(&w[1])).collect()
}

#[test]
fn exact_chain_has_zero_error() {
    let steps: Vec<RigidTransform> = (0..4)
        .map(|i| pose_to_matrix(&Pose6DoF::new([0.01 * i as f64, -0.02, 0.03], [0.1, -0.05 * i as f64, 0.9])))
        .collect();
    let start = pose_to_matrix(&Pose6DoF::new([0.3, 0.1, -0.2], [5.0, 1.0, -3.0]));
    let gt: Vec<RigidTransform> = chain_poses(&steps).iter().map(|p| start.compose(p)).collect();
    assert!(ate_snippet(&relative(&gt), &gt) < 1e-12);
    assert!(ate_snippet(&steps, &gt) < 1e-12);
}

#[test]
fn tripled_translations_align_to_zero() {
    let t = [[0.0, 0.0, 0.0], [0.1, 0.0, 1.0], [0.3, -0.1, 2.1], [0.2, 0.0, 3.0], [0.4, 0.1, 4.2]];
    let gt: [RigidTransform; 5] = t.map(translation);
    let pred: [Pose6DoF; 4] = core::array::from_fn(|i| {
        let d = [t[i + 1][0] - t[i][0], t[i + 1][1] - t[i][1], t[i + 1][2] - t[i][2]];
        Pose6DoF::new([0.0; 3], d.map(|v| 3.0 * v))
    });
    assert!(ate_5frame(&pred, &gt) < 1e-12);
}

#[test]
fn one_displaced_frame() {
    // Frame 2 is off by 0.1 along x, chosen so the best scale stays exactly 1:
    // the error is orthogonal to the rest of the trajectory and g2 . e = -|e|^2.
    let gt_t = [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [-0.1, 0.0, 2.0], [0.0, 0.0, 3.0], [0.0, 0.0, 4.0]];
    let mut pred_t = gt_t;
    pred_t[2][0] += 0.1;
    let pred: [Pose6DoF; 4] = core::array::from_fn(|i| {
        Pose6DoF::new([0.0; 3], [0, 1, 2].map(|k| pred_t[i + 1][k] - pred_t[i][k]))
    });
    let ate = ate_5frame(&pred, &gt_t.map(translation));
    assert!((ate - 0.02).abs() < 1e-9, "{ate}");
}

#[test]
fn degenerate_ground_truth_uses_unit_scale() {
    let gt = [[0.0; 3]; 5].map(translation);
    let pred: [Pose6DoF; 4] = [Pose6DoF::new([0.0; 3], [0.0, 0.0, 0.5]); 4];
    // Positions 0, 0.5, 1, 1.5, 2 against a still camera.
    assert!((ate_5frame(&pred, &gt) - 1.0).abs() < 1e-12);
}

#[test]
fn mean_and_deviation_formatting() {
    assert_eq!(format_mean_std(&[0.009, 0.025]).unwrap(), "0.017 ± 0.008");
    assert_eq!(mean_std(&[1.0, 1.0]), Some((1.0, 0.0)));
    assert!(matches!(format_mean_std(&[]), Err(Error::EmptyEvaluation(_))));
}

#[test]
fn rank_correlation() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(spearman(&a, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap(), Some(1.0));
    assert_eq!(spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
    assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): r = 4.5 / sqrt(4.5 * 5).
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap().unwrap();
    assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-15);
    assert_eq!(spearman(&a, &[1.0; 5]).unwrap(), None);
    assert_eq!(spearman(&[1.0], &[1.0]).unwrap(), None);
    assert!(spearman(&a, &[1.0]).is_err());
}

#[test]
fn per_image_average() {
    let a = depth_metrics(&[2.0], &[1.0], None, &no_scaling()).unwrap();
    let b = depth_metrics(&[1.0], &[1.0], None, &no_scaling()).unwrap();
    let m = DepthMetrics::mean(&[a, b]).unwrap();
    assert_eq!(m.abs_rel, 0.5);
    assert_eq!(m.delta3, 0.5);
    assert!(DepthMetrics::mean(&[]).is_err());
    assert_eq!(b.csv_row(), "0.0000,0.0000,0.0000,0.0000,1.0000,1.0000,1.0000");
}
