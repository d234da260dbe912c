use mininet_core::autodiff::Tape;
use mininet_core::geometry::*;
use mininet_core::gradcheck::check_fn;
use mininet_core::posenet::{pose_to_matrix, Pose6DoF};
use mininet_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 6;
const W: usize = 9;

fn k() -> Intrinsics {
    Intrinsics::new(7.0, 6.5, 4.2, 2.7).unwrap()
}

fn pose_vars<'t>(tape: &'t Tape<f64>, m: &RigidTransform) -> (mininet_core::autodiff::Var<'t, f64>, mininet_core::autodiff::Var<'t, f64>) {
    (
        tape.constant(Tensor::new(&[1, 9], m.rotation().to_vec()).unwrap()),
        tape.constant(Tensor::new(&[1, 3], m.translation().to_vec()).unwrap()),
    )
}

fn coords_for(depth: &Tensor<f64>, m: &RigidTransform, k: Intrinsics) -> (Tensor<f64>, Tensor<f64>) {
    let tape = Tape::new();
    let (r, t) = pose_vars(&tape, m);
    let (c, mask) = project(tape.constant(depth.clone()), r, t, &[k]).unwrap();
    ((*c.value()).clone(), mask)
}

fn grid_coords(dx: f64, dy: f64) -> Tensor<f64> {
    let mut d = vec![0.0; 2 * H * W];
    for v in 0..H {
        for u in 0..W {
            d[v * W + u] = u as f64 + dx;
            d[H * W + v * W + u] = v as f64 + dy;
        }
    }
    Tensor::new(&[1, 2, H, W], d).unwrap()
}

fn random_image(c: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[1, c, H, W], (0..c * H * W).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

fn warp(img: &Tensor<f64>, coords: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let tape = Tape::new();
    let (w, m) = inverse_warp(tape.constant(img.clone()), tape.constant(coords.clone())).unwrap();
    ((*w.value()).clone(), m)
}

#[test]
fn disparity_to_depth_examples() {
    let c = DepthConstants::default();
    assert!((c.depth(1e-12) - 100.0).abs() < 1e-6);
    assert_eq!(c.depth(1.0), 1.0 / 10.01);
    assert!((c.depth(0.099) - 1.0).abs() < 1e-12);
    let tape = Tape::new();
    let d = disp_to_depth(tape.constant(Tensor::new(&[3], vec![1.0, 0.5, 0.099]).unwrap()), c);
    for (a, p) in d.value().data().iter().zip([1.0f64, 0.5, 0.099]) {
        assert!((a - 1.0 / (10.0 * p + 0.01)).abs() < 1e-15);
    }
}

#[test]
fn intrinsics_validation_and_scaling() {
    assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    assert!(Intrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    let s = Intrinsics::new(700.0, 690.0, 320.0, 96.0).unwrap().scaled(0.5, 0.25);
    assert_eq!((s.fx, s.fy, s.cx, s.cy), (350.0, 172.5, 160.0, 24.0));
}

proptest! {
    #[test]
    fn identity_pose_reproduces_the_grid(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let depth = Tensor::new(&[1, 1, H, W], (0..H * W).map(|_| scale * r.random_range(0.05..1.0)).collect()).unwrap();
        let (c, mask) = coords_for(&depth, &RigidTransform::identity(), k());
        prop_assert_eq!(&c, &grid_coords(0.0, 0.0));
        prop_assert!(mask.data().iter().all(|&m| m == 1.0));
        let img = random_image(3, seed);
        let (warped, valid) = warp(&img, &c);
        prop_assert_eq!(warped, img);
        prop_assert!(valid.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn lateral_translation_shifts_by_focal_over_depth(tx in -0.5f64..0.5, z in 1.0f64..30.0) {
        let depth = Tensor::full(&[1, 1, H, W], z);
        let m = RigidTransform::from_rt([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], [tx, 0.0, 0.0]);
        let kk = k();
        let (c, _) = coords_for(&depth, &m, kk);
        for v in 0..H {
            for u in 0..W {
                prop_assert!((c.data()[v * W + u] - (u as f64 + kk.fx * tx / z)).abs() < 1e-5);
                prop_assert!((c.data()[H * W + v * W + u] - v as f64).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn doubling_depth_and_translation_is_invisible(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let depth = Tensor::new(&[1, 1, H, W], (0..H * W).map(|_| r.random_range(1.0..10.0)).collect()).unwrap();
        let rot = [r.random_range(-0.05..0.05), r.random_range(-0.05..0.05), r.random_range(-0.05..0.05)];
        let t = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
        let a = pose_to_matrix(&Pose6DoF::new(rot, t));
        let b = pose_to_matrix(&Pose6DoF::new(rot, t.map(|x| 2.0 * x)));
        let (ca, ma) = coords_for(&depth, &a, k());
        let (cb, mb) = coords_for(&depth.map(|z| 2.0 * z), &b, k());
        prop_assert_eq!(ca, cb);
        prop_assert_eq!(ma, mb);
    }

    #[test]
    fn batched_projection_matches_pointwise(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let depth = Tensor::new(&[1, 1, H, W], (0..H * W).map(|_| r.random_range(1.0..10.0)).collect()).unwrap();
        let m = pose_to_matrix(&Pose6DoF::new(
            [r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), r.random_range(-0.1..0.1)],
            [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)],
        ));
        let kk = k();
        let (c, _) = coords_for(&depth, &m, kk);
        for v in 0..H {
            for u in 0..W {
                let (x, y) = project_point(u as f64, v as f64, depth.data()[v * W + u], &kk, &m).unwrap();
                prop_assert!((c.data()[v * W + u] - x).abs() < 1e-9);
                prop_assert!((c.data()[H * W + v * W + u] - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn integer_shift_is_translation_equivariant(seed in any::<u64>(), dx in -2i32..=2, dy in -2i32..=2) {
        let img = random_image(2, seed);
        let (warped, mask) = warp(&img, &grid_coords(dx as f64, dy as f64));
        for ch in 0..2 {
            for v in 0..H as i32 {
                for u in 0..W as i32 {
                    let (su, sv) = (u + dx, v + dy);
                    let inside = su >= 0 && su < W as i32 && sv >= 0 && sv < H as i32;
                    prop_assert_eq!(mask.data()[(v * W as i32 + u) as usize] == 1.0, inside);
                    if inside {
                        let out = warped.data()[ch * H * W + (v * W as i32 + u) as usize];
                        prop_assert_eq!(out, img.data()[ch * H * W + (sv * W as i32 + su) as usize]);
                    }
                }
            }
        }
    }
}

#[test]
fn half_pixel_shift_on_a_ramp() {
    let ramp = Tensor::new(&[1, 1, H, W], (0..H * W).map(|i| (i % W) as f64).collect()).unwrap();
    let (warped, mask) = warp(&ramp, &grid_coords(0.5, 0.0));
    for v in 0..H {
        for u in 0..W - 1 {
            assert_eq!(warped.data()[v * W + u], u as f64 + 0.5);
            assert_eq!(mask.data()[v * W + u], 1.0);
        }
        // Past the last column the sample is clamped to the border and flagged.
        assert_eq!(warped.data()[v * W + W - 1], (W - 1) as f64);
        assert_eq!(mask.data()[v * W + W - 1], 0.0);
    }
}

#[test]
fn points_behind_the_source_camera_are_invalid() {
    let depth = Tensor::full(&[1, 1, H, W], 1.0);
    let m = RigidTransform::from_rt([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -5.0]);
    let (_, mask) = coords_for(&depth, &m, k());
    assert!(mask.data().iter().all(|&v| v == 0.0));
    assert_eq!(project_point(1.0, 1.0, 1.0, &k(), &m), None);
}

#[test]
fn warp_gradients_match_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let (h, w) = (8, 8);
    let depth = Tensor::new(&[1, 1, h, w], (0..h * w).map(|_| r.random_range(2.0..6.0)).collect()).unwrap();
    let img = Tensor::new(&[1, 3, h, w], (0..3 * h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let axis = Tensor::new(&[1, 3], vec![0.02, -0.03, 0.01]).unwrap();
    let trans = Tensor::new(&[1, 3], vec![0.15, -0.05, 0.1]).unwrap();
    let kk = Intrinsics::new(6.0, 6.0, 3.5, 3.5).unwrap();
    let res = check_fn("warp", &[depth, img, axis, trans], None, 4, |_, x| {
        let rot = rotation_matrices(x[2])?;
        let (coords, _) = project(x[0], rot, x[3], &[kk])?;
        Ok(inverse_warp(x[1], coords)?.0)
    })
    .unwrap();
    assert!(res.passed(), "{res:?}");
}
