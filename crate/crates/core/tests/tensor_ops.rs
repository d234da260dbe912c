use approx::assert_abs_diff_eq;
use mininet_core::autodiff::Tape;
use mininet_core::error::Error;
use mininet_core::optim::{Adam, AdamConfig};
use mininet_core::params::{ParamId, ParamStore};
use mininet_core::tensor::Tensor;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

/// Direct-summation convolution oracle.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
    let (n, _, h, wd) = x.dims4().unwrap();
    let (o, cg, k, _) = w.dims4().unwrap();
    let og = o / groups;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            let g = oi / og;
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[oi]);
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let cin = g * cg + ci;
                                acc += x.at4(ni, cin, iy as usize, ix as usize) * w.at4(oi, ci, ky, kx);
                            }
                        }
                    }
                    out[((ni * o + oi) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    t(&[n, o, ho, wo], &out)
}

#[test]
fn conv_identity_kernel_returns_input() {
    let tape = Tape::new();
    let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
    let y = tape.constant(x.clone()).conv2d(&tape.constant(t(&[1, 1, 1, 1], &[1.0])), None, 1, 0, 1).unwrap();
    assert_eq!(*y.value(), x);
}

#[test]
fn conv_two_by_two_diagonal_kernel() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
    let w = tape.constant(t(&[1, 1, 2, 2], &[1., 0., 0., 1.]));
    let y = x.conv2d(&w, None, 1, 0, 1).unwrap();
    assert_eq!(y.shape(), vec![1, 1, 1, 1]);
    assert_eq!(y.value().data(), &[5.0]);
}

#[test]
fn depthwise_stride_two_output_shape() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::ones(&[1, 64, 96, 320]));
    let w = tape.constant(Tensor::ones(&[64, 1, 3, 3]));
    let y = x.conv2d(&w, None, 2, 1, 64).unwrap();
    assert_eq!(y.shape(), vec![1, 64, 48, 160]);
}

#[test]
fn conv_channel_mismatch_is_shape_error() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(&[1, 3, 4, 4]));
    let w = tape.constant(Tensor::ones(&[2, 2, 3, 3]));
    assert!(matches!(x.conv2d(&w, None, 1, 1, 1), Err(Error::InvalidShape(_))));
    let w = tape.constant(Tensor::ones(&[2, 1, 3, 3]));
    assert!(matches!(x.conv2d(&w, None, 1, 1, 2), Err(Error::InvalidShape(_))));
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #[test]
    fn conv_matches_direct_summation(
        (cg, og, groups, k, stride, h, w) in (1usize..3, 1usize..3, 1usize..3, prop::sample::select(vec![1usize, 3]), 1usize..3, 3usize..6, 3usize..6),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = cg * groups;
        let o = og * groups;
        let mut r = |n: usize| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let x = t(&[2, c, h, w], &r(2 * c * h * w));
        let wt = t(&[o, cg, k, k], &r(o * cg * k * k));
        let b = r(o);
        let pad = k / 2;
        let tape = Tape::new();
        let y = tape.constant(x.clone()).conv2d(&tape.constant(wt.clone()), Some(&tape.constant(t(&[o], &b))), stride, pad, groups).unwrap();
        let oracle = conv_oracle(&x, &wt, Some(&b), stride, pad, groups);
        prop_assert_eq!(y.shape(), oracle.shape().to_vec());
        for (a, e) in y.value().data().iter().zip(oracle.data()) {
            prop_assert!((a - e).abs() < 1e-12, "{} vs {}", a, e);
        }
    }

    #[test]
    fn depthwise_equals_independent_single_channel_convs(
        c in 1usize..4, h in 1usize..5, w in 1usize..5, stride in 1usize..3,
        xs in values(4 * 4 * 4), ws in values(4 * 9),
    ) {
        let x = t(&[1, c, h, w], &xs[..c * h * w]);
        let wt = t(&[c, 1, 3, 3], &ws[..c * 9]);
        let tape = Tape::new();
        let y = tape.constant(x.clone()).conv2d(&tape.constant(wt.clone()), None, stride, 1, c).unwrap();
        let y = y.value();
        let per = y.numel() / c;
        for ch in 0..c {
            let xc = x.narrow_channels(ch, 1).unwrap();
            let wc = wt.clone().reshape(&[c, 9]).unwrap();
            let wc = t(&[1, 1, 3, 3], &wc.data()[ch * 9..(ch + 1) * 9]);
            let single = tape.constant(xc).conv2d(&tape.constant(wc), None, stride, 1, 1).unwrap();
            let sv = single.value();
            prop_assert_eq!(&y.data()[ch * per..(ch + 1) * per], sv.data());
        }
    }

    #[test]
    fn concat_then_narrow_recovers_inputs(ca in 1usize..4, cb in 1usize..4, xs in values(2 * 3 * 6), ys in values(2 * 3 * 6)) {
        let a = t(&[2, ca, 2, 3], &xs[..2 * ca * 6]);
        let b = t(&[2, cb, 2, 3], &ys[..2 * cb * 6]);
        let tape = Tape::new();
        let cat = tape.constant(a.clone()).concat_channels(&tape.constant(b.clone())).unwrap();
        prop_assert_eq!(&*cat.narrow_channels(0, ca).unwrap().value(), &a);
        prop_assert_eq!(&*cat.narrow_channels(ca, cb).unwrap().value(), &b);
    }

    #[test]
    fn bilinear_same_size_is_identity(h in 1usize..6, w in 1usize..6, xs in values(2 * 36)) {
        let x = t(&[1, 2, h, w], &xs[..2 * h * w]);
        let tape = Tape::new();
        prop_assert_eq!(&*tape.constant(x.clone()).bilinear_resize(h, w).unwrap().value(), &x);
    }

    #[test]
    fn bilinear_upsample_stays_within_endpoints(a in -5.0f64..5.0, b in -5.0f64..5.0, out_w in 1usize..9) {
        let tape = Tape::new();
        let y = tape.constant(t(&[1, 1, 1, 2], &[a, b])).bilinear_resize(1, out_w).unwrap();
        for &v in y.value().data() {
            prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
        }
    }
}

#[test]
fn bilinear_two_by_two_to_four_by_four_matches_formula() {
    // Half-pixel sampling positions, clamped at the border.
    let src = |o: usize| ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
    let img = [[0.0, 1.0], [2.0, 3.0]];
    let lerp = |y: f64, x: f64| {
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        (1.0 - fy) * ((1.0 - fx) * img[y0][x0] + fx * img[y0][x1]) + fy * ((1.0 - fx) * img[y1][x0] + fx * img[y1][x1])
    };
    let tape = Tape::new();
    let y = tape.constant(t(&[1, 1, 2, 2], &[0., 1., 2., 3.])).bilinear_resize(4, 4).unwrap();
    let v = y.value();
    for oy in 0..4 {
        for ox in 0..4 {
            assert_abs_diff_eq!(v.at4(0, 0, oy, ox), lerp(src(oy), src(ox)), epsilon = 1e-12);
        }
    }
    assert_abs_diff_eq!(v.at4(0, 0, 1, 1), 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(v.at4(0, 0, 2, 2), 2.25, epsilon = 1e-12);
}

#[test]
fn relu6_clips_both_ends() {
    let tape = Tape::new();
    let y = tape.constant(t(&[3], &[8.0, -1.0, 2.5])).relu6();
    assert_eq!(y.value().data(), &[6.0, 0.0, 2.5]);
}

#[test]
fn global_avg_pool_of_constant_map() {
    let tape = Tape::new();
    let y = tape.constant(Tensor::full(&[2, 3, 4, 5], 0.7)).global_avg_pool().unwrap();
    assert_eq!(y.shape(), vec![2, 3]);
    for &v in y.value().data() {
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-15);
    }
}

#[test]
fn elementwise_min_routes_gradient_to_argmin() {
    let tape = Tape::new();
    let a = tape.var(t(&[2], &[3.0, 1.0]));
    let b = tape.var(t(&[2], &[2.0, 5.0]));
    let m = a.minimum(&b).unwrap();
    assert_eq!(m.value().data(), &[2.0, 1.0]);
    let g = tape.backward(m.sum()).unwrap();
    assert_eq!(g.get_or_zeros(a).data(), &[0.0, 1.0]);
    assert_eq!(g.get_or_zeros(b).data(), &[1.0, 0.0]);
}

#[test]
fn elementwise_min_tie_goes_to_first_argument() {
    let tape = Tape::new();
    let a = tape.var(t(&[1], &[2.0]));
    let b = tape.var(t(&[1], &[2.0]));
    let g = tape.backward(a.minimum(&b).unwrap().sum()).unwrap();
    assert_eq!(g.get_or_zeros(a).data(), &[1.0]);
    assert_eq!(g.get_or_zeros(b).data(), &[0.0]);
}

#[test]
fn nearest_upsample_repeats_pixels() {
    let tape = Tape::new();
    let y = tape.constant(t(&[1, 1, 1, 2], &[1.0, 2.0])).nearest_upsample2x().unwrap();
    assert_eq!(y.shape(), vec![1, 1, 2, 4]);
    assert_eq!(y.value().data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
}

#[test]
fn fully_connected_matches_hand_product() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let w = tape.constant(t(&[2, 2], &[1.0, -1.0, 0.5, 2.0]));
    let b = tape.constant(t(&[2], &[0.1, 0.2]));
    let y = x.linear(&w, Some(&b)).unwrap();
    assert_eq!(y.value().data(), &[1.0 - 2.0 + 0.1, 0.5 + 4.0 + 0.2]);
}

#[test]
fn backward_of_sum_is_ones() {
    let tape = Tape::new();
    let x = tape.var(t(&[2, 3], &[1., -2., 3., 0.5, 7., -1.]));
    let g = tape.backward(x.sum()).unwrap();
    assert_eq!(g.get_or_zeros(x).data(), &[1.0; 6]);
}

#[test]
fn backward_of_mean_square() {
    let data = [1., -2., 3., 0.5, 7., -1.];
    let tape = Tape::new();
    let x = tape.var(t(&[6], &data));
    let g = tape.backward(x.square().mean()).unwrap();
    for (gi, xi) in g.get_or_zeros(x).data().iter().zip(data) {
        assert_abs_diff_eq!(*gi, 2.0 * xi / 6.0, epsilon = 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar_root() {
    let tape = Tape::new();
    let x = tape.var(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(x.square()), Err(Error::Contract(_))));
}

#[test]
fn backward_twice_is_an_error() {
    let tape = Tape::new();
    let x = tape.var(t(&[2], &[1.0, 2.0]));
    let y = x.sum();
    tape.backward(y).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn gradients_accumulate_over_reuse() {
    let tape = Tape::new();
    let x = tape.var(t(&[1], &[3.0]));
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get_or_zeros(x).data(), &[7.0]);
}

#[test]
fn tensor_rejects_wrong_length() {
    assert!(matches!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]), Err(Error::InvalidShape(_))));
}

fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("p", t(&[1], &[v]), true);
    (s, id)
}

#[test]
fn adam_defaults() {
    let c = AdamConfig::default();
    assert_eq!((c.beta1, c.beta2, c.lr), (0.9, 0.999, 1e-4));
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let (mut s, id) = scalar_store(0.3);
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(&mut s, &[(id, t(&[1], &[0.0]))]).unwrap();
    assert_eq!(s.value(id).data(), &[0.3]);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    for g in [0.5, -3.0, 1e-3] {
        let (mut s, id) = scalar_store(1.0);
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg);
        adam.step(&mut s, &[(id, t(&[1], &[g]))]).unwrap();
        // m_hat = g, v_hat = g^2 after bias correction.
        let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
        assert_abs_diff_eq!(s.value(id).data()[0], expected, epsilon = 1e-12);
    }
}

#[test]
fn adam_rejects_non_finite_without_touching_anything() {
    let mut s = ParamStore::new();
    let a = s.add("a", t(&[1], &[1.0]), true);
    let b = s.add("b", t(&[1], &[2.0]), true);
    let mut adam = Adam::new(AdamConfig::default());
    let r = adam.step(&mut s, &[(a, t(&[1], &[1.0])), (b, t(&[1], &[f64::NAN]))]);
    assert!(matches!(r, Err(Error::NonFinite(msg)) if msg.contains('b')));
    assert_eq!(s.value(a).data(), &[1.0]);
    assert_eq!(adam.steps(), 0);
}
