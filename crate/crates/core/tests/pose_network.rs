use mininet_core::error::Error;
use mininet_core::geometry::RigidTransform;
use mininet_core::params::ParamStore;
use mininet_core::posenet::*;
use mininet_core::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(n: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[n, 3, 32, 64], (0..n * 3 * 32 * 64).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn net() -> (PoseNet, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let net = PoseNet::build(&mut store, "pose", PoseNetConfig { width_multiplier: 0.125 }, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    (net, store)
}

fn set(store: &mut ParamStore<f64>, name: &str, f: impl Fn(f64) -> f64) {
    let id = store.find(name).unwrap();
    store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = f(*v));
}

#[test]
fn zero_head_gives_identity_motion() {
    let (net, mut store) = net();
    set(&mut store, "pose.head.3.weight", |_| 0.0);
    let poses = net.predict(&store, &frames(2, 0), &frames(2, 1)).unwrap();
    for p in poses {
        assert_eq!(p, Pose6DoF::default());
        assert_eq!(p.to_matrix(), RigidTransform::identity());
    }
}

#[test]
fn unit_head_output_is_scaled_down() {
    let (net, mut store) = net();
    set(&mut store, "pose.head.3.weight", |_| 0.0);
    set(&mut store, "pose.head.3.bias", |_| 1.0);
    let p = net.predict(&store, &frames(1, 0), &frames(1, 1)).unwrap()[0];
    assert_eq!(p.rotation, [0.01; 3]);
    assert_eq!(p.translation, [0.01; 3]);
}

#[test]
fn doubling_head_doubles_pose() {
    let (net, mut store) = net();
    set(&mut store, "pose.head.3.bias", |_| 0.3);
    let (t, s) = (frames(1, 4), frames(1, 5));
    let a = net.predict(&store, &t, &s).unwrap()[0];
    set(&mut store, "pose.head.3.weight", |v| 2.0 * v);
    set(&mut store, "pose.head.3.bias", |v| 2.0 * v);
    let b = net.predict(&store, &t, &s).unwrap()[0];
    for i in 0..3 {
        assert_eq!(b.rotation[i], 2.0 * a.rotation[i]);
        assert_eq!(b.translation[i], 2.0 * a.translation[i]);
    }
}

#[test]
fn one_parameter_set_serves_every_source() {
    let (net, store) = net();
    let before = store.trainable_elements();
    let target = frames(1, 0);
    let (prev, next) = (frames(1, 1), frames(1, 2));
    let a = net.predict(&store, &target, &prev).unwrap();
    let b = net.predict(&store, &target, &next).unwrap();
    assert_eq!(store.trainable_elements(), before);
    // Batched inference with running statistics treats pairs independently.
    let mut targets = target.data().to_vec();
    targets.extend_from_slice(target.data());
    let mut sources = prev.data().to_vec();
    sources.extend_from_slice(next.data());
    let batched = net
        .predict(&store, &Tensor::new(&[2, 3, 32, 64], targets).unwrap(), &Tensor::new(&[2, 3, 32, 64], sources).unwrap())
        .unwrap();
    for (x, y) in batched.iter().zip(a.iter().chain(&b)) {
        for i in 0..3 {
            assert!((x.rotation[i] - y.rotation[i]).abs() < 1e-15);
            assert!((x.translation[i] - y.translation[i]).abs() < 1e-15);
        }
    }
}

#[test]
fn swapped_pair_is_an_independent_prediction() {
    let (net, mut store) = net();
    set(&mut store, "pose.head.3.bias", |_| 0.5);
    let (t, s) = (frames(1, 6), frames(1, 7));
    let fwd = net.predict(&store, &t, &s).unwrap()[0].to_matrix();
    let bwd = net.predict(&store, &s, &t).unwrap()[0].to_matrix();
    assert!(fwd.compose(&bwd).max_abs_diff(&RigidTransform::identity()) > 1e-6);
}

#[test]
fn mismatched_frames_are_rejected() {
    let (net, store) = net();
    let other = Tensor::zeros(&[1, 3, 32, 32]);
    assert!(matches!(net.predict(&store, &frames(1, 0), &other), Err(Error::InvalidShape(_))));
    assert!(matches!(net.predict(&store, &Tensor::zeros(&[1, 1, 32, 64]), &Tensor::zeros(&[1, 1, 32, 64])), Err(Error::InvalidShape(_))));
}

#[test]
fn quarter_turn_about_z() {
    let m = pose_to_matrix(&Pose6DoF::new([0.0, 0.0, core::f64::consts::FRAC_PI_2], [0.0; 3]));
    let p = m.transform_point([1.0, 0.0, 0.0]);
    for (a, e) in p.iter().zip([0.0, 1.0, 0.0]) {
        assert!((a - e).abs() < 1e-6);
    }
    assert_eq!(pose_to_matrix(&Pose6DoF::default()), RigidTransform::identity());
}

proptest! {
    #[test]
    fn rotations_are_proper(r in prop::array::uniform3(-0.5f64..0.5), t in prop::array::uniform3(-2.0f64..2.0)) {
        let m = pose_to_matrix(&Pose6DoF::new(r, t));
        prop_assert!(m.orthonormality_error() < 1e-6);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-6);
        prop_assert!(m.compose(&m.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-6);
        prop_assert!(m.inverse().compose(&m).max_abs_diff(&RigidTransform::identity()) < 1e-6);
    }
}
