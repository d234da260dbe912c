//! Inference on raw `[3, H, W]` frames in `[0, 1]`.

use mininet_core::geometry::RigidTransform;
use mininet_core::trainer::normalize;
use mininet_core::{Scalar, Tensor};

use crate::checkpoint::Model;
use crate::error::Result;

fn batched<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape().to_vec();
    Ok(normalize(&img.clone().reshape(&[1, s[0], s[1], s[2]])?))
}

/// Disparity maps at input resolution, finest first, each `[1, 1, H, W]`.
pub fn predict_disparity<T: Scalar>(model: &Model<T>, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    Ok(model.depth.predict(&model.store, &batched(img)?)?)
}

/// Transform taking points from `target`'s camera into `source`'s.
pub fn predict_motion<T: Scalar>(model: &Model<T>, target: &Tensor<T>, source: &Tensor<T>) -> Result<RigidTransform> {
    let p = model.pose.predict(&model.store, &batched(target)?, &batched(source)?)?;
    Ok(p[0].to_matrix())
}

/// Relative poses between consecutive frames: element `k` maps frame `k + 1`
/// camera coordinates into frame `k`.
pub fn predict_consecutive<T: Scalar>(model: &Model<T>, frames: &[Tensor<T>]) -> Result<Vec<RigidTransform>> {
    frames.windows(2).map(|w| predict_motion(model, &w[1], &w[0])).collect()
}
