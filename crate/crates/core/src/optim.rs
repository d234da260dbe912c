//! Adam with bias correction.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    state: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, state: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = store.get(*id);
            if p.value.shape() != g.shape() {
                return Err(Error::InvalidShape(format!(
                    "gradient for {} has shape {:?}, parameter is {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {} is not finite; step rejected", p.name)));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - num_traits::Float::powi(beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(beta2, t);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(eps);
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), || None);
        }
        for (id, g) in grads {
            let n = g.numel();
            let st = self.state[id.0].get_or_insert_with(|| Moments { m: alloc::vec![T::zero(); n], v: alloc::vec![T::zero(); n] });
            let value = store.value_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                st.m[i] = b1 * st.m[i] + ob1 * gi;
                st.v[i] = b2 * st.v[i] + ob2 * gi * gi;
                value[i] -= step_size * st.m[i] / ((st.v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
