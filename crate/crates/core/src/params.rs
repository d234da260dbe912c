//! Named parameter storage and per-step binding onto a tape.

use alloc::string::String;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored but not trained.
    pub trainable: bool,
}

/// Flat, ordered collection of named tensors owned by one or more networks.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, value, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total element count of trainable parameters.
    pub fn trainable_elements(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Total element count over the given ids (each id counted once).
    pub fn count_elements(&self, ids: &[ParamId]) -> usize {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().map(|&id| self.params[id.0].value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), trainable: p.trainable })
                .collect(),
        }
    }

    /// Replaces the value of `name`, checking the shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.find(name).ok_or_else(|| Error::Config(alloc::format!("unknown parameter {name}")))?;
        let slot = &mut self.params[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::InvalidShape(alloc::format!(
                "parameter {name}: expected shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }
}

/// Xavier (Glorot) uniform initialisation with PyTorch fan conventions:
/// `fan_in = shape[1] * receptive`, `fan_out = shape[0] * receptive`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let receptive: usize = shape.iter().skip(2).product();
    let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
    let fan_out = shape[0] * receptive;
    let bound = num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("element count matches shape")
}

/// One forward pass worth of parameter bindings.
///
/// Each parameter is recorded on the tape at most once, so a weight used by
/// several layers (or by every recurrent iteration) accumulates all of its
/// gradient contributions in a single leaf.
pub struct Session<'t, 's, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    vars: RefCell<Vec<Option<Var<'t, T>>>>,
    training: bool,
    track_grads: bool,
    stat_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, 's, T: Scalar> Session<'t, 's, T> {
    /// Training session: batch statistics in batch norm, gradients tracked.
    pub fn train(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self::with_mode(tape, store, true, true)
    }

    /// Inference session: running statistics, no parameter gradients.
    pub fn eval(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self::with_mode(tape, store, false, false)
    }

    pub fn with_mode(tape: &'t Tape<T>, store: &'s ParamStore<T>, training: bool, track_grads: bool) -> Self {
        Session {
            tape,
            store,
            vars: RefCell::new(alloc::vec![None; store.len()]),
            training,
            track_grads,
            stat_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = if p.trainable && self.track_grads {
            self.tape.var(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Records a new value for a non-trainable buffer, applied by [`Session::finish`].
    pub fn update_buffer(&self, id: ParamId, value: Tensor<T>) {
        self.stat_updates.borrow_mut().push((id, value));
    }

    /// Gradients of every trainable parameter bound during this session.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                (self.store.get(ParamId(i)).trainable && v.requires_grad()).then(|| (ParamId(i), grads.get_or_zeros(v)))
            })
            .collect()
    }

    /// Buffer updates recorded during the pass, in recording order.
    pub fn finish(self) -> Vec<(ParamId, Tensor<T>)> {
        self.stat_updates.into_inner()
    }
}
