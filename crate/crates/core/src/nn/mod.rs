//! Minimal differentiable kernel: the layer set of the CNN–BGRU model with
//! hand-written backward passes, parameter/FLOP accounting and f16 storage.

mod dense;
mod graph;
mod gru;
mod head;
pub(crate) mod kernels;
mod quant;
mod real;
mod tensor;

pub use dense::{Activation, DenseLayer};
pub use graph::{count_flops, count_params, FlopConvention, LayerGraph, LayerInfo};
pub use gru::{Bgru, GruCell};
pub use head::{Conv1d, Dropout, HeadLayer, LayerDesc, MaxPool1d, Normalization, Rescale};
pub use quant::{f16_round_trip, Precision};
pub use real::Real;
pub use tensor::Tensor;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Train mode enables dropout; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A parameter buffer with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Normalisation statistics are counted but never updated by the optimizer.
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize], trainable: bool) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            trainable,
        }
    }

    pub fn glorot<R: rand::Rng>(name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape, true);
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        for v in p.value.iter_mut() {
            *v = T::c((rng.random::<f64>() * 2.0 - 1.0) * limit);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| U::c(v.f64())).collect(),
            grad: vec![U::zero(); self.value.len()],
            trainable: self.trainable,
        }
    }
}
