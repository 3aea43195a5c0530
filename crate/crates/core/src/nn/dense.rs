use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::kernels::{axpy, dot, matmul_at_acc, matmul_bt, sigmoid};
use super::{Param, Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    /// Row-wise in place; `width` is the row length (for softmax).
    pub fn apply<T: Real>(self, z: &mut [T], width: usize) {
        match self {
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Identity => {}
            Activation::Softmax => {
                for row in z.chunks_mut(width) {
                    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                    let mut s = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    row.iter_mut().for_each(|v| *v = *v / s);
                }
            }
        }
    }

    /// Turn dL/dy into dL/dz given the activation output y.
    pub fn backprop<T: Real>(self, y: &[T], dy: &mut [T], width: usize) {
        match self {
            Activation::Relu => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    *d *= v * (T::one() - v);
                }
            }
            Activation::Tanh => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    *d *= T::one() - v * v;
                }
            }
            Activation::Identity => {}
            Activation::Softmax => {
                for (dr, yr) in dy.chunks_mut(width).zip(y.chunks(width)) {
                    let s = dot(dr, yr);
                    for (d, &v) in dr.iter_mut().zip(yr) {
                        *d = v * (*d - s);
                    }
                }
            }
        }
    }
}

/// Fully connected layer, `W` stored out×in.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub act: Activation,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new<R: rand::Rng>(name: &str, input: usize, output: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            w: Param::glorot(format!("{name}.w"), &[output, input], input, output, rng),
            b: Param::zeros(format!("{name}.b"), &[output], true),
            act,
            cache: None,
        }
    }

    pub fn from_params(w: Param<T>, b: Param<T>, act: Activation) -> Result<Self> {
        if w.shape.len() != 2 || b.shape != [w.shape[0]] {
            return Err(shape_err!("dense params {:?} / {:?}", w.shape, b.shape));
        }
        Ok(Self { w, b, act, cache: None })
    }

    pub fn input(&self) -> usize {
        self.w.shape[1]
    }

    pub fn output(&self) -> usize {
        self.w.shape[0]
    }

    /// act(x Wᵀ + b) over the last axis; leading axes are batch.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (i, o) = (self.input(), self.output());
        let last = *x.shape.last().ok_or_else(|| shape_err!("dense input is a scalar"))?;
        if last != i {
            return Err(shape_err!("dense expects width {i}, got {last}"));
        }
        let n = x.len() / i;
        let mut y = vec![T::zero(); n * o];
        matmul_bt(&x.data, &self.w.value, Some(&self.b.value), n, i, o, &mut y);
        self.act.apply(&mut y, o);
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = o;
        self.cache = Some((x.data.clone(), y.clone()));
        Tensor::new(&shape, y)
    }

    /// Accumulates parameter gradients; returns dL/dx.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, y) = self.cache.as_ref().ok_or(Error::NoForward)?;
        let (i, o) = (self.input(), self.output());
        if dy.len() != y.len() {
            return Err(shape_err!("dense backward got {} values, expected {}", dy.len(), y.len()));
        }
        let n = y.len() / o;
        let mut dz = dy.data.clone();
        self.act.backprop(y, &mut dz, o);
        matmul_at_acc(&dz, x, n, o, i, &mut self.w.grad);
        for r in dz.chunks(o) {
            axpy(&mut self.b.grad, T::one(), r);
        }
        let mut dx = vec![T::zero(); n * i];
        super::kernels::matmul_acc(&dz, &self.w.value, n, o, i, &mut dx);
        let mut shape = dy.shape.clone();
        *shape.last_mut().unwrap() = i;
        Tensor::new(&shape, dx)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: Vec<f64>, b: Vec<f64>, out: usize, act: Activation) -> DenseLayer<f64> {
        let inp = w.len() / out;
        let mut wp = Param::zeros("w", &[out, inp], true);
        wp.value = w;
        let mut bp = Param::zeros("b", &[out], true);
        bp.value = b;
        DenseLayer::from_params(wp, bp, act).unwrap()
    }

    #[test]
    fn zero_map_and_identity() {
        let mut l = layer(vec![0.0; 12], vec![0.0; 3], 3, Activation::Relu);
        let x = Tensor::new(&[2, 4], vec![1.0, -2.0, 3.0, 4.0, 5.0, 6.0, -7.0, 8.0]).unwrap();
        assert!(l.forward(&x).unwrap().data.iter().all(|&v| v == 0.0));

        let mut eye = vec![0.0; 9];
        for k in 0..3 {
            eye[k * 3 + k] = 1.0;
        }
        let mut l = layer(eye, vec![0.0; 3], 3, Activation::Identity);
        let x = Tensor::new(&[1, 3], vec![0.5, -1.5, 2.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data, x.data);
        assert!(l.forward(&Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut z = vec![1000.0f32, 0.0, -3.0, 2.0, 2.0, 2.0];
        Activation::Softmax.apply(&mut z, 3);
        for r in z.chunks(3) {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn backward_requires_forward() {
        let mut l = layer(vec![0.0; 4], vec![0.0; 2], 2, Activation::Relu);
        assert_eq!(l.backward(&Tensor::zeros(&[1, 2])).unwrap_err(), Error::NoForward);
    }
}
