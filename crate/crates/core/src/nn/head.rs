//! Per-window layers on (batch, channels, length) tensors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{axpy, dot};
use super::{Mode, Param, Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Configurable part of a CNN head (convs use ReLU, stride 1, valid padding).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerDesc {
    Conv { filters: usize, kernel: usize },
    MaxPool { pool: usize },
    Dropout { rate: f64 },
}

fn dims3<T>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.shape[..] {
        [n, c, l] => Ok((n, c, l)),
        _ => Err(shape_err!("expected (batch, channels, length), got {:?}", x.shape)),
    }
}

/// Multiplies by a fixed constant; no parameters.
#[derive(Clone, Debug)]
pub struct Rescale {
    pub scale: f64,
}

/// Per-channel standardization with frozen statistics.
#[derive(Clone, Debug)]
pub struct Normalization<T> {
    pub mean: Param<T>,
    pub var: Param<T>,
    pub count: Param<T>,
}

const NORM_EPS: f64 = 1e-7;

impl<T: Real> Normalization<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let mut var = Param::zeros(format!("{name}.variance"), &[channels], false);
        var.value.iter_mut().for_each(|v| *v = T::one());
        Self {
            mean: Param::zeros(format!("{name}.mean"), &[channels], false),
            var,
            count: Param::zeros(format!("{name}.count"), &[1], false),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Fit statistics over every window and time step of `x` (N, C, L).
    pub fn adapt(&mut self, x: &Tensor<T>) -> Result<()> {
        let (n, c, l) = dims3(x)?;
        if c != self.channels() {
            return Err(shape_err!("normalisation has {} channels, input {c}", self.channels()));
        }
        let cnt = (n * l) as f64;
        for ch in 0..c {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for b in 0..n {
                for &v in &x.data[(b * c + ch) * l..(b * c + ch + 1) * l] {
                    s += v.f64();
                    s2 += v.f64() * v.f64();
                }
            }
            let mean = if cnt > 0.0 { s / cnt } else { 0.0 };
            let var = if cnt > 0.0 { (s2 / cnt - mean * mean).max(0.0) } else { 1.0 };
            self.mean.value[ch] = T::c(mean);
            self.var.value[ch] = T::c(var);
        }
        self.count.value[0] = T::c(cnt);
        Ok(())
    }

    fn inv_std(&self, ch: usize) -> T {
        T::one() / self.var.value[ch].sqrt().max(T::c(NORM_EPS))
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Real> Conv1d<T> {
    pub fn new<R: Rng>(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            w: Param::glorot(format!("{name}.w"), &[out_ch, in_ch, kernel], in_ch * kernel, out_ch * kernel, rng),
            b: Param::zeros(format!("{name}.b"), &[out_ch], true),
            cache: None,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.w.shape[0]
    }

    pub fn in_ch(&self) -> usize {
        self.w.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape[2]
    }

    /// Valid cross-correlation + bias + ReLU.
    pub fn forward_act(&mut self, x: Tensor<T>, relu: bool) -> Result<Tensor<T>> {
        let (n, c, l) = dims3(&x)?;
        let (o, k) = (self.out_ch(), self.kernel());
        if c != self.in_ch() {
            return Err(shape_err!("conv expects {} channels, got {c}", self.in_ch()));
        }
        if l < k {
            return Err(shape_err!("conv kernel {k} longer than input {l}"));
        }
        let lo = l - k + 1;
        let mut y = vec![T::zero(); n * o * lo];
        for b in 0..n {
            let xb = &x.data[b * c * l..(b + 1) * c * l];
            for oc in 0..o {
                let out = &mut y[(b * o + oc) * lo..(b * o + oc + 1) * lo];
                out.iter_mut().for_each(|v| *v = self.b.value[oc]);
                for ic in 0..c {
                    let xc = &xb[ic * l..(ic + 1) * l];
                    let wr = &self.w.value[(oc * c + ic) * k..(oc * c + ic + 1) * k];
                    for (j, &wv) in wr.iter().enumerate() {
                        axpy(out, wv, &xc[j..j + lo]);
                    }
                }
                if relu {
                    out.iter_mut().for_each(|v| *v = v.max(T::zero()));
                }
            }
        }
        let yt = Tensor::new(&[n, o, lo], y)?;
        self.cache = Some((x, if relu { yt.data.clone() } else { Vec::new() }));
        Ok(yt)
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        let (x, y) = self.cache.as_ref().ok_or(Error::NoForward)?;
        let (n, c, l) = dims3(x)?;
        let (o, k) = (self.out_ch(), self.kernel());
        let lo = l - k + 1;
        if dy.len() != n * o * lo {
            return Err(shape_err!("conv backward size mismatch"));
        }
        let mut dz = dy.data;
        if !y.is_empty() {
            for (d, &v) in dz.iter_mut().zip(y) {
                if v <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let mut dx = if need_dx { vec![T::zero(); n * c * l] } else { Vec::new() };
        for b in 0..n {
            let xb = &x.data[b * c * l..(b + 1) * c * l];
            for oc in 0..o {
                let g = &dz[(b * o + oc) * lo..(b * o + oc + 1) * lo];
                self.b.grad[oc] += g.iter().copied().sum::<T>();
                for ic in 0..c {
                    let xc = &xb[ic * l..(ic + 1) * l];
                    let base = (oc * c + ic) * k;
                    for j in 0..k {
                        self.w.grad[base + j] += dot(g, &xc[j..j + lo]);
                    }
                    if need_dx {
                        let dxc = &mut dx[(b * c + ic) * l..(b * c + ic + 1) * l];
                        for j in 0..k {
                            axpy(&mut dxc[j..j + lo], self.w.value[base + j], g);
                        }
                    }
                }
            }
        }
        if need_dx {
            Ok(Some(Tensor::new(&[n, c, l], dx)?))
        } else {
            Ok(None)
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool1d {
    pub pool: usize,
    cache: Option<(Vec<usize>, [usize; 3])>,
}

impl MaxPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool < 1 {
            return Err(Error::Invalid(String::from("pool size must be >= 1")));
        }
        Ok(Self { pool, cache: None })
    }

    pub fn forward<T: Real>(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, l) = dims3(&x)?;
        let p = self.pool;
        let lo = l / p;
        let mut y = Vec::with_capacity(n * c * lo);
        let mut arg = Vec::with_capacity(n * c * lo);
        for row in 0..n * c {
            let xr = &x.data[row * l..(row + 1) * l];
            for j in 0..lo {
                let mut bi = j * p;
                for i in j * p + 1..(j + 1) * p {
                    if xr[i] > xr[bi] {
                        bi = i;
                    }
                }
                y.push(xr[bi]);
                arg.push(row * l + bi);
            }
        }
        self.cache = Some((arg, [n, c, l]));
        Tensor::new(&[n, c, lo], y)
    }

    pub fn backward<T: Real>(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let (arg, shape) = self.cache.as_ref().ok_or(Error::NoForward)?;
        if dy.len() != arg.len() {
            return Err(shape_err!("pool backward size mismatch"));
        }
        let mut dx = vec![T::zero(); shape.iter().product()];
        for (&i, &g) in arg.iter().zip(&dy.data) {
            dx[i] += g;
        }
        Tensor::new(shape, dx)
    }
}

/// Inverted dropout.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} not in [0,1)")));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn forward<T: Real>(&mut self, mut x: Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return x;
        }
        let scale = T::c(1.0 / (1.0 - self.rate));
        let mask: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= self.rate).collect();
        for (v, &m) in x.data.iter_mut().zip(&mask) {
            *v = if m { *v * scale } else { T::zero() };
        }
        self.mask = Some(mask);
        x
    }

    pub fn backward<T: Real>(&mut self, mut dy: Tensor<T>) -> Tensor<T> {
        if let Some(mask) = &self.mask {
            let scale = T::c(1.0 / (1.0 - self.rate));
            for (v, &m) in dy.data.iter_mut().zip(mask) {
                *v = if m { *v * scale } else { T::zero() };
            }
        }
        dy
    }
}

#[derive(Clone, Debug)]
pub enum HeadLayer<T> {
    Rescale(Rescale),
    Norm(Normalization<T>),
    Conv(Conv1d<T>),
    Pool(MaxPool1d),
    Dropout(Dropout),
}

impl<T: Real> HeadLayer<T> {
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        match self {
            HeadLayer::Rescale(r) => {
                let s = T::c(r.scale);
                let mut x = x;
                x.data.iter_mut().for_each(|v| *v *= s);
                Ok(x)
            }
            HeadLayer::Norm(nm) => {
                let (n, c, l) = dims3(&x)?;
                if c != nm.channels() {
                    return Err(shape_err!("normalisation has {} channels, input {c}", nm.channels()));
                }
                let mut x = x;
                for b in 0..n {
                    for ch in 0..c {
                        let (m, s) = (nm.mean.value[ch], nm.inv_std(ch));
                        x.data[(b * c + ch) * l..(b * c + ch + 1) * l]
                            .iter_mut()
                            .for_each(|v| *v = (*v - m) * s);
                    }
                }
                Ok(x)
            }
            HeadLayer::Conv(cv) => cv.forward_act(x, true),
            HeadLayer::Pool(p) => p.forward(x),
            HeadLayer::Dropout(d) => Ok(d.forward(x, mode, rng)),
        }
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        match self {
            HeadLayer::Rescale(r) => {
                let s = T::c(r.scale);
                let mut dy = dy;
                dy.data.iter_mut().for_each(|v| *v *= s);
                Ok(Some(dy))
            }
            HeadLayer::Norm(nm) => {
                let (n, c, l) = dims3(&dy)?;
                let mut dy = dy;
                for b in 0..n {
                    for ch in 0..c {
                        let s = nm.inv_std(ch);
                        dy.data[(b * c + ch) * l..(b * c + ch + 1) * l].iter_mut().for_each(|v| *v *= s);
                    }
                }
                Ok(Some(dy))
            }
            HeadLayer::Conv(cv) => cv.backward(dy, need_dx),
            HeadLayer::Pool(p) => p.backward(dy).map(Some),
            HeadLayer::Dropout(d) => Ok(Some(d.backward(dy))),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            HeadLayer::Norm(n) => vec![&n.mean, &n.var, &n.count],
            HeadLayer::Conv(c) => vec![&c.w, &c.b],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            HeadLayer::Norm(n) => vec![&mut n.mean, &mut n.var, &mut n.count],
            HeadLayer::Conv(c) => vec![&mut c.w, &mut c.b],
            _ => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn conv(w: Vec<f64>, b: Vec<f64>, o: usize, c: usize, k: usize) -> Conv1d<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cv = Conv1d::new("c", c, o, k, &mut rng);
        cv.w.value = w;
        cv.b.value = b;
        cv
    }

    #[test]
    fn hand_convolution() {
        let mut cv = conv(vec![1.0, 0.0, -1.0], vec![0.0], 1, 1, 3);
        let x = Tensor::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cv.forward_act(x, false).unwrap().data, vec![-2.0, -2.0]);
        let mut cv = conv(vec![1.0], vec![0.5], 1, 1, 1);
        let x = Tensor::new(&[1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(cv.forward_act(x, true).unwrap().data, vec![0.0, 0.5, 2.5]);
        let x = Tensor::new(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        assert!(conv(vec![0.0; 3], vec![0.0], 1, 1, 3).forward_act(x, true).is_err());
    }

    #[test]
    fn pool_examples_and_oracle() {
        let mut p = MaxPool1d::new(2).unwrap();
        let x = Tensor::new(&[1, 1, 4], vec![1.0f64, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(p.forward(x.clone()).unwrap().data, vec![3.0, 5.0]);
        assert_eq!(MaxPool1d::new(1).unwrap().forward(x.clone()).unwrap(), x);
        assert!(MaxPool1d::new(0).is_err());

    }

    #[test]
    fn dropout_rate_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = 0.3;
        let n = 20_000;
        let mut d = Dropout::new(p).unwrap();
        let x = Tensor::new(&[1, 1, n], vec![1.0f64; n]).unwrap();
        let y = d.forward(x.clone(), Mode::Train, &mut rng);
        let zeros = y.data.iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((zeros - n as f64 * p).abs() <= 3.0 * sigma);
        assert!(y.data.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
        assert_eq!(d.forward(x.clone(), Mode::Eval, &mut rng), x);
    }

    #[test]
    fn normalisation_adapts_to_unit_scale() {
        let mut nm = Normalization::<f64>::new("n", 2);
        let x = Tensor::new(&[2, 2, 3], vec![1.0, 2.0, 3.0, 10.0, 10.0, 10.0, 4.0, 5.0, 6.0, 10.0, 10.0, 10.0]).unwrap();
        nm.adapt(&x).unwrap();
        assert_eq!(nm.mean.value, vec![3.5, 10.0]);
        assert_eq!(nm.count.value, vec![6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = HeadLayer::Norm(nm).forward(x, Mode::Eval, &mut rng).unwrap();
        assert!(y.all_finite());
        let m: f64 = [0, 1, 2, 6, 7, 8].iter().map(|&i| y.data[i]).sum::<f64>() / 6.0;
        assert!(m.abs() < 1e-12);
    }
}
