//! GRU (reset applied after the recurrent matmul, two bias vectors) and the
//! masked bidirectional wrapper with backpropagation through time.
//!
//! Gate blocks are stacked in the order z, r, n:
//!   z = σ(W_z x + b_z + U_z h + c_z)
//!   r = σ(W_r x + b_r + U_r h + c_r)
//!   n = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
//!   h' = (1 − z) ⊙ n + z ⊙ h

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{axpy, matmul_acc, matmul_at_acc, matmul_bt, sigmoid};
use super::{Param, Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug)]
pub struct GruCell<T> {
    /// 3H × D
    pub w: Param<T>,
    /// 3H × H
    pub u: Param<T>,
    pub b_in: Param<T>,
    pub b_rec: Param<T>,
}

impl<T: Real> GruCell<T> {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let g = 3 * hidden;
        Self {
            w: Param::glorot(format!("{name}.w"), &[g, input], input, g, rng),
            u: Param::glorot(format!("{name}.u"), &[g, hidden], hidden, g, rng),
            b_in: Param::zeros(format!("{name}.b_in"), &[g], true),
            b_rec: Param::zeros(format!("{name}.b_rec"), &[g], true),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.shape[1]
    }

    pub fn input(&self) -> usize {
        self.w.shape[1]
    }

    /// One recurrence step for a single sequence.
    pub fn step(&self, x: &[T], h_prev: &[T]) -> Result<Vec<T>> {
        let (h, d) = (self.hidden(), self.input());
        if x.len() != d || h_prev.len() != h {
            return Err(shape_err!("gru step expects x[{d}] h[{h}], got x[{}] h[{}]", x.len(), h_prev.len()));
        }
        let mut xp = vec![T::zero(); 3 * h];
        let mut hp = vec![T::zero(); 3 * h];
        matmul_bt(x, &self.w.value, Some(&self.b_in.value), 1, d, 3 * h, &mut xp);
        matmul_bt(h_prev, &self.u.value, Some(&self.b_rec.value), 1, h, 3 * h, &mut hp);
        Ok((0..h)
            .map(|j| {
                let z = sigmoid(xp[j] + hp[j]);
                let r = sigmoid(xp[h + j] + hp[h + j]);
                let n = (xp[2 * h + j] + r * hp[2 * h + j]).tanh();
                (T::one() - z) * n + z * h_prev[j]
            })
            .collect())
    }

    pub fn params(&self) -> [&Param<T>; 4] {
        [&self.w, &self.u, &self.b_in, &self.b_rec]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [&mut self.w, &mut self.u, &mut self.b_in, &mut self.b_rec]
    }
}

/// Recorded state of one direction.
#[derive(Clone, Debug)]
struct DirCache<T> {
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    /// U_n h + c_n
    hn: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Bgru<T> {
    pub fwd: GruCell<T>,
    pub bwd: GruCell<T>,
    cache: Option<BgruCache<T>>,
}

#[derive(Clone, Debug)]
struct BgruCache<T> {
    x: Vec<T>,
    mask: Vec<bool>,
    b: usize,
    l: usize,
    dirs: [DirCache<T>; 2],
}

impl<T: Real> Bgru<T> {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: GruCell::new(&format!("{name}.fwd"), input, hidden, rng),
            bwd: GruCell::new(&format!("{name}.bwd"), input, hidden, rng),
            cache: None,
        }
    }

    pub fn from_cells(fwd: GruCell<T>, bwd: GruCell<T>) -> Result<Self> {
        if fwd.hidden() != bwd.hidden() || fwd.input() != bwd.input() {
            return Err(shape_err!("bidirectional cells disagree in shape"));
        }
        Ok(Self { fwd, bwd, cache: None })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    /// x: (B, L, D), mask: B·L flags → (B, L, 2H).
    pub fn forward(&mut self, x: &Tensor<T>, mask: &[bool]) -> Result<Tensor<T>> {
        let (b, l, d) = match x.shape[..] {
            [b, l, d] => (b, l, d),
            _ => return Err(shape_err!("bgru expects (batch, steps, features), got {:?}", x.shape)),
        };
        if mask.len() != b * l {
            return Err(shape_err!("mask has {} entries for {b}×{l} steps", mask.len()));
        }
        if d != self.fwd.input() {
            return Err(shape_err!("bgru expects {} features, got {d}", self.fwd.input()));
        }
        let h = self.hidden();
        let mut out = vec![T::zero(); b * l * 2 * h];
        let cf = run_direction(&self.fwd, &x.data, mask, b, l, false, &mut out, 0);
        let cb = run_direction(&self.bwd, &x.data, mask, b, l, true, &mut out, h);
        self.cache = Some(BgruCache { x: x.data.clone(), mask: mask.to_vec(), b, l, dirs: [cf, cb] });
        Tensor::new(&[b, l, 2 * h], out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.cache.as_ref().ok_or(Error::NoForward)?;
        let h = self.hidden();
        let d = self.fwd.input();
        if dy.len() != c.b * c.l * 2 * h {
            return Err(shape_err!("bgru backward size mismatch"));
        }
        let mut dx = vec![T::zero(); c.b * c.l * d];
        let (b, l) = (c.b, c.l);
        let x = &c.x;
        let mask = &c.mask;
        let dirs = &c.dirs;
        back_direction(&mut self.fwd, &dirs[0], x, mask, b, l, false, &dy.data, 0, &mut dx);
        back_direction(&mut self.bwd, &dirs[1], x, mask, b, l, true, &dy.data, h, &mut dx);
        Tensor::new(&[b, l, d], dx)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.fwd.params().into_iter().chain(self.bwd.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let (f, b) = (&mut self.fwd, &mut self.bwd);
        f.params_mut().into_iter().chain(b.params_mut()).collect()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Runs one direction, writing H outputs per step at column offset `off`.
#[allow(clippy::too_many_arguments)]
fn run_direction<T: Real>(
    cell: &GruCell<T>,
    x: &[T],
    mask: &[bool],
    b: usize,
    l: usize,
    reverse: bool,
    out: &mut [T],
    off: usize,
) -> DirCache<T> {
    let (h, d) = (cell.hidden(), cell.input());
    let g = 3 * h;
    let mut xp = vec![T::zero(); b * l * g];
    matmul_bt(x, &cell.w.value, Some(&cell.b_in.value), b * l, d, g, &mut xp);
    let mut cache = DirCache {
        h_prev: vec![T::zero(); b * l * h],
        z: vec![T::zero(); b * l * h],
        r: vec![T::zero(); b * l * h],
        n: vec![T::zero(); b * l * h],
        hn: vec![T::zero(); b * l * h],
    };
    let mut hp = vec![T::zero(); g];
    for s in 0..b {
        let mut state = vec![T::zero(); h];
        for step in 0..l {
            let t = if reverse { l - 1 - step } else { step };
            let row = s * l + t;
            if !mask[row] {
                continue;
            }
            cache.h_prev[row * h..(row + 1) * h].copy_from_slice(&state);
            matmul_bt(&state, &cell.u.value, Some(&cell.b_rec.value), 1, h, g, &mut hp);
            let xr = &xp[row * g..(row + 1) * g];
            let o = &mut out[row * 2 * h + off..row * 2 * h + off + h];
            for j in 0..h {
                let z = sigmoid(xr[j] + hp[j]);
                let r = sigmoid(xr[h + j] + hp[h + j]);
                let n = (xr[2 * h + j] + r * hp[2 * h + j]).tanh();
                let hn = (T::one() - z) * n + z * state[j];
                cache.z[row * h + j] = z;
                cache.r[row * h + j] = r;
                cache.n[row * h + j] = n;
                cache.hn[row * h + j] = hp[2 * h + j];
                o[j] = hn;
            }
            state.copy_from_slice(o);
        }
    }
    cache
}

#[allow(clippy::too_many_arguments)]
fn back_direction<T: Real>(
    cell: &mut GruCell<T>,
    c: &DirCache<T>,
    x: &[T],
    mask: &[bool],
    b: usize,
    l: usize,
    reverse: bool,
    dy: &[T],
    off: usize,
    dx: &mut [T],
) {
    let (h, d) = (cell.hidden(), cell.input());
    let g = 3 * h;
    // gradients w.r.t. the input projection (z, r, n pre-activations)
    let mut dxp = vec![T::zero(); b * l * g];
    let mut dhp = vec![T::zero(); g];
    for s in 0..b {
        let mut carry = vec![T::zero(); h];
        for step in (0..l).rev() {
            let t = if reverse { l - 1 - step } else { step };
            let row = s * l + t;
            if !mask[row] {
                // state passes through unchanged; output is constant zero
                continue;
            }
            let hprev = &c.h_prev[row * h..(row + 1) * h];
            let mut dprev = vec![T::zero(); h];
            for j in 0..h {
                let i = row * h + j;
                let dh = dy[row * 2 * h + off + j] + carry[j];
                let (z, r, n, hn) = (c.z[i], c.r[i], c.n[i], c.hn[i]);
                let dz = dh * (hprev[j] - n);
                let dn = dh * (T::one() - z);
                dprev[j] = dh * z;
                let dn_pre = dn * (T::one() - n * n);
                let dr = dn_pre * hn;
                let dz_pre = dz * z * (T::one() - z);
                let dr_pre = dr * r * (T::one() - r);
                dxp[row * g + j] = dz_pre;
                dxp[row * g + h + j] = dr_pre;
                dxp[row * g + 2 * h + j] = dn_pre;
                dhp[j] = dz_pre;
                dhp[h + j] = dr_pre;
                dhp[2 * h + j] = dn_pre * r;
            }
            for k in 0..g {
                let gk = dhp[k];
                if gk != T::zero() {
                    axpy(&mut cell.u.grad[k * h..(k + 1) * h], gk, hprev);
                    axpy(&mut dprev, gk, &cell.u.value[k * h..(k + 1) * h]);
                }
                cell.b_rec.grad[k] += gk;
            }
            carry = dprev;
        }
    }
    for r in dxp.chunks(g) {
        axpy(&mut cell.b_in.grad, T::one(), r);
    }
    matmul_at_acc(&dxp, x, b * l, g, d, &mut cell.w.grad);
    matmul_acc(&dxp, &cell.w.value, b * l, g, d, dx);
}
