use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::plan::{plan, HeadInput, HeadPlan, ModelPlan};
use super::{Combine, FusionLevel, FusionSpec, SignalSet};
use crate::error::{shape_err, Error, Result};
use crate::nn::{
    f16_round_trip, Activation, Bgru, Conv1d, DenseLayer, Dropout, HeadLayer, LayerDesc, LayerGraph, MaxPool1d, Mode,
    Normalization, Param, Precision, Real, Rescale, Tensor,
};
use crate::signals::{magnitude, resample_linear, Frame, WindowSequence, AUDIO_RATE, IMU_RATE, N_CLASSES};

/// Layer table for any spec (decision level = both bases + meta).
pub fn describe(spec: &FusionSpec) -> Result<LayerGraph> {
    if spec.level == FusionLevel::Decision {
        spec.validate()?;
        let mut g = LayerGraph::default();
        for base in spec.decision_bases() {
            let bg = plan(&base)?.graph();
            for mut l in bg.layers {
                l.name = format!("{}.{}", base.ablation.name(), l.name);
                g.layers.push(l);
            }
        }
        let meta = spec.meta.as_ref().expect("validated");
        g.meta("meta".into(), meta.param_count(2), meta.flops(2));
        return Ok(g);
    }
    Ok(plan(spec)?.graph())
}

fn frame_channels(input: HeadInput, f: &Frame, out: &mut Vec<f32>) -> Result<()> {
    let ni = f.imu_len();
    let mags = |v: &[f32], out: &mut Vec<f32>| {
        for t in 0..ni {
            out.push(magnitude(v[t] as f64, v[ni + t] as f64, v[2 * ni + t] as f64) as f32);
        }
    };
    let need_mag = || f.mag.as_ref().ok_or_else(|| shape_err!("frame has no magnetometer channels"));
    match input {
        HeadInput::Audio => out.extend_from_slice(&f.audio),
        HeadInput::Accel => out.extend_from_slice(&f.accel),
        HeadInput::Gyro => out.extend_from_slice(&f.gyro),
        HeadInput::Mag => out.extend_from_slice(need_mag()?),
        HeadInput::AccelMagnitude => mags(&f.accel, out),
        HeadInput::GyroMagnitude => mags(&f.gyro, out),
        HeadInput::Imu { set, mute_accel, mute_gyro } => {
            let start = out.len();
            match set {
                SignalSet::AudioMagnitudes => {
                    mags(&f.accel, out);
                    mags(&f.gyro, out);
                }
                _ => {
                    out.extend_from_slice(&f.accel);
                    out.extend_from_slice(&f.gyro);
                    if set == SignalSet::AllRaw {
                        out.extend_from_slice(need_mag()?);
                    }
                }
            }
            let per = if set == SignalSet::AudioMagnitudes { ni } else { 3 * ni };
            if mute_accel {
                out[start..start + per].iter_mut().for_each(|v| *v = 0.0);
            }
            if mute_gyro {
                out[start + per..start + 2 * per].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        HeadInput::DataStack { set } => {
            out.extend_from_slice(&f.audio);
            let mut imu = Vec::new();
            frame_channels(HeadInput::Imu { set, mute_accel: false, mute_gyro: false }, f, &mut imu)?;
            for ch in imu.chunks(ni) {
                let up = resample_linear(ch, IMU_RATE, AUDIO_RATE)?;
                if up.len() != f.audio.len() {
                    return Err(shape_err!("resampled imu {} vs audio {}", up.len(), f.audio.len()));
                }
                out.extend_from_slice(&up);
            }
        }
    }
    Ok(())
}

/// Stack one head's input for a list of frames → (N, C, L).
pub(crate) fn gather<T: Real>(input: HeadInput, frames: &[&Frame], in_shape: (usize, usize)) -> Result<Tensor<T>> {
    let (c, l) = in_shape;
    let mut buf = Vec::with_capacity(frames.len() * c * l);
    for f in frames {
        let before = buf.len();
        frame_channels(input, f, &mut buf)?;
        if buf.len() - before != c * l {
            return Err(shape_err!(
                "{} head expects {}×{} per window, frame gives {} values",
                input.name(),
                c,
                l,
                buf.len() - before
            ));
        }
    }
    Tensor::new(&[frames.len(), c, l], buf.into_iter().map(|v| T::c(v as f64)).collect())
}

#[derive(Clone, Debug)]
struct Head<T> {
    plan: HeadPlan,
    layers: Vec<HeadLayer<T>>,
    /// Input gradients are only needed after the first conv.
    first_conv: usize,
    gp_arg: Vec<usize>,
    pre_reduce: (usize, usize, usize),
}

impl<T: Real> Head<T> {
    fn build(p: &HeadPlan, audio_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (mut c, _) = p.in_shape;
        let mut layers = Vec::with_capacity(p.layers.len() + 1);
        if p.input.is_audio_rate() {
            layers.push(HeadLayer::Rescale(Rescale { scale: audio_scale }));
        } else {
            layers.push(HeadLayer::Norm(Normalization::new(&format!("{}.norm", p.name), c)));
        }
        for (i, d) in p.layers.iter().enumerate() {
            layers.push(match *d {
                LayerDesc::Conv { filters, kernel } => {
                    let cv = Conv1d::new(&format!("{}.conv{}", p.name, i), c, filters, kernel, rng);
                    c = filters;
                    HeadLayer::Conv(cv)
                }
                LayerDesc::MaxPool { pool } => HeadLayer::Pool(MaxPool1d::new(pool)?),
                LayerDesc::Dropout { rate } => HeadLayer::Dropout(Dropout::new(rate)?),
            });
        }
        let first_conv = layers.iter().position(|l| matches!(l, HeadLayer::Conv(_))).unwrap_or(layers.len());
        Ok(Self { plan: p.clone(), layers, first_conv, gp_arg: Vec::new(), pre_reduce: (0, 0, 0) })
    }

    fn forward(&mut self, frames: &[&Frame], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        let mut x = gather::<T>(self.plan.input, frames, self.plan.in_shape)?;
        for l in self.layers.iter_mut() {
            x = l.forward(x, mode, rng)?;
        }
        let (n, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        self.pre_reduce = (n, c, l);
        if !self.plan.global_pool {
            return x.reshape(&[n, c * l]);
        }
        if l == 0 {
            return Err(shape_err!("global pooling over an empty axis"));
        }
        let mut y = Vec::with_capacity(n * c);
        self.gp_arg.clear();
        for row in 0..n * c {
            let r = &x.data[row * l..(row + 1) * l];
            let mut bi = 0;
            for i in 1..l {
                if r[i] > r[bi] {
                    bi = i;
                }
            }
            y.push(r[bi]);
            self.gp_arg.push(row * l + bi);
        }
        Tensor::new(&[n, c], y)
    }

    fn backward(&mut self, dy: Tensor<T>) -> Result<()> {
        let (n, c, l) = self.pre_reduce;
        let mut g = if self.plan.global_pool {
            let mut d = vec![T::zero(); n * c * l];
            for (&i, &v) in self.gp_arg.iter().zip(&dy.data) {
                d[i] += v;
            }
            Tensor::new(&[n, c, l], d)?
        } else {
            dy.reshape(&[n, c, l])?
        };
        for i in (0..self.layers.len()).rev() {
            if i < self.first_conv {
                break;
            }
            match self.layers[i].backward(g, i > self.first_conv)? {
                Some(d) => g = d,
                None => break,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct FwdState<T> {
    b: usize,
    l: usize,
    mask: Vec<bool>,
    widths: Vec<usize>,
    /// IMU head outputs kept for maximum/multiply backward.
    imu_out: Vec<Vec<T>>,
}

/// A non-decision fusion network.
#[derive(Clone, Debug)]
pub struct FusionModel<T> {
    pub spec: FusionSpec,
    pub precision: Precision,
    plan: ModelPlan,
    heads: Vec<Head<T>>,
    merge_dropout: Option<Dropout>,
    rnn: Option<Bgru<T>>,
    dense: Vec<DenseLayer<T>>,
    state: Option<FwdState<T>>,
}

impl<T: Real> FusionModel<T> {
    /// Build with Glorot-initialized weights from `seed`.
    pub fn build(spec: &FusionSpec, seed: u64) -> Result<Self> {
        let p = plan(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = p
            .heads
            .iter()
            .map(|h| Head::build(h, spec.arch.audio_scale, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let rnn = p.rnn.map(|(d, h)| Bgru::new("bgru", d, h, &mut rng));
        let last = p.dense.len() - 1;
        let dense = p
            .dense
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let act = if i == last { Activation::Softmax } else { Activation::Relu };
                DenseLayer::new(&format!("dense{i}"), a, b, act, &mut rng)
            })
            .collect();
        let merge_dropout = if p.merge_dropout > 0.0 { Some(Dropout::new(p.merge_dropout)?) } else { None };
        Ok(Self { spec: spec.clone(), precision: Precision::F32, plan: p, heads, merge_dropout, rnn, dense, state: None })
    }

    pub fn graph(&self) -> LayerGraph {
        self.plan.graph()
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        for h in &self.heads {
            for l in &h.layers {
                v.extend(l.params());
            }
        }
        if let Some(r) = &self.rnn {
            v.extend(r.params());
        }
        for d in &self.dense {
            v.extend(d.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for h in self.heads.iter_mut() {
            for l in h.layers.iter_mut() {
                v.extend(l.params_mut());
            }
        }
        if let Some(r) = self.rnn.as_mut() {
            v.extend(r.params_mut());
        }
        for d in self.dense.iter_mut() {
            v.extend(d.params_mut());
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Fit every IMU normalisation layer on the real windows of `seqs`.
    pub fn adapt_normalization(&mut self, seqs: &[&WindowSequence]) -> Result<()> {
        let frames: Vec<&Frame> = seqs
            .iter()
            .flat_map(|s| s.frames.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(f, _)| f))
            .collect();
        if frames.is_empty() {
            return Err(Error::Invalid("no real windows to fit normalisation".into()));
        }
        for h in self.heads.iter_mut() {
            if let Some(HeadLayer::Norm(nm)) = h.layers.first_mut() {
                let x = gather::<T>(h.plan.input, &frames, h.plan.in_shape)?;
                nm.adapt(&x)?;
            }
        }
        Ok(())
    }

    /// Class distributions, shape (B, L, 5).
    pub fn forward(&mut self, seqs: &[&WindowSequence], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        let b = seqs.len();
        let l = seqs.first().map(|s| s.len()).ok_or_else(|| Error::Invalid("empty batch".into()))?;
        if seqs.iter().any(|s| s.len() != l || s.mask.len() != l) {
            return Err(shape_err!("all sequences in a batch must have equal length"));
        }
        let frames: Vec<&Frame> = seqs.iter().flat_map(|s| s.frames.iter()).collect();
        let mask: Vec<bool> = seqs.iter().flat_map(|s| s.mask.iter().copied()).collect();
        let n = b * l;

        let mut outs = Vec::with_capacity(self.heads.len());
        for h in self.heads.iter_mut() {
            outs.push(h.forward(&frames, mode, rng)?);
        }
        let widths: Vec<usize> = outs.iter().map(|t| t.dim(1)).collect();
        let d = self.plan.merged_width;
        let mut merged = vec![T::zero(); n * d];
        let mut imu_out = Vec::new();
        match self.plan.combine {
            Combine::Concatenate => {
                for r in 0..n {
                    let mut off = 0;
                    for (t, &w) in outs.iter().zip(&widths) {
                        merged[r * d + off..r * d + off + w].copy_from_slice(&t.data[r * w..(r + 1) * w]);
                        off += w;
                    }
                }
            }
            mode_c => {
                let (wa, wi) = (widths[0], widths[1]);
                let k = T::c((outs.len() - 1) as f64);
                for r in 0..n {
                    merged[r * d..r * d + wa].copy_from_slice(&outs[0].data[r * wa..(r + 1) * wa]);
                    for j in 0..wi {
                        let vals = outs[1..].iter().map(|t| t.data[r * wi + j]);
                        merged[r * d + wa + j] = match mode_c {
                            Combine::Average => vals.fold(T::zero(), |a, v| a + v) / k,
                            Combine::Maximum => vals.fold(T::neg_infinity(), |a, v| a.max(v)),
                            Combine::Multiply => vals.fold(T::one(), |a, v| a * v),
                            Combine::Concatenate => unreachable!(),
                        };
                    }
                }
                imu_out = outs[1..].iter().map(|t| t.data.clone()).collect();
            }
        }
        let mut x = Tensor::new(&[n, d], merged)?;
        if let Some(dr) = self.merge_dropout.as_mut() {
            x = dr.forward(x, mode, rng);
        }
        if let Some(rnn) = self.rnn.as_mut() {
            let y = rnn.forward(&x.reshape(&[b, l, d])?, &mask)?;
            let w = y.dim(2);
            x = y.reshape(&[n, w])?;
        }
        for dl in self.dense.iter_mut() {
            x = dl.forward(&x)?;
        }
        self.state = Some(FwdState { b, l, mask, widths, imu_out });
        x.reshape(&[b, l, N_CLASSES])
    }

    /// Backpropagate dL/d(probabilities), accumulating parameter gradients.
    pub fn backward(&mut self, dprobs: &Tensor<T>) -> Result<()> {
        let st = self.state.take().ok_or(Error::NoForward)?;
        let n = st.b * st.l;
        if dprobs.len() != n * N_CLASSES {
            return Err(shape_err!("loss gradient has {} values, expected {}", dprobs.len(), n * N_CLASSES));
        }
        let mut g = dprobs.clone().reshape(&[n, N_CLASSES])?;
        for dl in self.dense.iter_mut().rev() {
            g = dl.backward(&g)?;
        }
        let d = self.plan.merged_width;
        if let Some(rnn) = self.rnn.as_mut() {
            let w = g.dim(1);
            g = rnn.backward(&g.reshape(&[st.b, st.l, w])?)?.reshape(&[n, d])?;
        } else {
            // padded rows never reach the loss, but be explicit
            for (r, &m) in st.mask.iter().enumerate() {
                if !m {
                    g.data[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
        if let Some(dr) = self.merge_dropout.as_mut() {
            g = dr.backward(g);
        }
        let widths = &st.widths;
        let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| vec![T::zero(); n * w]).collect();
        match self.plan.combine {
            Combine::Concatenate => {
                for r in 0..n {
                    let mut off = 0;
                    for (gh, &w) in grads.iter_mut().zip(widths) {
                        gh[r * w..(r + 1) * w].copy_from_slice(&g.data[r * d + off..r * d + off + w]);
                        off += w;
                    }
                }
            }
            mode_c => {
                let (wa, wi) = (widths[0], widths[1]);
                let k = st.imu_out.len();
                for r in 0..n {
                    grads[0][r * wa..(r + 1) * wa].copy_from_slice(&g.data[r * d..r * d + wa]);
                    for j in 0..wi {
                        let gv = g.data[r * d + wa + j];
                        let idx = r * wi + j;
                        match mode_c {
                            Combine::Average => {
                                for h in 0..k {
                                    grads[1 + h][idx] = gv / T::c(k as f64);
                                }
                            }
                            Combine::Maximum => {
                                let mut best = 0;
                                for h in 1..k {
                                    if st.imu_out[h][idx] > st.imu_out[best][idx] {
                                        best = h;
                                    }
                                }
                                grads[1 + best][idx] = gv;
                            }
                            Combine::Multiply => {
                                for h in 0..k {
                                    let others = (0..k).filter(|&o| o != h).fold(T::one(), |a, o| a * st.imu_out[o][idx]);
                                    grads[1 + h][idx] = gv * others;
                                }
                            }
                            Combine::Concatenate => unreachable!(),
                        }
                    }
                }
            }
        }
        for ((h, gh), &w) in self.heads.iter_mut().zip(grads).zip(widths) {
            h.backward(Tensor::new(&[n, w], gh)?)?;
        }
        Ok(())
    }

    /// Drop recorded forward state (frees activation memory).
    pub fn clear_state(&mut self) {
        self.state = None;
        for d in self.dense.iter_mut() {
            d.clear_cache();
        }
        if let Some(r) = self.rnn.as_mut() {
            r.clear_cache();
        }
    }

    /// Input gradient check helper: the merged feature gradient is not exposed,
    /// so tests perturb parameters only.
    pub fn param_names(&self) -> Vec<String> {
        self.params().iter().map(|p| p.name.clone()).collect()
    }
}

/// Raw parameter storage at a given precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl Storage {
    pub fn len(&self) -> usize {
        match self {
            Storage::F32(v) => v.len(),
            Storage::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Storage::F32(v) => v.clone(),
            Storage::F16(v) => v.iter().map(|h| h.to_f32()).collect(),
        }
    }

    pub fn byte_len(&self) -> usize {
        match self {
            Storage::F32(v) => 4 * v.len(),
            Storage::F16(v) => 2 * v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Storage,
}

/// Serializable model: spec + parameter buffers at one precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBlob {
    pub spec: FusionSpec,
    pub precision: Precision,
    pub params: Vec<ParamBlob>,
}

impl ModelBlob {
    pub fn payload_bytes(&self) -> usize {
        self.params.iter().map(|p| p.data.byte_len()).sum()
    }
}

impl FusionModel<f32> {
    pub fn to_blob(&self) -> ModelBlob {
        let params = self
            .params()
            .into_iter()
            .map(|p| ParamBlob {
                name: p.name.clone(),
                shape: p.shape.clone(),
                trainable: p.trainable,
                data: match self.precision {
                    Precision::F32 => Storage::F32(p.value.clone()),
                    Precision::F16 => Storage::F16(p.value.iter().map(|&v| f16::from_f32(v)).collect()),
                },
            })
            .collect();
        ModelBlob { spec: self.spec.clone(), precision: self.precision, params }
    }

    /// Rebuild from stored buffers, dequantizing to f32 for compute.
    pub fn from_blob(blob: &ModelBlob) -> Result<Self> {
        let mut m = Self::build(&blob.spec, 0)?;
        m.precision = blob.precision;
        let params = m.params_mut();
        if params.len() != blob.params.len() {
            return Err(shape_err!("checkpoint has {} buffers, model needs {}", blob.params.len(), params.len()));
        }
        for (p, b) in params.into_iter().zip(&blob.params) {
            if p.name != b.name || p.shape != b.shape || b.data.len() != p.len() {
                return Err(shape_err!("checkpoint buffer {} {:?} does not fit {} {:?}", b.name, b.shape, p.name, p.shape));
            }
            p.value = b.data.to_f32();
        }
        Ok(m)
    }

    /// Post-training quantization: parameters are stored at `precision`
    /// and dequantized for computation. Structure is unchanged.
    pub fn quantize_weights(&self, precision: Precision) -> Self {
        let mut q = self.clone();
        q.clear_state();
        q.precision = precision;
        if precision == Precision::F16 {
            for p in q.params_mut() {
                p.value.iter_mut().for_each(|v| *v = f16_round_trip(*v));
            }
        }
        q
    }

    pub fn cast_f64(&self) -> FusionModel<f64> {
        let mut m = FusionModel::<f64>::build(&self.spec, 0).expect("spec already built once");
        for (d, s) in m.params_mut().into_iter().zip(self.params()) {
            d.value = s.value.iter().map(|&v| v as f64).collect();
        }
        m
    }
}
