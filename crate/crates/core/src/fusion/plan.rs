//! Shape resolution: FusionSpec → per-head layer lists with concrete sizes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Ablation, Combine, FusionLevel, FusionSpec, SignalSet};
use crate::error::{shape_err, Error, Result};
use crate::nn::{LayerDesc, LayerGraph};

/// Head templates and trunk sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub audio: Vec<LayerDesc>,
    pub imu: Vec<LayerDesc>,
    /// Audio head of the sound-only variant (defaults to `audio`).
    #[serde(default)]
    pub sound_only_audio: Option<Vec<LayerDesc>>,
    /// Single all-IMU head of the imu-only variants (defaults to `imu`).
    #[serde(default)]
    pub imu_only: Option<Vec<LayerDesc>>,
    /// Data-level head (defaults to `audio`).
    #[serde(default)]
    pub data: Option<Vec<LayerDesc>>,
    pub gru_units: usize,
    /// Hidden widths of the time-distributed dense stack (ReLU); softmax(5) follows.
    pub dense: Vec<usize>,
    /// Constant applied by the audio rescale layer.
    #[serde(default = "one")]
    pub audio_scale: f64,
    #[serde(default)]
    pub combine: Combine,
    /// Dropout after the merged features (applied at data level only).
    #[serde(default)]
    pub data_dropout: f64,
}

fn one() -> f64 {
    1.0
}

use LayerDesc::{Conv, MaxPool};

impl Arch {
    /// Full-size configuration; parameter counts match the reference totals.
    pub fn full() -> Self {
        Self {
            audio: vec![
                Conv { filters: 5, kernel: 14 },
                MaxPool { pool: 4 },
                Conv { filters: 128, kernel: 10 },
                MaxPool { pool: 5 },
                Conv { filters: 256, kernel: 3 },
                MaxPool { pool: 6 },
            ],
            imu: vec![Conv { filters: 64, kernel: 3 }, Conv { filters: 128, kernel: 1 }, MaxPool { pool: 2 }],
            sound_only_audio: Some(vec![
                Conv { filters: 5, kernel: 14 },
                MaxPool { pool: 4 },
                Conv { filters: 61, kernel: 9 },
                MaxPool { pool: 5 },
                Conv { filters: 512, kernel: 3 },
                MaxPool { pool: 6 },
            ]),
            imu_only: Some(vec![
                Conv { filters: 88, kernel: 3 },
                Conv { filters: 36, kernel: 1 },
                MaxPool { pool: 2 },
                Conv { filters: 512, kernel: 1 },
            ]),
            data: None,
            gru_units: 256,
            dense: vec![320, 32, 16],
            audio_scale: 1.0,
            combine: Combine::Concatenate,
            data_dropout: 0.2,
        }
    }

    /// Reduced width for CPU training runs.
    pub fn compact() -> Self {
        Self {
            audio: vec![
                Conv { filters: 8, kernel: 9 },
                MaxPool { pool: 4 },
                Conv { filters: 16, kernel: 5 },
                MaxPool { pool: 4 },
                Conv { filters: 16, kernel: 5 },
                MaxPool { pool: 4 },
            ],
            imu: vec![Conv { filters: 8, kernel: 3 }, Conv { filters: 8, kernel: 1 }, MaxPool { pool: 2 }],
            sound_only_audio: None,
            imu_only: None,
            data: None,
            gru_units: 32,
            dense: vec![32, 16],
            audio_scale: 1.0,
            combine: Combine::Concatenate,
            data_dropout: 0.2,
        }
    }
}

/// Which slice of a frame a head consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadInput {
    Audio,
    Accel,
    Gyro,
    Mag,
    AccelMagnitude,
    GyroMagnitude,
    /// All IMU channels of the signal set; muted sensors are zeroed.
    Imu { set: SignalSet, mute_accel: bool, mute_gyro: bool },
    /// Audio plus every IMU channel resampled to the audio rate.
    DataStack { set: SignalSet },
}

impl HeadInput {
    pub fn is_audio_rate(self) -> bool {
        matches!(self, HeadInput::Audio | HeadInput::DataStack { .. })
    }

    pub fn imu_channels(set: SignalSet) -> usize {
        match set {
            SignalSet::AllRaw => 9,
            SignalSet::AudioAccelGyro => 6,
            SignalSet::AudioMagnitudes => 2,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            HeadInput::Audio | HeadInput::AccelMagnitude | HeadInput::GyroMagnitude => 1,
            HeadInput::Accel | HeadInput::Gyro | HeadInput::Mag => 3,
            HeadInput::Imu { set, .. } => Self::imu_channels(set),
            HeadInput::DataStack { set } => 1 + Self::imu_channels(set),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadInput::Audio => "audio",
            HeadInput::Accel => "accel",
            HeadInput::Gyro => "gyro",
            HeadInput::Mag => "mag",
            HeadInput::AccelMagnitude => "accel-mag",
            HeadInput::GyroMagnitude => "gyro-mag",
            HeadInput::Imu { .. } => "imu",
            HeadInput::DataStack { .. } => "data",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadPlan {
    pub name: String,
    pub input: HeadInput,
    pub in_shape: (usize, usize),
    pub layers: Vec<LayerDesc>,
    /// Global max pooling over time instead of flatten.
    pub global_pool: bool,
    /// (channels, length) after the conv stack.
    pub out_shape: (usize, usize),
}

impl HeadPlan {
    pub fn out_width(&self) -> usize {
        if self.global_pool {
            self.out_shape.0
        } else {
            self.out_shape.0 * self.out_shape.1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelPlan {
    pub heads: Vec<HeadPlan>,
    /// IMU heads merged elementwise (indices into `heads`), audio heads concatenated.
    pub combine: Combine,
    pub merged_width: usize,
    pub merge_dropout: f64,
    pub rnn: Option<(usize, usize)>,
    pub dense: Vec<(usize, usize)>,
}

fn resolve(name: &str, input: HeadInput, len: usize, layers: &[LayerDesc], global_pool: bool) -> Result<HeadPlan> {
    let (mut c, mut l) = (input.channels(), len);
    for (i, d) in layers.iter().enumerate() {
        match *d {
            LayerDesc::Conv { filters, kernel } => {
                if kernel == 0 || filters == 0 || kernel > l {
                    return Err(shape_err!("{name} layer {i}: conv kernel {kernel} on length {l}"));
                }
                c = filters;
                l = l - kernel + 1;
            }
            LayerDesc::MaxPool { pool } => {
                if pool == 0 || pool > l {
                    return Err(shape_err!("{name} layer {i}: pool {pool} on length {l}"));
                }
                l /= pool;
            }
            LayerDesc::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate}")));
                }
            }
        }
    }
    Ok(HeadPlan {
        name: name.into(),
        input,
        in_shape: (input.channels(), len),
        layers: layers.to_vec(),
        global_pool,
        out_shape: (c, l),
    })
}

/// Multiply the final conv's filter count (2-head IMU head carries both sensors).
fn widen_last_conv(layers: &[LayerDesc], k: usize) -> Vec<LayerDesc> {
    let mut out = layers.to_vec();
    if let Some(LayerDesc::Conv { filters, .. }) = out.iter_mut().rev().find(|d| matches!(d, LayerDesc::Conv { .. })) {
        *filters *= k;
    }
    out
}

pub fn plan(spec: &FusionSpec) -> Result<ModelPlan> {
    spec.validate()?;
    if spec.level == FusionLevel::Decision {
        return Err(Error::Config("decision level has no single network plan".into()));
    }
    let geo = spec.geometry()?;
    let (na, ni) = (geo.audio_len(), geo.imu_len());
    let a = &spec.arch;
    let set = spec.signal_set;
    let gp = spec.ablation == Ablation::NoRnn;
    let sensors: Vec<HeadInput> = match set {
        SignalSet::AudioAccelGyro => vec![HeadInput::Accel, HeadInput::Gyro],
        SignalSet::AllRaw => vec![HeadInput::Accel, HeadInput::Gyro, HeadInput::Mag],
        SignalSet::AudioMagnitudes => vec![HeadInput::AccelMagnitude, HeadInput::GyroMagnitude],
    };
    let imu_all = |mute_accel, mute_gyro| HeadInput::Imu { set, mute_accel, mute_gyro };
    let mut heads = Vec::new();
    let mut combine = Combine::Concatenate;
    match spec.level {
        FusionLevel::Data => {
            let t = a.data.as_deref().unwrap_or(&a.audio);
            heads.push(resolve("data", HeadInput::DataStack { set }, na, t, false)?);
        }
        FusionLevel::Feature2Head => {
            heads.push(resolve("audio", HeadInput::Audio, na, &a.audio, false)?);
            let t = widen_last_conv(&a.imu, sensors.len());
            heads.push(resolve("imu", imu_all(false, false), ni, &t, false)?);
        }
        FusionLevel::Feature3Head => match spec.ablation {
            Ablation::SoundOnly => {
                let t = a.sound_only_audio.as_deref().unwrap_or(&a.audio);
                heads.push(resolve("audio", HeadInput::Audio, na, t, false)?);
            }
            Ablation::ImuOnly | Ablation::AccelOnly | Ablation::GyroOnly => {
                let t = a.imu_only.as_deref().unwrap_or(&a.imu);
                let input = imu_all(spec.ablation == Ablation::GyroOnly, spec.ablation == Ablation::AccelOnly);
                heads.push(resolve("imu", input, ni, t, false)?);
            }
            _ => {
                heads.push(resolve("audio", HeadInput::Audio, na, &a.audio, gp)?);
                for s in &sensors {
                    heads.push(resolve(s.name(), *s, ni, &a.imu, gp)?);
                }
                combine = a.combine;
            }
        },
        FusionLevel::Decision => unreachable!(),
    }
    let merged_width = match combine {
        Combine::Concatenate => heads.iter().map(HeadPlan::out_width).sum(),
        _ => {
            let w = heads[1].out_width();
            if heads[1..].iter().any(|h| h.out_width() != w) {
                return Err(shape_err!("elementwise combine needs equal IMU head widths"));
            }
            heads[0].out_width() + w
        }
    };
    let rnn = (spec.ablation != Ablation::NoRnn).then_some((merged_width, a.gru_units));
    let mut width = rnn.map_or(merged_width, |(_, h)| 2 * h);
    let mut dense = Vec::new();
    if spec.ablation != Ablation::SingleDense {
        for &u in &a.dense {
            dense.push((width, u));
            width = u;
        }
    }
    dense.push((width, crate::signals::N_CLASSES));
    let merge_dropout = if spec.level == FusionLevel::Data { a.data_dropout } else { 0.0 };
    Ok(ModelPlan { heads, combine, merged_width, merge_dropout, rnn, dense })
}

impl ModelPlan {
    pub fn graph(&self) -> LayerGraph {
        let mut g = LayerGraph::default();
        for h in &self.heads {
            let (mut c, mut l) = h.in_shape;
            if h.input.is_audio_rate() {
                g.rescale(format!("{}.rescale", h.name), c, l);
            } else {
                g.norm(format!("{}.norm", h.name), c, l);
            }
            for (i, d) in h.layers.iter().enumerate() {
                let n = format!("{}.{}", h.name, i);
                match *d {
                    LayerDesc::Conv { filters, kernel } => {
                        l = l - kernel + 1;
                        g.conv(n, c, l, filters, kernel);
                        c = filters;
                    }
                    LayerDesc::MaxPool { pool } => {
                        l /= pool;
                        g.pool(n, c, l, pool);
                    }
                    LayerDesc::Dropout { .. } => g.dropout(n, &[c, l]),
                }
            }
            if h.global_pool {
                g.global_pool(format!("{}.global-max", h.name), c, l);
            } else {
                g.flatten(format!("{}.flatten", h.name), c * l);
            }
        }
        let kind = match self.combine {
            Combine::Concatenate => "concatenate",
            Combine::Average => "average",
            Combine::Maximum => "maximum",
            Combine::Multiply => "multiply",
        };
        g.concat("merge".into(), self.merged_width, kind, self.heads.len().saturating_sub(1));
        if self.merge_dropout > 0.0 {
            g.dropout("merge.dropout".into(), &[self.merged_width]);
        }
        if let Some((d, h)) = self.rnn {
            g.bgru("bgru".into(), d, h);
        }
        for (i, &(a, b)) in self.dense.iter().enumerate() {
            g.dense(format!("dense{i}"), a, b);
        }
        g
    }
}
