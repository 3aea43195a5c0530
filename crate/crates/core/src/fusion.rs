//! Fusion architectures (data / 2-head / 3-head feature / decision level)
//! and the ablation variants, built from layer descriptors.

mod meta;
mod model;
mod plan;

pub use meta::{fuse_decisions, DecisionTree, MetaClassifier, MetaKind, MetaSpec, MetaState};
pub use model::{describe, FusionModel, ModelBlob, ParamBlob, Storage};
pub use plan::{Arch, HeadInput, HeadPlan, ModelPlan};

use alloc::string::ToString;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::WindowGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionLevel {
    #[serde(rename = "data")]
    Data,
    #[serde(rename = "feature-2head")]
    Feature2Head,
    #[serde(rename = "feature-3head")]
    Feature3Head,
    #[serde(rename = "decision")]
    Decision,
}

impl FusionLevel {
    pub fn name(self) -> &'static str {
        match self {
            FusionLevel::Data => "data",
            FusionLevel::Feature2Head => "feature-2head",
            FusionLevel::Feature3Head => "feature-3head",
            FusionLevel::Decision => "decision",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalSet {
    #[serde(rename = "all-raw")]
    AllRaw,
    #[serde(rename = "audio+accel+gyro")]
    AudioAccelGyro,
    #[serde(rename = "audio+magnitudes")]
    AudioMagnitudes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    SoundOnly,
    ImuOnly,
    GyroOnly,
    AccelOnly,
    NoRnn,
    SingleDense,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::None,
        Ablation::SoundOnly,
        Ablation::ImuOnly,
        Ablation::AccelOnly,
        Ablation::GyroOnly,
        Ablation::NoRnn,
        Ablation::SingleDense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "proposed",
            Ablation::SoundOnly => "sound-only",
            Ablation::ImuOnly => "imu-only",
            Ablation::GyroOnly => "gyro-only",
            Ablation::AccelOnly => "accel-only",
            Ablation::NoRnn => "no-rnn",
            Ablation::SingleDense => "single-dense",
        }
    }
}

/// How IMU head outputs are merged before concatenation with audio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    #[default]
    Concatenate,
    Average,
    Maximum,
    Multiply,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub level: FusionLevel,
    pub window: f64,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    pub signal_set: SignalSet,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    pub arch: Arch,
    /// Decision level only.
    #[serde(default)]
    pub meta: Option<MetaSpec>,
}

fn default_overlap() -> f64 {
    0.5
}

fn default_ablation() -> Ablation {
    Ablation::None
}

impl FusionSpec {
    /// feature-3head, audio+accel+gyro, 0.3 s windows.
    pub fn proposed(arch: Arch) -> Self {
        Self {
            level: FusionLevel::Feature3Head,
            window: 0.3,
            overlap: 0.5,
            signal_set: SignalSet::AudioAccelGyro,
            ablation: Ablation::None,
            arch,
            meta: None,
        }
    }

    pub fn with_level(mut self, level: FusionLevel) -> Self {
        self.level = level;
        if level == FusionLevel::Decision && self.meta.is_none() {
            self.meta = Some(MetaSpec::default());
        }
        self
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ablation = a;
        self
    }

    pub fn with_window(mut self, w: f64) -> Self {
        self.window = w;
        self
    }

    pub fn geometry(&self) -> Result<WindowGeometry> {
        WindowGeometry::new(self.window, self.overlap)
    }

    /// Short display label, e.g. `feature-3head/proposed@0.3`.
    pub fn label(&self) -> alloc::string::String {
        alloc::format!("{}/{}@{}", self.level.name(), self.ablation.name(), self.window)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match (self.level, self.ablation) {
            (FusionLevel::Feature3Head, _) => {}
            (_, Ablation::None) => {}
            (l, a) => {
                return Err(Error::Config(alloc::format!(
                    "ablation {} only applies to feature-3head, not {}",
                    a.name(),
                    l.name()
                )))
            }
        }
        if self.level == FusionLevel::Decision && self.meta.is_none() {
            return bad("decision level needs a meta-classifier spec");
        }
        if self.level != FusionLevel::Decision && self.meta.is_some() {
            return bad("meta-classifier only applies at decision level");
        }
        if self.signal_set == SignalSet::AudioMagnitudes
            && matches!(self.ablation, Ablation::AccelOnly | Ablation::GyroOnly)
            && self.arch.combine != Combine::Concatenate
        {
            return bad("combine modes need per-sensor heads");
        }
        Ok(())
    }

    /// Base-model specs for decision-level fusion (sound-only, imu-only).
    pub fn decision_bases(&self) -> [FusionSpec; 2] {
        let base = FusionSpec { level: FusionLevel::Feature3Head, meta: None, ..self.clone() };
        [base.clone().with_ablation(Ablation::SoundOnly), base.with_ablation(Ablation::ImuOnly)]
    }
}

#[cfg(test)]
mod tests;
