//! Experiment configuration (one TOML file per experiment).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jmfusion_core::fusion::{Ablation, Arch, FusionLevel, FusionSpec, MetaSpec, SignalSet};
use jmfusion_core::nn::Precision;
use jmfusion_core::synth::SynthConfig;
use jmfusion_core::training::TrainConfig;

use crate::dataset::json_hash;
use crate::error::{CliError, Result};

/// Named architecture preset or a full custom table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchRef {
    Preset(String),
    Custom(Box<Arch>),
}

impl Default for ArchRef {
    fn default() -> Self {
        ArchRef::Preset("compact".into())
    }
}

impl ArchRef {
    pub fn resolve(&self) -> Result<Arch> {
        match self {
            ArchRef::Preset(p) if p == "full" => Ok(Arch::full()),
            ArchRef::Preset(p) if p == "compact" => Ok(Arch::compact()),
            ArchRef::Preset(p) => Err(CliError::Config(format!("unknown arch preset {p:?} (full | compact)"))),
            ArchRef::Custom(a) => Ok((**a).clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    #[serde(default = "d_level")]
    pub level: FusionLevel,
    #[serde(default = "d_window")]
    pub window: f64,
    #[serde(default = "d_overlap")]
    pub overlap: f64,
    #[serde(default = "d_set")]
    pub signal_set: SignalSet,
    #[serde(default = "d_ablation")]
    pub ablation: Ablation,
    #[serde(default)]
    pub arch: ArchRef,
    #[serde(default)]
    pub meta: Option<MetaSpec>,
}

fn d_level() -> FusionLevel {
    FusionLevel::Feature3Head
}
fn d_window() -> f64 {
    0.3
}
fn d_overlap() -> f64 {
    0.5
}
fn d_set() -> SignalSet {
    SignalSet::AudioAccelGyro
}
fn d_ablation() -> Ablation {
    Ablation::None
}

impl Default for SpecConfig {
    fn default() -> Self {
        Self {
            level: d_level(),
            window: d_window(),
            overlap: d_overlap(),
            signal_set: d_set(),
            ablation: d_ablation(),
            arch: ArchRef::default(),
            meta: None,
        }
    }
}

impl SpecConfig {
    pub fn resolve(&self) -> Result<FusionSpec> {
        let mut s = FusionSpec {
            level: self.level,
            window: self.window,
            overlap: self.overlap,
            signal_set: self.signal_set,
            ablation: self.ablation,
            arch: self.arch.resolve()?,
            meta: self.meta.clone(),
        };
        if s.level == FusionLevel::Decision && s.meta.is_none() {
            s.meta = Some(MetaSpec::default());
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d_tol")]
    pub tolerance: f64,
    /// Width of the majority post-filter on window labels (1 = off).
    #[serde(default = "d_smooth")]
    pub smoothing: usize,
}

fn d_tol() -> f64 {
    0.3
}
fn d_smooth() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tolerance: d_tol(), smoothing: d_smooth() }
    }
}

/// Score existing event TSV files instead of model predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub reference: PathBuf,
    pub predictions: PathBuf,
}

/// Fault injection for harness tests: poison one fold's weights with NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NanInjection {
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed: drives the synthetic data and all training runs.
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Existing dataset directory; when absent one is generated from `synth`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_fusion")]
    pub fusion: Vec<SpecConfig>,
    /// Extra windows for the first fusion spec.
    #[serde(default)]
    pub window_sweep: Vec<f64>,
    /// Ablation variants of the first fusion spec.
    #[serde(default)]
    pub ablations: Vec<Ablation>,
    #[serde(default = "d_precisions")]
    pub precisions: Vec<Precision>,
    /// Folds to run (default: all).
    #[serde(default)]
    pub folds: Option<Vec<usize>>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "d_timing")]
    pub timing_runs: usize,
    #[serde(default)]
    pub score: Option<ScoreConfig>,
    #[serde(default)]
    pub inject_nan: Option<NanInjection>,
}

fn d_seed() -> u64 {
    7
}
fn d_fusion() -> Vec<SpecConfig> {
    vec![SpecConfig::default()]
}
fn d_precisions() -> Vec<Precision> {
    vec![Precision::F32, Precision::F16]
}
fn d_timing() -> usize {
    10
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

/// One trained configuration: a resolved spec with a stable directory name.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub id: String,
    pub spec: FusionSpec,
}

impl Run {
    pub fn new(spec: FusionSpec) -> Self {
        let set = match spec.signal_set {
            SignalSet::AllRaw => "raw",
            SignalSet::AudioAccelGyro => "aag",
            SignalSet::AudioMagnitudes => "mag",
        };
        let id = format!(
            "{}-{}-w{}-{}-{}",
            spec.level.name(),
            spec.ablation.name(),
            spec.window,
            set,
            &json_hash(&spec)[..8]
        );
        Self { id, spec }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.dataset.as_mut() {
            rel(p);
        }
        if let Some(p) = cfg.out.as_mut() {
            rel(p);
        }
        if let Some(s) = cfg.score.as_mut() {
            rel(&mut s.reference);
            rel(&mut s.predictions);
        }
        Ok(cfg)
    }

    /// Propagate the master seed and check every section.
    pub fn finalize(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        if self.fusion.is_empty() {
            return Err(CliError::Config("at least one [[fusion]] spec is required".into()));
        }
        self.synth.validate()?;
        self.train.validate()?;
        if self.eval.smoothing == 0 || self.eval.smoothing % 2 == 0 {
            return Err(CliError::Config("eval.smoothing must be odd".into()));
        }
        if !(self.eval.tolerance >= 0.0) {
            return Err(CliError::Config("eval.tolerance must be >= 0".into()));
        }
        for s in &self.fusion {
            s.resolve()?;
        }
        if let Some(f) = &self.folds {
            if f.is_empty() || f.iter().any(|&k| k >= self.synth.n_folds) {
                return Err(CliError::Config(format!("folds must be a non-empty subset of 0..{}", self.synth.n_folds)));
            }
        }
        if let Some(d) = &self.dataset {
            if !d.exists() {
                return Err(CliError::Config(format!("dataset path {} does not exist", d.display())));
            }
        }
        Ok(self)
    }

    pub fn fusion_runs(&self) -> Result<Vec<Run>> {
        self.fusion.iter().map(|s| s.resolve().map(Run::new)).collect()
    }

    pub fn sweep_runs(&self) -> Result<Vec<Run>> {
        let first = self.fusion[0].resolve()?;
        self.window_sweep.iter().map(|&w| Run::new(first.clone().with_window(w))).map(|r| r.spec.validate().map(|_| r).map_err(Into::into)).collect()
    }

    pub fn ablation_runs(&self) -> Result<Vec<Run>> {
        let first = self.fusion[0].resolve()?;
        self.ablations
            .iter()
            .map(|&a| {
                let s = FusionSpec { level: FusionLevel::Feature3Head, meta: None, ..first.clone() }.with_ablation(a);
                s.validate()?;
                Ok(Run::new(s))
            })
            .collect()
    }

    /// Every distinct run of the experiment, in config order.
    pub fn all_runs(&self) -> Result<Vec<Run>> {
        let mut out: Vec<Run> = Vec::new();
        for r in self.fusion_runs()?.into_iter().chain(self.sweep_runs()?).chain(self.ablation_runs()?) {
            if !out.iter().any(|o| o.id == r.id) {
                out.push(r);
            }
        }
        Ok(out)
    }

    pub fn fold_list(&self, n_folds: usize) -> Vec<usize> {
        self.folds.clone().unwrap_or_else(|| (0..n_folds).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::default().finalize(None).unwrap();
        assert_eq!(c.fusion.len(), 1);
        assert_eq!(c.synth.n_segments, 29);
        assert_eq!(c.train.epochs_max, 1400);
        assert_eq!(c.all_runs().unwrap().len(), 1);
    }

    #[test]
    fn full_document_parses() {
        let t = r#"
            seed = 3
            window_sweep = [0.5, 1.0]
            ablations = ["sound-only", "imu-only"]
            precisions = ["f32", "f16"]
            folds = [0]
            [synth]
            segment_duration = 30.0
            noise_snr_db = "clean"
            [train]
            epochs_max = 20
            early_stop_patience = 5
            [[fusion]]
            level = "feature-3head"
            [[fusion]]
            level = "data"
            [[fusion]]
            level = "decision"
            meta = { kind = "decision-tree" }
            [[fusion]]
            level = "feature-2head"
            arch = "full"
        "#;
        let c: ExperimentConfig = toml::from_str(t).unwrap();
        let c = c.finalize(Some(11)).unwrap();
        assert_eq!((c.synth.seed, c.train.seed), (11, 11));
        assert_eq!(c.all_runs().unwrap().len(), 4 + 2 + 2);
        assert_eq!(c.fold_list(5), vec![0]);
    }

    #[test]
    fn invalid_sections_are_config_errors() {
        let bad = |t: &str| {
            let r = toml::from_str::<ExperimentConfig>(t).map_err(|e| CliError::Config(e.to_string())).and_then(|c| c.finalize(None));
            assert_eq!(r.unwrap_err().kind(), "config", "{t}");
        };
        bad("[synth]\nactivity_mix = 1.5");
        bad("[[fusion]]\nlevel = \"data\"\nablation = \"no-rnn\"");
        bad("folds = [9]");
        bad("unknown_key = 1");
        bad("[[fusion]]\narch = \"huge\"");
    }

    #[test]
    fn shipped_configs_are_valid() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["acceptance.toml", "reference.toml"] {
            let c = ExperimentConfig::load(&dir.join(name)).and_then(|c| c.finalize(None)).unwrap();
            assert!(!c.all_runs().unwrap().is_empty(), "{name}");
        }
    }
}
