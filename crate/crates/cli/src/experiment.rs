//! Training and evaluation orchestration shared by the commands.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use jmfusion_core::evalkit::{compute_metrics, match_events, mode_filter, windows_to_events, EventCounts, MetricsReport};
use jmfusion_core::fusion::{FusionLevel, FusionModel, MetaClassifier, MetaState};
use jmfusion_core::nn::Precision;
use jmfusion_core::signals::{sequences_for, EventLabel, MultimodalRecording, WindowGeometry, WindowSequence, SEQ_LEN};
use jmfusion_core::synth::segment_seed;
use jmfusion_core::training::{argmax, predict_proba, train_fold, DecisionSystem, EpochLog, TrainConfig};

use crate::checkpoint;
use crate::config::{ExperimentConfig, Run};
use crate::dataset::{generate_dataset, json_hash, write_atomic, write_labels, Dataset};
use crate::error::{CliError, Result};

pub struct Ctx {
    pub out: PathBuf,
    pub cfg: ExperimentConfig,
    pub jobs: usize,
}

impl Ctx {
    pub fn dataset_dir(&self) -> PathBuf {
        self.cfg.dataset.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    /// Load the configured dataset, generating the synthetic one if needed.
    pub fn dataset(&self) -> Result<Dataset> {
        if self.cfg.dataset.is_none() {
            let (_, fresh) = generate_dataset(&self.cfg.synth, &self.dataset_dir(), self.jobs)?;
            if fresh {
                log::info!("generated dataset in {}", self.dataset_dir().display());
            }
        }
        Dataset::load(&self.dataset_dir())
    }

    pub fn run_dir(&self, run: &Run) -> PathBuf {
        self.out.join("runs").join(&run.id)
    }

    pub fn fold_dir(&self, run: &Run, k: usize) -> PathBuf {
        self.run_dir(run).join(format!("fold{k}"))
    }
}

/// One segment cut into sequences for a window geometry.
#[derive(Clone, Debug)]
pub struct SegmentData {
    pub id: String,
    pub fold: Option<usize>,
    pub seqs: Vec<WindowSequence>,
    pub starts: Vec<f64>,
    pub labels: Vec<EventLabel>,
}

pub fn prepare(ds: &Dataset, geo: WindowGeometry) -> Result<Vec<SegmentData>> {
    ds.manifest
        .segments
        .iter()
        .zip(&ds.recordings)
        .map(|(e, r)| {
            let seqs = sequences_for(r, geo, SEQ_LEN)?;
            let starts = seqs.iter().flat_map(|s| s.frames.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(f, _)| f.start)).collect();
            Ok(SegmentData { id: e.id.clone(), fold: e.fold, seqs, starts, labels: r.labels.clone() })
        })
        .collect()
}

fn geo_key(g: WindowGeometry) -> (u64, u64) {
    (g.window.to_bits(), g.overlap.to_bits())
}

/// Sequences per window geometry, built once per process.
#[derive(Default)]
pub struct DataCache {
    map: Mutex<HashMap<(u64, u64), Arc<Vec<SegmentData>>>>,
}

impl DataCache {
    pub fn get(&self, ds: &Dataset, geo: WindowGeometry) -> Result<Arc<Vec<SegmentData>>> {
        if let Some(d) = self.map.lock().expect("cache lock").get(&geo_key(geo)) {
            return Ok(d.clone());
        }
        let d = Arc::new(prepare(ds, geo)?);
        self.map.lock().expect("cache lock").insert(geo_key(geo), d.clone());
        Ok(d)
    }
}

// ---- trained models ----

pub enum Predictor {
    Net(FusionModel<f32>),
    Decision(DecisionSystem),
}

impl Predictor {
    pub fn load(dir: &Path, run: &Run) -> Result<Self> {
        if run.spec.level == FusionLevel::Decision {
            let mut bases = Vec::new();
            for (i, _) in run.spec.decision_bases().iter().enumerate() {
                bases.push(FusionModel::from_blob(&checkpoint::load(&dir.join(format!("base{i}.jmfc")))?)?);
            }
            let p = dir.join("meta.json");
            let state: MetaState = serde_json::from_slice(&fs::read(&p).map_err(|e| CliError::io(&p, e))?)
                .map_err(|e| CliError::format(&p, e))?;
            let meta = MetaClassifier::from_state(&state)?;
            Ok(Predictor::Decision(DecisionSystem { spec: run.spec.clone(), bases, meta }))
        } else {
            Ok(Predictor::Net(FusionModel::from_blob(&checkpoint::load(&dir.join("model.jmfc"))?)?))
        }
    }

    /// Write checkpoints into `dir`; `tag` distinguishes precisions.
    pub fn save(&self, dir: &Path, tag: &str) -> Result<()> {
        match self {
            Predictor::Net(m) => checkpoint::save(&dir.join(format!("model{tag}.jmfc")), &m.to_blob()),
            Predictor::Decision(d) => {
                for (i, b) in d.bases.iter().enumerate() {
                    checkpoint::save(&dir.join(format!("base{i}{tag}.jmfc")), &b.to_blob())?;
                }
                write_atomic(&dir.join("meta.json"), &serde_json::to_vec_pretty(&d.meta.state())?)
            }
        }
    }

    pub fn quantize(&self, p: Precision) -> Self {
        match self {
            Predictor::Net(m) => Predictor::Net(m.quantize_weights(p)),
            Predictor::Decision(d) => Predictor::Decision(DecisionSystem {
                spec: d.spec.clone(),
                bases: d.bases.iter().map(|b| b.quantize_weights(p)).collect(),
                meta: d.meta.clone(),
            }),
        }
    }

    pub fn payload_bytes(&self) -> usize {
        match self {
            Predictor::Net(m) => m.to_blob().payload_bytes(),
            Predictor::Decision(d) => d.bases.iter().map(|b| b.to_blob().payload_bytes()).sum(),
        }
    }

    /// Class of every real window, in order.
    pub fn window_labels(&mut self, seqs: &[WindowSequence], batch: usize) -> Result<Vec<usize>> {
        let probs = match self {
            Predictor::Net(m) => predict_proba(m, seqs, batch)?,
            Predictor::Decision(d) => d.predict_proba(seqs, batch)?,
        };
        Ok(probs.iter().flatten().map(|d| argmax(d)).collect())
    }
}

pub fn predict_events(
    p: &mut Predictor,
    seqs: &[WindowSequence],
    starts: &[f64],
    window: f64,
    smoothing: usize,
    batch: usize,
) -> Result<Vec<EventLabel>> {
    let labels = mode_filter(&p.window_labels(seqs, batch)?, smoothing);
    Ok(windows_to_events(&labels, starts, window))
}

/// Full inference pipeline on a raw recording (windowing included).
pub fn infer_recording(p: &mut Predictor, rec: &MultimodalRecording, geo: WindowGeometry, batch: usize) -> Result<Vec<EventLabel>> {
    let seqs = sequences_for(rec, geo, SEQ_LEN)?;
    let starts: Vec<f64> = seqs.iter().flat_map(|s| s.frames.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(f, _)| f.start)).collect();
    predict_events(p, &seqs, &starts, geo.window, 1, batch)
}

// ---- training ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStatus {
    pub key: String,
    pub status: String,
    #[serde(default)]
    pub detail: Option<String>,
    /// Per trained network (two for decision level).
    pub best_epoch: Vec<usize>,
    pub best_val_loss: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl FoldStatus {
    pub fn completed(&self) -> bool {
        self.status == "completed"
    }
}

#[derive(Serialize)]
struct FoldKey<'a> {
    spec: &'a jmfusion_core::fusion::FusionSpec,
    train: &'a TrainConfig,
    dataset_hash: &'a str,
    fold: usize,
    nan_injected: bool,
}

pub fn read_status(dir: &Path) -> Option<FoldStatus> {
    serde_json::from_slice(&fs::read(dir.join("status.json")).ok()?).ok()
}

fn model_seed(seed: u64, run: &Run, fold: usize) -> u64 {
    let h = u64::from_str_radix(&json_hash(&run.spec)[..16], 16).expect("hex");
    segment_seed(seed ^ h, fold)
}

#[derive(Serialize)]
struct LogRow {
    epoch: usize,
    fold: usize,
    model: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
    wall_seconds: f64,
}

/// Train one (run, fold) job unless an identical job already finished.
/// Divergence is recorded in the status file rather than returned as an error.
pub fn train_job(ctx: &Ctx, run: &Run, k: usize, data: &[SegmentData], dataset_hash: &str) -> Result<(FoldStatus, bool)> {
    let dir = ctx.fold_dir(run, k);
    let inject = ctx.cfg.inject_nan.as_ref().is_some_and(|n| n.fold == k);
    let key = json_hash(&FoldKey { spec: &run.spec, train: &ctx.cfg.train, dataset_hash, fold: k, nan_injected: inject });
    if let Some(st) = read_status(&dir) {
        if st.key == key {
            return Ok((st, false));
        }
    }
    let collect = |pred: &dyn Fn(Option<usize>) -> bool| -> Vec<WindowSequence> {
        data.iter().filter(|s| pred(s.fold)).flat_map(|s| s.seqs.iter().cloned()).collect()
    };
    let train = collect(&|f| f.is_some_and(|f| f != k));
    let val = collect(&|f| f == Some(k));
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Missing(format!("fold {k} of {} has no training or validation segments", run.id)));
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let t0 = Instant::now();
    let log_path = dir.join("train_log.csv");
    let mut w = csv::Writer::from_path(&log_path).map_err(|e| CliError::format(&log_path, e))?;
    let mut log_err = None;
    let seed = model_seed(ctx.cfg.seed, run, k);
    // streamed so long runs can be followed
    let mut cb = |model: usize, e: &EpochLog| {
        log::debug!("{} fold {k} model {model} epoch {} train {:.4} val {:.4}", run.id, e.epoch, e.train_loss, e.val_loss);
        let row = LogRow {
            epoch: e.epoch,
            fold: k,
            model,
            train_loss: e.train_loss,
            val_loss: e.val_loss,
            lr: e.lr,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        if let Err(err) = w.serialize(row).map_err(|x| x.to_string()).and_then(|_| w.flush().map_err(|x| x.to_string())) {
            log_err.get_or_insert(err);
        }
    };
    let tc = TrainConfig { seed, ..ctx.cfg.train.clone() };
    let result = if run.spec.level == FusionLevel::Decision {
        DecisionSystem::train(&run.spec, &train, &val, &tc, seed, &mut cb).map(|(d, logs)| (Predictor::Decision(d), logs))
    } else {
        FusionModel::<f32>::build(&run.spec, seed).and_then(|mut m| {
            if inject {
                for p in m.params_mut().into_iter().filter(|p| p.trainable) {
                    p.value.iter_mut().for_each(|v| *v = f32::NAN);
                }
            }
            let log = train_fold(&mut m, &train, &val, &tc, &mut |e| cb(0, e))?;
            Ok((Predictor::Net(m), vec![log]))
        })
    };
    drop(cb);
    if let Some(e) = log_err {
        return Err(CliError::format(&log_path, e));
    }
    let status = match result {
        Ok((pred, logs)) => {
            pred.save(&dir, "")?;
            FoldStatus {
                key,
                status: "completed".into(),
                detail: None,
                best_epoch: logs.iter().map(|l| l.best_epoch).collect(),
                best_val_loss: logs.iter().map(|l| l.best_val_loss).collect(),
                epochs: logs.iter().map(|l| l.epochs.len()).collect(),
            }
        }
        Err(e @ jmfusion_core::Error::Diverged { .. }) => {
            log::warn!("{} fold {k}: {e}", run.id);
            FoldStatus { key, status: "diverged".into(), detail: Some(e.to_string()), best_epoch: vec![], best_val_loss: vec![], epochs: vec![] }
        }
        Err(e) => return Err(e.into()),
    };
    write_atomic(&dir.join("status.json"), &serde_json::to_vec_pretty(&status)?)?;
    Ok((status, true))
}

/// Run `f` over `items` on up to `jobs` threads, keeping input order.
pub fn parallel<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("joined").into_iter().map(|r| r.expect("visited")).collect()
}

pub struct TrainSummary {
    pub run: String,
    pub fold: usize,
    pub status: FoldStatus,
    pub trained: bool,
}

/// Train every fold of every run (fold-parallel).
pub fn train_runs(ctx: &Ctx, runs: &[Run]) -> Result<Vec<TrainSummary>> {
    let ds = ctx.dataset()?;
    let cache = DataCache::default();
    let folds = ctx.cfg.fold_list(ds.manifest.n_folds);
    for r in runs {
        cache.get(&ds, r.spec.geometry()?)?;
    }
    let jobs: Vec<(usize, usize)> = (0..runs.len()).flat_map(|r| folds.iter().map(move |&k| (r, k))).collect();
    let results = parallel(&jobs, ctx.jobs, |&(r, k)| {
        let data = cache.get(&ds, runs[r].spec.geometry()?)?;
        let (status, trained) = train_job(ctx, &runs[r], k, &data, &ds.manifest.dataset_hash)?;
        log::info!("{} fold {k}: {}{}", runs[r].id, status.status, if trained { "" } else { " (cached)" });
        Ok(TrainSummary { run: runs[r].id.clone(), fold: k, status, trained })
    });
    results.into_iter().collect()
}

// ---- evaluation ----

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

pub fn mean_sd(v: &[f64]) -> MeanSd {
    if v.is_empty() {
        return MeanSd::default();
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    MeanSd { mean, sd }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassRows {
    pub bite: MeanSd,
    #[serde(rename = "chew-bite")]
    pub chew_bite: MeanSd,
    #[serde(rename = "grazing-chew")]
    pub grazing_chew: MeanSd,
    #[serde(rename = "rumination-chew")]
    pub rumination_chew: MeanSd,
    pub overall: MeanSd,
}

/// Four metric blocks × (four classes + overall).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub f1: ClassRows,
    pub precision: ClassRows,
    pub recall: ClassRows,
    pub error_rate: ClassRows,
}

impl MetricTable {
    pub fn from_reports(reports: &[&MetricsReport]) -> Self {
        let rows = |f: &dyn Fn(&jmfusion_core::evalkit::Scores) -> f64| {
            let col = |i: Option<usize>| {
                mean_sd(&reports.iter().map(|r| f(i.map_or(&r.overall, |i| &r.per_class[i].1))).collect::<Vec<_>>())
            };
            ClassRows {
                bite: col(Some(0)),
                chew_bite: col(Some(1)),
                grazing_chew: col(Some(2)),
                rumination_chew: col(Some(3)),
                overall: col(None),
            }
        };
        Self {
            f1: rows(&|s| s.f1),
            precision: rows(&|s| s.precision),
            recall: rows(&|s| s.recall),
            error_rate: rows(&|s| s.error_rate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub validation: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: String,
    pub label: String,
    pub precision: Precision,
    pub folds: Vec<FoldReport>,
    pub diverged_folds: Vec<usize>,
    pub validation: MetricTable,
    pub test: MetricTable,
}

impl RunReport {
    pub fn test_f1(&self) -> f64 {
        self.test.f1.overall.mean
    }
}

pub fn score(data: &[&SegmentData], preds: &[Vec<EventLabel>], tol: f64) -> Result<EventCounts> {
    let mut c = EventCounts::default();
    for (s, p) in data.iter().zip(preds) {
        c += match_events(&s.labels, p, tol)?.counts;
    }
    Ok(c)
}

/// Evaluate every completed fold of `run` on its validation fold and on the
/// test segments, optionally after quantizing to `precision`.
pub fn evaluate_run(ctx: &Ctx, run: &Run, ds: &Dataset, cache: &DataCache, precision: Precision) -> Result<RunReport> {
    let data = cache.get(ds, run.spec.geometry()?)?;
    let folds = ctx.cfg.fold_list(ds.manifest.n_folds);
    let (ev, batch) = (&ctx.cfg.eval, ctx.cfg.train.batch_size);
    let mut reports = Vec::new();
    let mut diverged = Vec::new();
    for &k in &folds {
        let dir = ctx.fold_dir(run, k);
        let st = read_status(&dir).ok_or_else(|| CliError::Missing(format!("{} fold {k} is not trained (run `train` first)", run.id)))?;
        if !st.completed() {
            diverged.push(k);
            continue;
        }
        let mut p = Predictor::load(&dir, run)?;
        if precision != Precision::F32 {
            p = p.quantize(precision);
        }
        let mut part = |keep: &dyn Fn(Option<usize>) -> bool, save: bool| -> Result<MetricsReport> {
            let segs: Vec<&SegmentData> = data.iter().filter(|s| keep(s.fold)).collect();
            let preds = segs
                .iter()
                .map(|s| predict_events(&mut p, &s.seqs, &s.starts, run.spec.window, ev.smoothing, batch))
                .collect::<Result<Vec<_>>>()?;
            if save {
                let pd = dir.join(format!("pred-{}", precision.name()));
                fs::create_dir_all(&pd).map_err(|e| CliError::io(&pd, e))?;
                for (s, e) in segs.iter().zip(&preds) {
                    write_labels(&pd.join(format!("{}.tsv", s.id)), e)?;
                }
            }
            Ok(compute_metrics(&score(&segs, &preds, ev.tolerance)?))
        };
        let validation = part(&|f| f == Some(k), false)?;
        let test = part(&|f| f.is_none(), true)?;
        reports.push(FoldReport { fold: k, validation, test });
    }
    if reports.is_empty() {
        return Err(CliError::Missing(format!("{}: no completed folds to evaluate", run.id)));
    }
    let v: Vec<&MetricsReport> = reports.iter().map(|r| &r.validation).collect();
    let t: Vec<&MetricsReport> = reports.iter().map(|r| &r.test).collect();
    Ok(RunReport {
        run: run.id.clone(),
        label: run.spec.label(),
        precision,
        validation: MetricTable::from_reports(&v),
        test: MetricTable::from_reports(&t),
        folds: reports,
        diverged_folds: diverged,
    })
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
