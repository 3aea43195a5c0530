//! On-disk dataset: per-segment WAV + IMU CSV + label TSV + meta JSON, and a
//! manifest with content hashes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use jmfusion_core::signals::{EventClass, EventLabel, MultimodalRecording, AUDIO_RATE, IMU_RATE};
use jmfusion_core::synth::{generate_segment, plan_dataset, SegmentPlan, SynthConfig};
use jmfusion_core::Activity;

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;
const IMU_HEADER: [&str; 9] = ["ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub segment_id: String,
    pub activity: Activity,
    /// `None` = test segment.
    pub fold: Option<usize>,
    pub audio_rate: f64,
    pub imu_rate: f64,
    pub imu_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub id: String,
    pub activity: Activity,
    pub fold: Option<usize>,
    /// file name → sha256
    pub files: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub synth: Option<SynthConfig>,
    pub config_hash: Option<String>,
    pub n_folds: usize,
    pub segments: Vec<SegmentEntry>,
    pub dataset_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a serializable value's canonical JSON.
pub fn json_hash<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("config serializes"))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

// ---- WAV ----

pub fn write_wav(path: &Path, audio: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: AUDIO_RATE as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| CliError::format(path, e))?;
    for &v in audio {
        let q = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(q).map_err(|e| CliError::format(path, e))?;
    }
    w.finalize().map_err(|e| CliError::format(path, e))
}

pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut r = hound::WavReader::open(path).map_err(|e| CliError::format(path, e))?;
    let s = r.spec();
    if s.channels != 1 || s.sample_rate != AUDIO_RATE as u32 {
        return Err(CliError::format(path, format!("expected mono {} Hz audio, got {} ch {} Hz", AUDIO_RATE, s.channels, s.sample_rate)));
    }
    match (s.sample_format, s.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|v| v.map(|q| q as f32 / 32767.0).map_err(|e| CliError::format(path, e)))
            .collect(),
        (hound::SampleFormat::Float, 32) => r.samples::<f32>().map(|v| v.map_err(|e| CliError::format(path, e))).collect(),
        (f, b) => Err(CliError::format(path, format!("unsupported sample format {f:?}/{b} bit"))),
    }
}

// ---- IMU CSV ----

pub fn write_imu_csv(path: &Path, imu: &[f32], channels: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))?;
    let mut header = vec!["t"];
    header.extend(&IMU_HEADER[..channels]);
    w.write_record(&header).map_err(|e| CliError::format(path, e))?;
    for (i, row) in imu.chunks(channels).enumerate() {
        let mut rec = vec![format!("{:.2}", i as f64 / IMU_RATE)];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| CliError::format(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Returns (row-major values, channel count).
pub fn read_imu_csv(path: &Path) -> Result<(Vec<f32>, usize)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    let cols = r.headers().map_err(|e| CliError::format(path, e))?.len();
    let channels = cols.checked_sub(1).filter(|c| *c == 6 || *c == 9).ok_or_else(|| {
        CliError::format(path, format!("expected t + 6 or 9 IMU columns, found {cols} columns"))
    })?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        for f in rec.iter().skip(1) {
            out.push(f.trim().parse::<f32>().map_err(|e| CliError::format(path, format!("row {}: {e}", i + 1)))?);
        }
    }
    Ok((out, channels))
}

// ---- label TSV (onset, offset, class) ----

pub fn write_labels(path: &Path, labels: &[EventLabel]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for l in labels {
        writeln!(w, "{:.6}\t{:.6}\t{}", l.onset, l.offset, l.class.name()).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<EventLabel>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(CliError::format(path, format!("line {}: expected onset<TAB>offset<TAB>class", i + 1)));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| CliError::format(path, format!("line {}: {e}", i + 1)));
        let class = EventClass::parse(parts[2].trim()).map_err(|e| CliError::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(EventLabel::new(class, num(parts[0])?, num(parts[1])?));
    }
    Ok(out)
}

// ---- segments ----

const FILES: [&str; 4] = ["audio.wav", "imu.csv", "labels.tsv", "meta.json"];

pub fn write_segment(dir: &Path, rec: &MultimodalRecording, fold: Option<usize>) -> Result<Vec<(String, String)>> {
    let d = dir.join(&rec.segment_id);
    fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
    write_wav(&d.join(FILES[0]), &rec.audio)?;
    write_imu_csv(&d.join(FILES[1]), &rec.imu, rec.imu_channels)?;
    write_labels(&d.join(FILES[2]), &rec.labels)?;
    let meta = SegmentMeta {
        segment_id: rec.segment_id.clone(),
        activity: rec.activity,
        fold,
        audio_rate: AUDIO_RATE,
        imu_rate: IMU_RATE,
        imu_channels: rec.imu_channels,
    };
    write_atomic(&d.join(FILES[3]), &serde_json::to_vec_pretty(&meta)?)?;
    FILES.iter().map(|f| Ok((f.to_string(), sha256_hex(&read(&d.join(f))?)))).collect()
}

pub fn load_recording(dir: &Path, id: &str) -> Result<(MultimodalRecording, SegmentMeta)> {
    let d = dir.join(id);
    let meta: SegmentMeta =
        serde_json::from_slice(&read(&d.join("meta.json"))?).map_err(|e| CliError::format(d.join("meta.json"), e))?;
    if meta.audio_rate != AUDIO_RATE || meta.imu_rate != IMU_RATE {
        return Err(CliError::format(&d, "unsupported sampling rates"));
    }
    let audio = read_wav(&d.join("audio.wav"))?;
    let (imu, imu_channels) = read_imu_csv(&d.join("imu.csv"))?;
    let labels = read_labels(&d.join("labels.tsv"))?;
    let rec = MultimodalRecording { segment_id: meta.segment_id.clone(), audio, imu, imu_channels, labels, activity: meta.activity };
    rec.validate().map_err(|e| CliError::format(&d, e))?;
    Ok((rec, meta))
}

fn dataset_hash(entries: &[SegmentEntry]) -> String {
    let mut h = Sha256::new();
    for e in entries {
        for (f, s) in &e.files {
            h.update(format!("{}/{}:{}\n", e.id, f, s));
        }
    }
    hex::encode(h.finalize())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    if !p.exists() {
        return Err(CliError::Missing(format!("no dataset manifest at {}", p.display())));
    }
    serde_json::from_slice(&read(&p)?).map_err(|e| CliError::format(&p, e))
}

/// Check that every file still has its recorded hash.
pub fn verify(dir: &Path, m: &Manifest) -> Result<bool> {
    for e in &m.segments {
        for (f, s) in &e.files {
            let p = dir.join(&e.id).join(f);
            if !p.exists() || sha256_hex(&read(&p)?) != *s {
                return Ok(false);
            }
        }
    }
    Ok(dataset_hash(&m.segments) == m.dataset_hash)
}

/// Render and write every planned segment, using `jobs` threads. A dataset
/// already present with the same config hash is kept as is.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path, jobs: usize) -> Result<(Manifest, bool)> {
    let config_hash = json_hash(cfg);
    if let Ok(m) = read_manifest(dir) {
        if m.config_hash.as_deref() == Some(config_hash.as_str()) && verify(dir, &m)? {
            return Ok((m, false));
        }
    }
    let plans = plan_dataset(cfg)?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let results: Mutex<Vec<Option<Result<SegmentEntry>>>> = Mutex::new((0..plans.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = |p: &SegmentPlan| -> Result<SegmentEntry> {
        let rec = generate_segment(cfg, p)?;
        let files = write_segment(dir, &rec, p.fold)?;
        Ok(SegmentEntry { id: p.id.clone(), activity: p.activity, fold: p.fold, files })
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(plans.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= plans.len() {
                    break;
                }
                let r = work(&plans[i]);
                results.lock().expect("no panics while holding lock")[i] = Some(r);
            });
        }
    });
    let segments = results
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        format_version: FORMAT_VERSION,
        synth: Some(cfg.clone()),
        config_hash: Some(config_hash),
        n_folds: cfg.n_folds,
        dataset_hash: dataset_hash(&segments),
        segments,
    };
    write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&m)?)?;
    Ok((m, true))
}

/// A loaded dataset, kept in segment-id order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub recordings: Vec<MultimodalRecording>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CliError::format(dir.join(MANIFEST), format!("format version {}", manifest.format_version)));
        }
        let recordings = manifest
            .segments
            .iter()
            .map(|e| load_recording(dir, &e.id).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dir: dir.to_path_buf(), manifest, recordings })
    }

    pub fn test(&self) -> Vec<&MultimodalRecording> {
        self.select(|f| f.is_none())
    }

    pub fn fold(&self, k: usize) -> Vec<&MultimodalRecording> {
        self.select(|f| f == Some(k))
    }

    pub fn train_for(&self, k: usize) -> Vec<&MultimodalRecording> {
        self.select(|f| f.is_some_and(|f| f != k))
    }

    fn select(&self, keep: impl Fn(Option<usize>) -> bool) -> Vec<&MultimodalRecording> {
        self.manifest.segments.iter().zip(&self.recordings).filter(|(e, _)| keep(e.fold)).map(|(_, r)| r).collect()
    }
}
