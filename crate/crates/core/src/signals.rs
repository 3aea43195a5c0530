//! Recordings, windowing, window targets and fixed-length sequences.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AUDIO_RATE: f64 = 6000.0;
pub const IMU_RATE: f64 = 100.0;
/// Class id of the "no-event" output.
pub const NO_EVENT: usize = 4;
pub const N_CLASSES: usize = 5;
/// Sequence length used throughout training.
pub const SEQ_LEN: usize = 46;

// Window starts are computed as i * hop in floating point; comparisons against
// thresholds get this much slack so grid-aligned cases don't flip.
const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventClass {
    Bite,
    ChewBite,
    GrazingChew,
    RuminationChew,
}

impl EventClass {
    pub const ALL: [EventClass; 4] = [
        EventClass::Bite,
        EventClass::ChewBite,
        EventClass::GrazingChew,
        EventClass::RuminationChew,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Bite => "bite",
            EventClass::ChewBite => "chew-bite",
            EventClass::GrazingChew => "grazing-chew",
            EventClass::RuminationChew => "rumination-chew",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Label(alloc::format!("unknown class '{s}'")))
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Name of a model output id (0..5).
pub fn class_name(id: usize) -> &'static str {
    EventClass::from_id(id).map_or("no-event", EventClass::name)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub class: EventClass,
    pub onset: f64,
    pub offset: f64,
}

impl EventLabel {
    pub fn new(class: EventClass, onset: f64, offset: f64) -> Self {
        Self { class, onset, offset }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.offset.min(end) - self.onset.max(start)).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    Grazing,
    Rumination,
}

impl Activity {
    pub fn name(self) -> &'static str {
        match self {
            Activity::Grazing => "grazing",
            Activity::Rumination => "rumination",
        }
    }
}

/// One segment: mono audio at 6 kHz, IMU rows at 100 Hz, labels.
///
/// `imu` is row-major with `imu_channels` columns: ax ay az gx gy gz [mx my mz].
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalRecording {
    pub segment_id: String,
    pub audio: Vec<f32>,
    pub imu: Vec<f32>,
    pub imu_channels: usize,
    pub labels: Vec<EventLabel>,
    pub activity: Activity,
}

impl MultimodalRecording {
    pub fn imu_rows(&self) -> usize {
        if self.imu_channels == 0 {
            0
        } else {
            self.imu.len() / self.imu_channels
        }
    }

    pub fn has_mag(&self) -> bool {
        self.imu_channels == 9
    }

    /// Usable duration: the shorter of the two modalities.
    pub fn duration(&self) -> f64 {
        let a = self.audio.len() as f64 / AUDIO_RATE;
        let i = self.imu_rows() as f64 / IMU_RATE;
        a.min(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.imu_channels != 6 && self.imu_channels != 9 {
            return Err(Error::Invalid(alloc::format!(
                "imu must have 6 or 9 channels, got {}",
                self.imu_channels
            )));
        }
        if self.imu.len() % self.imu_channels != 0 {
            return Err(Error::Invalid("ragged imu matrix".to_string()));
        }
        let a = self.audio.len() as f64 / AUDIO_RATE;
        let i = self.imu_rows() as f64 / IMU_RATE;
        if (a - i).abs() > 0.15 + EPS {
            return Err(Error::Invalid(alloc::format!(
                "audio ({a:.3} s) and imu ({i:.3} s) durations disagree"
            )));
        }
        validate_labels(&self.labels, a.max(i))
    }
}

/// Onset < offset, inside [0, duration], no two labels overlapping.
pub fn validate_labels(labels: &[EventLabel], duration: f64) -> Result<()> {
    for l in labels {
        if !(l.onset.is_finite() && l.offset.is_finite()) || l.onset >= l.offset {
            return Err(Error::Label(alloc::format!(
                "onset {} must be < offset {}",
                l.onset, l.offset
            )));
        }
        if l.onset < 0.0 || l.offset > duration + EPS {
            return Err(Error::Label(alloc::format!(
                "label [{}, {}] outside recording of {duration} s",
                l.onset, l.offset
            )));
        }
    }
    let mut sorted: Vec<&EventLabel> = labels.iter().collect();
    sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    for w in sorted.windows(2) {
        if w[1].onset < w[0].offset - EPS {
            return Err(Error::Label(alloc::format!(
                "labels [{}, {}] and [{}, {}] overlap",
                w[0].onset, w[0].offset, w[1].onset, w[1].offset
            )));
        }
    }
    Ok(())
}

/// Euclidean norm of a 3-vector.
pub fn magnitude(x: f64, y: f64, z: f64) -> f64 {
    libm::hypot(libm::hypot(x, y), z)
}

/// Linear interpolation onto a new rate; the last segment's slope is
/// extended past the final input sample so ramps stay exact.
pub fn resample_linear(series: &[f32], from_rate: f64, to_rate: f64) -> Result<Vec<f32>> {
    if series.is_empty() {
        return Err(Error::Invalid("cannot resample an empty series".to_string()));
    }
    if !(from_rate > 0.0 && to_rate > 0.0) {
        return Err(Error::Invalid("sample rates must be positive".to_string()));
    }
    let n = series.len();
    let n_out = libm::round(n as f64 * to_rate / from_rate) as usize;
    if n == 1 {
        return Ok(vec![series[0]; n_out]);
    }
    let ratio = from_rate / to_rate;
    Ok((0..n_out)
        .map(|j| {
            let p = j as f64 * ratio;
            let i = (libm::floor(p) as usize).min(n - 2);
            let frac = p - i as f64;
            let (a, b) = (series[i] as f64, series[i + 1] as f64);
            (a + (b - a) * frac) as f32
        })
        .collect())
}

/// Window length and overlap, with per-modality sample counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub window: f64,
    pub overlap: f64,
}

impl WindowGeometry {
    pub fn new(window: f64, overlap: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Invalid(alloc::format!("overlap {overlap} not in [0,1)")));
        }
        if !(window > 0.0) {
            return Err(Error::Invalid(alloc::format!("window {window} must be positive")));
        }
        Ok(Self { window, overlap })
    }

    pub fn hop(&self) -> f64 {
        self.window * (1.0 - self.overlap)
    }

    pub fn audio_len(&self) -> usize {
        libm::round(self.window * AUDIO_RATE) as usize
    }

    pub fn imu_len(&self) -> usize {
        libm::round(self.window * IMU_RATE) as usize
    }

    pub fn count(&self, duration: f64) -> usize {
        if duration + EPS < self.window {
            return 0;
        }
        libm::floor((duration - self.window) / self.hop() + EPS) as usize + 1
    }

    pub fn start(&self, i: usize) -> f64 {
        i as f64 * self.hop()
    }
}

/// Per-window chunks, channel-major: `accel[c * n + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub start: f64,
    pub audio: Vec<f32>,
    pub accel: Vec<f32>,
    pub gyro: Vec<f32>,
    pub mag: Option<Vec<f32>>,
}

impl Frame {
    pub fn zeros_like(other: &Frame) -> Self {
        Self {
            start: 0.0,
            audio: vec![0.0; other.audio.len()],
            accel: vec![0.0; other.accel.len()],
            gyro: vec![0.0; other.gyro.len()],
            mag: other.mag.as_ref().map(|m| vec![0.0; m.len()]),
        }
    }

    pub fn imu_len(&self) -> usize {
        self.accel.len() / 3
    }
}

pub fn extract_windows(rec: &MultimodalRecording, geo: WindowGeometry) -> Result<Vec<Frame>> {
    let duration = rec.duration();
    if geo.window > duration + EPS {
        return Err(Error::Invalid(alloc::format!(
            "window {} s longer than recording ({duration:.3} s)",
            geo.window
        )));
    }
    let (na, ni) = (geo.audio_len(), geo.imu_len());
    let rows = rec.imu_rows();
    let ch = rec.imu_channels;
    let count = geo.count(duration);
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = geo.start(i);
        let a0 = (libm::round(start * AUDIO_RATE) as usize).min(rec.audio.len() - na);
        let i0 = (libm::round(start * IMU_RATE) as usize).min(rows - ni);
        let chunk = |c0: usize| {
            let mut out = vec![0.0f32; 3 * ni];
            for c in 0..3 {
                for t in 0..ni {
                    out[c * ni + t] = rec.imu[(i0 + t) * ch + c0 + c];
                }
            }
            out
        };
        frames.push(Frame {
            start,
            audio: rec.audio[a0..a0 + na].to_vec(),
            accel: chunk(0),
            gyro: chunk(3),
            mag: rec.has_mag().then(|| chunk(6)),
        });
    }
    Ok(frames)
}

/// Max-overlap class if it covers at least half the window, else no-event.
/// `labels` need not be sorted; ties go to the earlier onset.
pub fn label_windows(starts: &[f64], labels: &[EventLabel], window: f64) -> Vec<usize> {
    let mut sorted: Vec<&EventLabel> = labels.iter().collect();
    sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let mut first = 0;
    starts
        .iter()
        .map(|&s| {
            let e = s + window;
            while first < sorted.len() && sorted[first].offset <= s {
                first += 1;
            }
            let mut best = (0.0, NO_EVENT);
            for l in sorted[first..].iter().take_while(|l| l.onset < e) {
                let ov = l.overlap(s, e);
                if ov > best.0 {
                    best = (ov, l.class.id());
                }
            }
            if best.0 + EPS >= 0.5 * window {
                best.1
            } else {
                NO_EVENT
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSequence {
    pub frames: Vec<Frame>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl WindowSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn real(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn build_sequences(frames: Vec<Frame>, targets: Vec<usize>, l: usize) -> Result<Vec<WindowSequence>> {
    if frames.is_empty() {
        return Err(Error::Invalid("empty window stream".to_string()));
    }
    if l == 0 {
        return Err(Error::Invalid("sequence length must be >= 1".to_string()));
    }
    if frames.len() != targets.len() {
        return Err(Error::Invalid("frames/targets length mismatch".to_string()));
    }
    let pad = Frame::zeros_like(&frames[0]);
    let mut out = Vec::with_capacity(frames.len().div_ceil(l));
    let mut fi = frames.into_iter();
    let mut ti = targets.into_iter();
    loop {
        let fs: Vec<Frame> = fi.by_ref().take(l).collect();
        if fs.is_empty() {
            break;
        }
        let mut ts: Vec<usize> = ti.by_ref().take(l).collect();
        let real = fs.len();
        let mut fs = fs;
        fs.resize(l, pad.clone());
        ts.resize(l, NO_EVENT);
        let mut mask = vec![true; real];
        mask.resize(l, false);
        out.push(WindowSequence { frames: fs, targets: ts, mask });
    }
    Ok(out)
}

/// Window a recording, label it and cut it into sequences.
pub fn sequences_for(rec: &MultimodalRecording, geo: WindowGeometry, l: usize) -> Result<Vec<WindowSequence>> {
    let frames = extract_windows(rec, geo)?;
    let starts: Vec<f64> = frames.iter().map(|f| f.start).collect();
    let targets = label_windows(&starts, &rec.labels, geo.window);
    build_sequences(frames, targets, l)
}
