//! Synthetic labeled segments with field-recording event durations.
//!
//! Audio events are amplitude-modulated narrow-band bursts (chew-bite is two
//! adjacent bursts); IMU events are smooth displacement pulses, stronger for
//! grazing classes. Everything is seeded per segment.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{Activity, EventClass, EventLabel, MultimodalRecording, AUDIO_RATE, IMU_RATE};
use crate::training::{kfold_split, FoldAssignment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Envelope {
    SingleBurst,
    DoubleBurst,
    LowEnergyBurst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventClassProfile {
    pub class: EventClass,
    pub duration_mean: f64,
    pub duration_sd: f64,
    pub duration_min: f64,
    pub duration_max: f64,
    pub audio_envelope: Envelope,
    pub audio_gain: f64,
    /// Free parameter: no measured IMU amplitudes exist.
    pub imu_gain: f64,
    /// Burst carrier frequency (Hz); chew-bite uses it for the bite half.
    pub carrier_hz: f64,
}

impl EventClassProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = self.duration_min <= self.duration_mean
            && self.duration_mean <= self.duration_max
            && self.duration_sd > 0.0
            && self.duration_min > 0.0
            && self.audio_gain > 0.0
            && self.imu_gain > 0.0
            && self.carrier_hz > 0.0
            && self.carrier_hz < AUDIO_RATE / 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid profile for {}", self.class)))
        }
    }
}

/// Field duration statistics with this crate's default rendering gains.
pub fn default_profiles() -> Vec<EventClassProfile> {
    let p = |class, mean, sd, min, max, env, ag, ig, hz| EventClassProfile {
        class,
        duration_mean: mean,
        duration_sd: sd,
        duration_min: min,
        duration_max: max,
        audio_envelope: env,
        audio_gain: ag,
        imu_gain: ig,
        carrier_hz: hz,
    };
    vec![
        p(EventClass::Bite, 0.33, 0.084, 0.115, 0.926, Envelope::SingleBurst, 0.6, 1.3, 1400.0),
        p(EventClass::ChewBite, 0.436, 0.087, 0.187, 0.961, Envelope::DoubleBurst, 0.7, 1.2, 1400.0),
        p(EventClass::GrazingChew, 0.323, 0.066, 0.144, 0.665, Envelope::SingleBurst, 0.5, 1.0, 500.0),
        p(EventClass::RuminationChew, 0.341, 0.051, 0.167, 0.806, Envelope::LowEnergyBurst, 0.25, 0.6, 300.0),
    ]
}

/// Noise level: a finite SNR in dB or no noise at all.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Snr {
    Db(f64),
    Clean(CleanTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleanTag {
    Clean,
}

impl Snr {
    pub const CLEAN: Snr = Snr::Clean(CleanTag::Clean);

    /// Noise standard deviation for a reference signal power.
    fn sigma(self, ref_power: f64) -> f64 {
        match self {
            Snr::Clean(_) => 0.0,
            Snr::Db(db) => libm::sqrt(ref_power / libm::pow(10.0, db / 10.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_segments: usize,
    /// Held-out test segments (taken from the end of the id range).
    pub n_test: usize,
    pub n_folds: usize,
    pub segment_duration: f64,
    /// Fraction of rumination segments.
    pub activity_mix: f64,
    pub gap_mean: f64,
    pub gap_sd: f64,
    pub gap_min: f64,
    pub noise_snr_db: Snr,
    /// Grazing-segment class proportions: bite, chew-bite, grazing-chew.
    pub grazing_mix: [f64; 3],
    pub magnetometer: bool,
    pub profiles: Vec<EventClassProfile>,
    /// Non-jaw sounds per second (audio only, placed in gaps).
    pub sound_distractor_rate: f64,
    /// Non-chewing head movements per second (IMU only, placed in gaps).
    pub motion_distractor_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Grazing proportions from field event counts (2234 / 6605 / 6905).
        let total = 2234.0 + 6605.0 + 6905.0;
        Self {
            seed: 7,
            n_segments: 29,
            n_test: 5,
            n_folds: 5,
            segment_duration: 60.0,
            activity_mix: 0.2,
            gap_mean: 0.45,
            gap_sd: 0.15,
            gap_min: 0.2,
            noise_snr_db: Snr::Db(10.0),
            grazing_mix: [2234.0 / total, 6605.0 / total, 6905.0 / total],
            magnetometer: true,
            profiles: default_profiles(),
            sound_distractor_rate: 0.3,
            motion_distractor_rate: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.activity_mix) {
            return Err(Error::Config(format!("activity_mix {} not in [0,1]", self.activity_mix)));
        }
        if let Snr::Db(db) = self.noise_snr_db {
            if !db.is_finite() {
                return Err(Error::Config("snr must be finite or \"clean\"".into()));
            }
        }
        if self.n_test >= self.n_segments {
            return Err(Error::Config("n_test must leave training segments".into()));
        }
        if !(self.sound_distractor_rate >= 0.0 && self.motion_distractor_rate >= 0.0) {
            return Err(Error::Config("distractor rates must be >= 0".into()));
        }
        if self.gap_min < 0.0 || self.gap_sd < 0.0 {
            return Err(Error::Config("gap parameters must be non-negative".into()));
        }
        if self.grazing_mix.iter().any(|&m| m < 0.0) || self.grazing_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("grazing_mix must be non-negative with positive sum".into()));
        }
        for c in EventClass::ALL {
            self.profile(c)?.validate()?;
        }
        Ok(())
    }

    pub fn profile(&self, class: EventClass) -> Result<&EventClassProfile> {
        self.profiles
            .iter()
            .find(|p| p.class == class)
            .ok_or_else(|| Error::Config(format!("no profile for {class}")))
    }
}

/// Seed for one segment, independent of generation order.
pub fn segment_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normal(mean, sd) conditioned on [min, max], by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, p: &EventClassProfile) -> f64 {
    let n = Normal::new(p.duration_mean, p.duration_sd).expect("validated sd");
    for _ in 0..10_000 {
        let d = n.sample(rng);
        if (p.duration_min..=p.duration_max).contains(&d) {
            return d;
        }
    }
    p.duration_mean.clamp(p.duration_min, p.duration_max)
}

fn round_us(t: f64) -> f64 {
    libm::round(t * 1e6) / 1e6
}

pub fn sample_event_schedule(cfg: &SynthConfig, activity: Activity, seed: u64) -> Result<Vec<EventLabel>> {
    if cfg.segment_duration <= 1.0 {
        return Err(Error::Config("segment_duration must exceed 1 s".into()));
    }
    cfg.validate()?;
    let classes: &[EventClass] = match activity {
        Activity::Rumination => &[EventClass::RuminationChew],
        Activity::Grazing => &[EventClass::Bite, EventClass::ChewBite, EventClass::GrazingChew],
    };
    let min_dur = classes
        .iter()
        .map(|&c| cfg.profile(c).map(|p| p.duration_min))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if cfg.gap_min + min_dur > cfg.segment_duration {
        return Err(Error::Config("gap + minimum duration exceed the segment".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = |rng: &mut ChaCha8Rng| {
        let z: f64 = StandardNormal.sample(rng);
        (cfg.gap_mean + cfg.gap_sd * z).max(cfg.gap_min)
    };
    let mix_total: f64 = cfg.grazing_mix.iter().sum();
    let mut out = Vec::new();
    let mut t = gap(&mut rng);
    loop {
        let class = if classes.len() == 1 {
            classes[0]
        } else {
            let mut u = rng.random::<f64>() * mix_total;
            let mut k = 0;
            while k < 2 && u >= cfg.grazing_mix[k] {
                u -= cfg.grazing_mix[k];
                k += 1;
            }
            classes[k]
        };
        let d = truncated_normal(&mut rng, cfg.profile(class)?);
        let (on, off) = (round_us(t), round_us(t + d));
        if off > cfg.segment_duration - 0.05 {
            break;
        }
        out.push(EventLabel::new(class, on, off));
        t = off + gap(&mut rng);
    }
    Ok(out)
}

fn quantize_pcm16(x: f64) -> f32 {
    let q = libm::round(x.clamp(-1.0, 1.0) * 32767.0) as i16;
    q as f32 / 32767.0
}

// Reference powers that define 0 dB for each modality.
const AUDIO_REF_POWER: f64 = 0.125; // 0.5 amplitude sinusoid
const ACCEL_REF_POWER: f64 = 0.5; // 1 m/s^2 sinusoid
const GYRO_SCALE: f64 = 20.0; // deg/s per unit of pulse
const GRAVITY: f64 = 9.81;
const EARTH_FIELD: [f64; 3] = [22.0, 3.0, -41.0];

/// Class envelope at normalized time u in [0,1].
fn envelope(env: Envelope, u: f64) -> f64 {
    match env {
        // Sharp attack, quadratic decay.
        Envelope::SingleBurst => {
            let a = 0.15;
            if u < a {
                u / a
            } else {
                let r = (1.0 - u) / (1.0 - a);
                r * r
            }
        }
        Envelope::LowEnergyBurst | Envelope::DoubleBurst => {
            let s = libm::sin(PI * u);
            s * s
        }
    }
}

/// Narrow-band carrier: three partials jittered around `hz`.
struct Carrier {
    f: [f64; 3],
    ph: [f64; 3],
}

impl Carrier {
    fn new<R: Rng>(rng: &mut R, hz: f64) -> Self {
        let mut f = [0.0; 3];
        let mut ph = [0.0; 3];
        for k in 0..3 {
            f[k] = hz * (1.0 + 0.08 * (rng.random::<f64>() - 0.5));
            ph[k] = 2.0 * PI * rng.random::<f64>();
        }
        Self { f, ph }
    }

    fn at(&self, t: f64) -> f64 {
        (0..3).map(|k| libm::sin(2.0 * PI * self.f[k] * t + self.ph[k])).sum::<f64>() / 3.0
    }
}

fn render_audio_event<R: Rng>(audio: &mut [f64], ev: &EventLabel, p: &EventClassProfile, rng: &mut R) {
    let i0 = libm::round(ev.onset * AUDIO_RATE) as usize;
    let i1 = (libm::round(ev.offset * AUDIO_RATE) as usize).min(audio.len());
    if i1 <= i0 {
        return;
    }
    let n = (i1 - i0) as f64;
    let gain = p.audio_gain * (0.85 + 0.3 * rng.random::<f64>());
    match p.audio_envelope {
        Envelope::DoubleBurst => {
            // chew (lower carrier) then bite (class carrier)
            let split = 0.55;
            let chew = Carrier::new(rng, p.carrier_hz * 0.5);
            let bite = Carrier::new(rng, p.carrier_hz);
            for (j, a) in audio[i0..i1].iter_mut().enumerate() {
                let u = j as f64 / n;
                let t = j as f64 / AUDIO_RATE;
                *a += if u < split {
                    gain * envelope(Envelope::DoubleBurst, u / split) * chew.at(t)
                } else {
                    gain * envelope(Envelope::DoubleBurst, (u - split) / (1.0 - split)) * bite.at(t)
                };
            }
        }
        env => {
            let c = Carrier::new(rng, p.carrier_hz);
            for (j, a) in audio[i0..i1].iter_mut().enumerate() {
                let u = j as f64 / n;
                *a += gain * envelope(env, u) * c.at(j as f64 / AUDIO_RATE);
            }
        }
    }
}

/// Intervals of `len_range` seconds that keep 50 ms clear of every event.
fn sample_distractors<R: Rng>(rng: &mut R, rate: f64, len_range: (f64, f64), schedule: &[EventLabel], duration: f64) -> Vec<(f64, f64)> {
    let n = libm::floor(rate * duration + rng.random::<f64>()) as usize;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..20 {
            let d = len_range.0 + (len_range.1 - len_range.0) * rng.random::<f64>();
            let t0 = (duration - d) * rng.random::<f64>();
            let t1 = t0 + d;
            let clear = |a: f64, b: f64| t1 + 0.05 <= a || t0 >= b + 0.05;
            if schedule.iter().all(|e| clear(e.onset, e.offset)) && out.iter().all(|&(a, b)| clear(a, b)) {
                out.push((t0, t1));
                break;
            }
        }
    }
    out
}

/// Render audio + IMU for a schedule. Audio lands on the 16-bit PCM grid so a
/// WAV round trip is lossless.
pub fn render_segment(
    schedule: &[EventLabel],
    cfg: &SynthConfig,
    activity: Activity,
    segment_id: &str,
    seed: u64,
) -> Result<MultimodalRecording> {
    crate::signals::validate_labels(schedule, cfg.segment_duration)?;
    let na = libm::round(cfg.segment_duration * AUDIO_RATE) as usize;
    let ni = libm::round(cfg.segment_duration * IMU_RATE) as usize;
    let ch = if cfg.magnetometer { 9 } else { 6 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let clean = matches!(cfg.noise_snr_db, Snr::Clean(_));

    let mut audio = vec![0.0f64; na];
    for ev in schedule {
        render_audio_event(&mut audio, ev, cfg.profile(ev.class)?, &mut rng);
    }
    // Distractor sounds borrow a random class's timbre so audio alone can't
    // rule them out; the jaw doesn't move.
    for (t0, t1) in sample_distractors(&mut rng, cfg.sound_distractor_rate, (0.15, 0.6), schedule, cfg.segment_duration) {
        let mut p = cfg.profiles[rng.random_range(0..cfg.profiles.len())].clone();
        p.audio_gain *= 0.6 + 0.6 * rng.random::<f64>();
        p.carrier_hz *= 0.8 + 0.4 * rng.random::<f64>();
        render_audio_event(&mut audio, &EventLabel::new(p.class, t0, t1), &p, &mut rng);
    }

    // IMU pulses: a raised-cosine bump per event spanning its duration plus
    // half a duration of run-up/run-down, along a random per-event direction.
    let mut disp = vec![[0.0f64; 6]; ni];
    for ev in schedule {
        let p = cfg.profile(ev.class)?;
        let d = ev.duration();
        let (t0, t1) = (ev.onset - 0.25 * d, ev.offset + 0.25 * d);
        let mut dir = [0.0f64; 6];
        for v in dir.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        // mostly vertical jaw/head motion
        dir[2] += 2.0;
        dir[3] += 1.5;
        let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
        let gain = p.imu_gain * (0.8 + 0.4 * rng.random::<f64>());
        let k0 = libm::ceil(t0.max(0.0) * IMU_RATE) as usize;
        let k1 = (libm::floor(t1 * IMU_RATE) as usize).min(ni.saturating_sub(1));
        for (k, row) in disp.iter_mut().enumerate().take(k1 + 1).skip(k0) {
            let u = (k as f64 / IMU_RATE - t0) / (t1 - t0);
            let w = 0.5 - 0.5 * libm::cos(2.0 * PI * u);
            for (r, dv) in row.iter_mut().zip(&dir) {
                *r += gain * w * dv / norm;
            }
        }
    }

    // Head movements without chewing: no preferred axis, longer and slower.
    for (t0, t1) in sample_distractors(&mut rng, cfg.motion_distractor_rate, (0.3, 1.2), schedule, cfg.segment_duration) {
        let mut dir = [0.0f64; 6];
        for v in dir.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
        let gain = 0.5 + 1.5 * rng.random::<f64>();
        let k0 = libm::ceil(t0 * IMU_RATE) as usize;
        let k1 = (libm::floor(t1 * IMU_RATE) as usize).min(ni.saturating_sub(1));
        for (k, row) in disp.iter_mut().enumerate().take(k1 + 1).skip(k0) {
            let u = (k as f64 / IMU_RATE - t0) / (t1 - t0);
            let w = 0.5 - 0.5 * libm::cos(2.0 * PI * u);
            for (r, dv) in row.iter_mut().zip(&dir) {
                *r += gain * w * dv / norm;
            }
        }
    }

    let audio_sigma = if clean { 0.0 } else { cfg.noise_snr_db.sigma(AUDIO_REF_POWER) };
    let imu_sigma = if clean { 0.0 } else { cfg.noise_snr_db.sigma(ACCEL_REF_POWER) };
    let audio: Vec<f32> = audio
        .into_iter()
        .map(|a| {
            let z: f64 = StandardNormal.sample(&mut rng);
            quantize_pcm16(a + audio_sigma * z)
        })
        .collect();

    // Slow head-orientation drift (grazing moves the head more).
    let sway = match activity {
        Activity::Grazing => 0.15,
        Activity::Rumination => 0.05,
    };
    let (f_a, f_b) = (0.05 + 0.1 * rng.random::<f64>(), 0.2 + 0.2 * rng.random::<f64>());
    let mut imu = Vec::with_capacity(ni * ch);
    for (k, row) in disp.iter().enumerate() {
        let t = k as f64 / IMU_RATE;
        let (pitch, roll) = if clean && schedule.is_empty() {
            (0.0, 0.0)
        } else {
            (sway * libm::sin(2.0 * PI * f_a * t), 0.5 * sway * libm::sin(2.0 * PI * f_b * t))
        };
        let mut noise = |s: f64| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        };
        let g = if clean && schedule.is_empty() { 0.0 } else { GRAVITY };
        let acc = [
            g * libm::sin(pitch) + row[0],
            g * libm::sin(roll) + row[1],
            g * libm::cos(pitch) * libm::cos(roll) + row[2],
        ];
        for v in acc {
            imu.push((v + noise(imu_sigma)) as f32);
        }
        for v in &row[3..6] {
            imu.push((GYRO_SCALE * v + noise(GYRO_SCALE * imu_sigma)) as f32);
        }
        if ch == 9 {
            let b = if g == 0.0 { [0.0; 3] } else { EARTH_FIELD };
            let m = [
                b[0] + b[2] * pitch,
                b[1] + b[2] * roll,
                b[2] - b[0] * pitch + 0.5 * row[3],
            ];
            for v in m {
                imu.push((v + noise(imu_sigma)) as f32);
            }
        }
    }

    let rec = MultimodalRecording {
        segment_id: String::from(segment_id),
        audio,
        imu,
        imu_channels: ch,
        labels: schedule.to_vec(),
        activity,
    };
    rec.validate()?;
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub id: String,
    pub index: usize,
    pub activity: Activity,
    /// `None` = held-out test segment.
    pub fold: Option<usize>,
}

/// Which segments exist, their activity and split. Pure; no rendering.
pub fn plan_dataset(cfg: &SynthConfig) -> Result<Vec<SegmentPlan>> {
    cfg.validate()?;
    let n = cfg.n_segments;
    let n_train = n - cfg.n_test;
    let n_rum = libm::round(cfg.activity_mix * n as f64) as usize;
    let test_rum = (libm::round(cfg.activity_mix * cfg.n_test as f64) as usize).min(n_rum);
    let train_rum = n_rum - test_rum;
    if train_rum < cfg.n_folds {
        return Err(Error::Config(format!(
            "{train_rum} rumination training segments for {} folds",
            cfg.n_folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(segment_seed(cfg.seed, usize::MAX));
    let pick = |rng: &mut ChaCha8Rng, len: usize, k: usize| {
        let mut idx: Vec<usize> = (0..len).collect();
        shuffle(rng, &mut idx);
        let mut flag = vec![false; len];
        for &i in &idx[..k] {
            flag[i] = true;
        }
        flag
    };
    let train_flags = pick(&mut rng, n_train, train_rum);
    let test_flags = pick(&mut rng, cfg.n_test, test_rum);
    let act = |r: bool| if r { Activity::Rumination } else { Activity::Grazing };
    let mut plans: Vec<SegmentPlan> = (0..n)
        .map(|i| SegmentPlan {
            id: format!("seg{i:03}"),
            index: i,
            activity: if i < n_train { act(train_flags[i]) } else { act(test_flags[i - n_train]) },
            fold: None,
        })
        .collect();
    let train: Vec<(usize, Activity)> = plans[..n_train].iter().map(|p| (p.index, p.activity)).collect();
    let folds: FoldAssignment = kfold_split(&train, cfg.n_folds, cfg.seed)?;
    for (k, fold) in folds.folds.iter().enumerate() {
        for &i in fold {
            plans[i].fold = Some(k);
        }
    }
    Ok(plans)
}

/// Fisher-Yates.
pub(crate) fn shuffle<T, R: Rng>(rng: &mut R, v: &mut [T]) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Schedule + render one planned segment.
pub fn generate_segment(cfg: &SynthConfig, plan: &SegmentPlan) -> Result<MultimodalRecording> {
    let seed = segment_seed(cfg.seed, plan.index);
    let sched = sample_event_schedule(cfg, plan.activity, seed)?;
    render_segment(&sched, cfg, plan.activity, &plan.id, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(x: &[f32]) -> f64 {
        x.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    fn quiet() -> SynthConfig {
        SynthConfig { sound_distractor_rate: 0.0, motion_distractor_rate: 0.0, ..SynthConfig::default() }
    }

    #[test]
    fn distractors_stay_in_gaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let sched = sample_event_schedule(&cfg, Activity::Grazing, seed).unwrap();
            let d = sample_distractors(&mut rng, 0.5, (0.15, 0.6), &sched, cfg.segment_duration);
            for &(a, b) in &d {
                assert!(a >= 0.0 && b <= cfg.segment_duration && b - a >= 0.15 - 1e-12);
                assert!(sched.iter().all(|e| b <= e.onset || a >= e.offset), "{a} {b}");
            }
        }
        let cfg = SynthConfig { noise_snr_db: Snr::CLEAN, segment_duration: 20.0, ..SynthConfig::default() };
        let r = render_segment(&[], &cfg, Activity::Grazing, "x", 2).unwrap();
        assert!(energy(&r.audio) > 0.0 && r.imu.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn bite_durations_follow_table1() {
        let cfg = SynthConfig::default();
        let p = cfg.profile(EventClass::Bite).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d: Vec<f64> = (0..1000).map(|_| truncated_normal(&mut rng, p)).collect();
        let mean = d.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.33).abs() <= 0.03, "mean {mean}");
        assert!(d.iter().all(|&x| (0.115..=0.926).contains(&x)));
    }

    #[test]
    fn every_class_mean_within_three_standard_errors() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in &cfg.profiles {
            let n = 4000;
            let mean = (0..n).map(|_| truncated_normal(&mut rng, p)).sum::<f64>() / n as f64;
            let se = p.duration_sd / (n as f64).sqrt();
            assert!((mean - p.duration_mean).abs() < 3.0 * se, "{}: {mean}", p.class);
        }
    }

    #[test]
    fn rumination_schedule_is_pure() {
        let cfg = SynthConfig::default();
        let s = sample_event_schedule(&cfg, Activity::Rumination, 3).unwrap();
        assert!(!s.is_empty());
        assert!(s.iter().all(|e| e.class == EventClass::RuminationChew));
        let g = sample_event_schedule(&cfg, Activity::Grazing, 3).unwrap();
        assert!(g.iter().all(|e| e.class != EventClass::RuminationChew));
        assert_eq!(g, sample_event_schedule(&cfg, Activity::Grazing, 3).unwrap());
    }

    #[test]
    fn schedules_are_ordered_and_disjoint() {
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let s = sample_event_schedule(&cfg, Activity::Grazing, seed).unwrap();
            for w in s.windows(2) {
                assert!(w[0].offset < w[1].onset);
            }
            for e in &s {
                let p = cfg.profile(e.class).unwrap();
                assert!(e.duration() >= p.duration_min - 1e-6 && e.duration() <= p.duration_max + 1e-6);
            }
        }
    }

    #[test]
    fn infeasible_schedule_rejected() {
        let cfg = SynthConfig { segment_duration: 1.5, gap_min: 1.45, ..SynthConfig::default() };
        assert!(sample_event_schedule(&cfg, Activity::Grazing, 0).is_err());
        let cfg = SynthConfig { segment_duration: 0.9, ..SynthConfig::default() };
        assert!(sample_event_schedule(&cfg, Activity::Grazing, 0).is_err());
    }

    #[test]
    fn clean_empty_render_is_silent() {
        let cfg = SynthConfig { noise_snr_db: Snr::CLEAN, segment_duration: 5.0, ..quiet() };
        let r = render_segment(&[], &cfg, Activity::Grazing, "x", 1).unwrap();
        assert_eq!(r.audio.len(), 30_000);
        assert_eq!(r.imu_rows(), 500);
        assert!(r.audio.iter().all(|&v| v == 0.0));
        assert!(r.imu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bite_energy_dominates_gap_when_clean() {
        let cfg = SynthConfig { noise_snr_db: Snr::CLEAN, segment_duration: 5.0, ..quiet() };
        let ev = EventLabel::new(EventClass::Bite, 1.0, 1.33);
        let r = render_segment(&[ev], &cfg, Activity::Grazing, "x", 9).unwrap();
        let inside = energy(&r.audio[6000..7980]);
        let gap = energy(&r.audio[12000..13980]);
        assert!(inside >= 10.0 * gap.max(1e-12));
    }

    #[test]
    fn lower_snr_lowers_event_to_gap_ratio() {
        let ev = EventLabel::new(EventClass::GrazingChew, 1.0, 1.33);
        let ratio = |db: f64| {
            let cfg = SynthConfig { noise_snr_db: Snr::Db(db), segment_duration: 5.0, ..quiet() };
            let r = render_segment(&[ev], &cfg, Activity::Grazing, "x", 4).unwrap();
            energy(&r.audio[6000..7980]) / energy(&r.audio[12000..13980])
        };
        let (a, b, c) = (ratio(30.0), ratio(15.0), ratio(0.0));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn default_plan_matches_protocol() {
        let plans = plan_dataset(&SynthConfig::default()).unwrap();
        assert_eq!(plans.len(), 29);
        let test: Vec<_> = plans.iter().filter(|p| p.fold.is_none()).collect();
        assert_eq!(test.len(), 5);
        let mut sizes = [0usize; 5];
        let mut rum = [0usize; 5];
        for p in plans.iter().filter(|p| p.fold.is_some()) {
            let k = p.fold.unwrap();
            sizes[k] += 1;
            rum[k] += (p.activity == Activity::Rumination) as usize;
        }
        let mut s = sizes.to_vec();
        s.sort_unstable();
        assert_eq!(s, vec![4, 5, 5, 5, 5]);
        assert_eq!(rum, [1; 5]);
        assert_eq!(plans, plan_dataset(&SynthConfig::default()).unwrap());
    }

    #[test]
    fn too_few_rumination_segments() {
        let cfg = SynthConfig { activity_mix: 0.1, ..SynthConfig::default() };
        assert!(plan_dataset(&cfg).is_err());
        let cfg = SynthConfig { activity_mix: 1.5, ..SynthConfig::default() };
        assert!(plan_dataset(&cfg).is_err());
    }
}
