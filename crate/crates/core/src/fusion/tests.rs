use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::{count_flops, count_params, FlopConvention, Mode, Precision};
use crate::signals::{build_sequences, Frame, WindowSequence, N_CLASSES};

fn full(a: Ablation) -> FusionSpec {
    FusionSpec::proposed(Arch::full()).with_ablation(a)
}

#[test]
fn full_width_parameter_counts() {
    let want = [
        (Ablation::None, 11_704_478),
        (Ablation::SoundOnly, 11_678_470),
        (Ablation::ImuOnly, 11_605_214),
        (Ablation::AccelOnly, 11_605_214),
        (Ablation::GyroOnly, 11_605_214),
        (Ablation::NoRnn, 298_142),
        (Ablation::SingleDense, 11_531_998),
    ];
    for (a, n) in want {
        assert_eq!(count_params(&describe(&full(a)).unwrap()), n, "{}", a.name());
    }
}

#[test]
fn built_model_agrees_with_graph() {
    let spec = full(Ablation::None);
    let m = FusionModel::<f32>::build(&spec, 0).unwrap();
    assert_eq!(m.param_count(), 11_704_478);
    let q = m.quantize_weights(Precision::F16);
    assert_eq!(q.param_count(), m.param_count());
    assert_eq!(count_params(&q.graph()), count_params(&m.graph()));
    let (b32, b16) = (m.to_blob().payload_bytes(), q.to_blob().payload_bytes());
    assert_eq!(b32, 4 * 11_704_478);
    assert_eq!(2 * b16, b32);
}

#[test]
fn flops_are_layer_sums() {
    let g = describe(&full(Ablation::None)).unwrap();
    let c = FlopConvention::default();
    let total: u64 = g.layers.iter().map(|l| l.flops(c)).sum();
    assert_eq!(count_flops(&g, c), total);
    let with_bias = count_flops(&g, FlopConvention { bias: true, ..c });
    assert!(with_bias > total);
}

#[test]
fn spec_validation() {
    let s = FusionSpec::proposed(Arch::compact()).with_level(FusionLevel::Data).with_ablation(Ablation::NoRnn);
    assert!(s.validate().is_err());
    let mut s = FusionSpec::proposed(Arch::compact());
    s.meta = Some(MetaSpec::default());
    assert!(s.validate().is_err());
    let d = FusionSpec::proposed(Arch::compact()).with_level(FusionLevel::Decision);
    assert!(d.validate().is_ok());
    assert!(FusionModel::<f32>::build(&d, 0).is_err());
    let g = describe(&d).unwrap();
    assert!(g.layers.iter().any(|l| l.kind == "meta-classifier"));
}

#[test]
fn two_head_and_data_level_structure() {
    let s = FusionSpec::proposed(Arch::compact()).with_level(FusionLevel::Feature2Head);
    let p = plan::plan(&s).unwrap();
    assert_eq!(p.heads.len(), 2);
    assert_eq!(p.heads[1].in_shape, (6, 30));
    let three = plan::plan(&FusionSpec::proposed(Arch::compact())).unwrap();
    assert_eq!(three.heads.len(), 3);
    // one IMU head carrying both sensors is as wide as the two per-sensor heads
    assert_eq!(p.heads[1].out_width(), three.heads[1].out_width() + three.heads[2].out_width());
    let d = plan::plan(&s.clone().with_level(FusionLevel::Data)).unwrap();
    assert_eq!(d.heads.len(), 1);
    assert_eq!(d.heads[0].in_shape, (7, 1800));
    let mut all = s.with_level(FusionLevel::Data);
    all.signal_set = SignalSet::AllRaw;
    assert_eq!(plan::plan(&all).unwrap().heads[0].in_shape, (10, 1800));
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize, mag: bool) -> Vec<Frame> {
    (0..n)
        .map(|j| Frame {
            start: j as f64 * 0.15,
            audio: (0..1800).map(|_| rng.random_range(-0.5..0.5)).collect(),
            accel: (0..90).map(|_| rng.random_range(-2.0..2.0)).collect(),
            gyro: (0..90).map(|_| rng.random_range(-2.0..2.0)).collect(),
            mag: mag.then(|| (0..90).map(|_| rng.random_range(-40.0..40.0)).collect()),
        })
        .collect()
}

fn random_seqs(seed: u64, n_seq: usize, windows: usize, l: usize, mag: bool) -> Vec<WindowSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_seq)
        .flat_map(|_| {
            let f = random_frames(&mut rng, windows, mag);
            let t = (0..windows).map(|_| rng.random_range(0..N_CLASSES)).collect();
            build_sequences(f, t, l).unwrap()
        })
        .collect()
}

fn all_level_specs() -> Vec<FusionSpec> {
    let base = FusionSpec::proposed(Arch::compact());
    let mut v = vec![
        base.clone().with_level(FusionLevel::Data),
        base.clone().with_level(FusionLevel::Feature2Head),
        base.clone(),
    ];
    for a in Ablation::ALL {
        v.push(base.clone().with_ablation(a));
    }
    let mut mags = base.clone();
    mags.signal_set = SignalSet::AudioMagnitudes;
    v.push(mags);
    let mut raw = base.clone();
    raw.signal_set = SignalSet::AllRaw;
    v.push(raw);
    for c in [Combine::Average, Combine::Maximum, Combine::Multiply] {
        let mut s = base.clone();
        s.arch.combine = c;
        v.push(s);
    }
    v
}

#[test]
fn outputs_are_distributions_for_every_level() {
    let seqs = random_seqs(1, 2, 10, 8, true);
    let refs: Vec<&WindowSequence> = seqs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for spec in all_level_specs() {
        let mut m = FusionModel::<f32>::build(&spec, 2).unwrap();
        m.adapt_normalization(&refs).unwrap();
        let p = m.forward(&refs, Mode::Eval, &mut rng).unwrap();
        assert_eq!(p.shape, vec![refs.len(), 8, N_CLASSES], "{}", spec.label());
        for row in p.data.chunks(N_CLASSES) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5, "{}", spec.label());
        }
        // an all-zero batch (padding only) still gives finite outputs
        let z = WindowSequence {
            frames: seqs[0].frames.iter().map(Frame::zeros_like).collect(),
            targets: vec![4; 8],
            mask: vec![false; 8],
        };
        assert!(m.forward(&[&z], Mode::Eval, &mut rng).unwrap().all_finite());
    }
}

#[test]
fn batch_permutation_equivariance() {
    let seqs = random_seqs(3, 3, 6, 6, false);
    let mut m = FusionModel::<f32>::build(&FusionSpec::proposed(Arch::compact()), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = m.forward(&[&seqs[0], &seqs[1], &seqs[2]], Mode::Eval, &mut rng).unwrap();
    let b = m.forward(&[&seqs[2], &seqs[0], &seqs[1]], Mode::Eval, &mut rng).unwrap();
    let w = 6 * N_CLASSES;
    assert_eq!(a.data[..w], b.data[w..2 * w]);
    assert_eq!(a.data[w..2 * w], b.data[2 * w..]);
    assert_eq!(a.data[2 * w..], b.data[..w]);
}

#[test]
fn f16_quantization_changes_outputs_slightly() {
    let seqs = random_seqs(4, 2, 8, 8, false);
    let refs: Vec<&WindowSequence> = seqs.iter().collect();
    let mut m = FusionModel::<f32>::build(&FusionSpec::proposed(Arch::compact()), 5).unwrap();
    m.adapt_normalization(&refs).unwrap();
    let mut q = m.quantize_weights(Precision::F16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = m.forward(&refs, Mode::Eval, &mut rng).unwrap();
    let b = q.forward(&refs, Mode::Eval, &mut rng).unwrap();
    let diff = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(diff < 1e-2, "{diff}");
    let blob = q.to_blob();
    let mut back = FusionModel::from_blob(&blob).unwrap();
    assert_eq!(back.forward(&refs, Mode::Eval, &mut rng).unwrap(), b);
    assert_eq!(back.precision, Precision::F16);
}
