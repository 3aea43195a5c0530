//! The numeric core end to end, without any file IO: generate, window,
//! train, predict, reconstruct events, score, quantize.

use jmfusion_core::evalkit::{compute_metrics, match_events, windows_to_events};
use jmfusion_core::fusion::{Arch, FusionModel, FusionSpec};
use jmfusion_core::nn::Precision;
use jmfusion_core::signals::{sequences_for, EventClass, SEQ_LEN};
use jmfusion_core::synth::{generate_segment, plan_dataset, SynthConfig};
use jmfusion_core::training::{argmax, predict_proba, train_fold, TrainConfig, TrainLog};
use jmfusion_core::{MultimodalRecording, WindowSequence};

fn recordings() -> Vec<MultimodalRecording> {
    let cfg = SynthConfig { segment_duration: 10.0, ..SynthConfig::default() };
    let plans = plan_dataset(&cfg).unwrap();
    plans.iter().take(4).map(|p| generate_segment(&cfg, p).unwrap()).collect()
}

fn train(spec: &FusionSpec, train: &[WindowSequence], val: &[WindowSequence]) -> (FusionModel<f32>, TrainLog) {
    let cfg = TrainConfig { epochs_max: 3, early_stop_patience: 2, seed: 5, ..TrainConfig::default() };
    let mut model = FusionModel::<f32>::build(spec, 11).unwrap();
    let mut rows = 0;
    let log = train_fold(&mut model, train, val, &cfg, &mut |_| rows += 1).unwrap();
    assert_eq!(rows, log.epochs.len());
    (model, log)
}

#[test]
fn generate_train_predict_score_quantize() {
    let spec = FusionSpec::proposed(Arch::compact());
    let geo = spec.geometry().unwrap();
    let recs = recordings();
    let seqs: Vec<Vec<WindowSequence>> = recs.iter().map(|r| sequences_for(r, geo, SEQ_LEN).unwrap()).collect();
    let train_set: Vec<WindowSequence> = seqs[..3].concat();
    let val_set = seqs[3].clone();

    let (mut model, log) = train(&spec, &train_set, &val_set);
    assert!(!log.epochs.is_empty() && log.epochs.len() <= 3);
    assert!(log.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
    assert!(log.epochs.iter().all(|e| e.val_loss >= log.best_val_loss));
    assert!(log.epochs.last().unwrap().train_loss < log.epochs[0].train_loss);

    // same seeds, same bits
    let (_, again) = train(&spec, &train_set, &val_set);
    assert_eq!(format!("{:?}", log.epochs), format!("{:?}", again.epochs));

    let probs = predict_proba(&mut model, &val_set, 2).unwrap();
    let labels: Vec<usize> = probs.iter().flatten().map(|d| argmax(d)).collect();
    assert_eq!(labels.len(), geo.count(recs[3].duration()));
    let starts: Vec<f64> = (0..labels.len()).map(|i| geo.start(i)).collect();
    let predicted = windows_to_events(&labels, &starts, geo.window);
    let m = match_events(&recs[3].labels, &predicted, 0.3).unwrap();
    let report = compute_metrics(&m.counts);
    for c in EventClass::ALL {
        let s = report.class(c);
        let n_ref = recs[3].labels.iter().filter(|e| e.class == c).count();
        let n_pred = predicted.iter().filter(|e| e.class == c).count();
        assert_eq!((s.tp + s.fn_, s.tp + s.fp), (n_ref, n_pred), "{}", c.name());
    }

    let mut q = model.quantize_weights(Precision::F16);
    let qprobs = predict_proba(&mut q, &val_set, 2).unwrap();
    let worst = probs.iter().flatten().zip(qprobs.iter().flatten()).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0f32, f32::max);
    assert!(worst < 0.05, "f16 weights moved a probability by {worst}");
}
