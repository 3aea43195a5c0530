use jmfusion::checkpoint;
use jmfusion::dataset::*;
use jmfusion_core::fusion::{Arch, FusionModel, FusionSpec};
use jmfusion_core::nn::Precision;
use jmfusion_core::signals::{Activity, EventClass, EventLabel, MultimodalRecording};
use proptest::prelude::*;

fn recording() -> MultimodalRecording {
    let audio: Vec<f32> = (0..6000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
    let imu: Vec<f32> = (0..100 * 6).map(|i| (i as f32) * 0.125 - 3.0).collect();
    MultimodalRecording {
        segment_id: "seg000".into(),
        audio,
        imu,
        imu_channels: 6,
        labels: vec![
            EventLabel::new(EventClass::Bite, 0.1, 0.35),
            EventLabel::new(EventClass::GrazingChew, 0.5, 0.8125),
        ],
        activity: Activity::Grazing,
    }
}

#[test]
fn segment_files_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let rec = recording();
    let hashes = write_segment(d.path(), &rec, Some(2)).unwrap();
    assert_eq!(hashes.len(), 4);
    let (back, meta) = load_recording(d.path(), "seg000").unwrap();
    assert_eq!(meta.fold, Some(2));
    assert_eq!(back.imu, rec.imu);
    assert_eq!(back.labels, rec.labels);
    // 16-bit PCM: one quantization step
    for (a, b) in back.audio.iter().zip(&rec.audio) {
        assert!((a - b).abs() <= 1.0 / 32767.0, "{a} {b}");
    }
}

#[test]
fn label_tsv_skips_comments_and_rejects_bad_rows() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("l.tsv");
    std::fs::write(&p, "# onset offset class\n\n0.5\t0.7\tchew-bite\n").unwrap();
    assert_eq!(read_labels(&p).unwrap(), vec![EventLabel::new(EventClass::ChewBite, 0.5, 0.7)]);
    std::fs::write(&p, "0.5 0.7 chew-bite\n").unwrap();
    assert_eq!(read_labels(&p).unwrap_err().kind(), "format");
    std::fs::write(&p, "0.5\t0.7\tsnore\n").unwrap();
    assert_eq!(read_labels(&p).unwrap_err().kind(), "format");
}

#[test]
fn imu_csv_rejects_wrong_width() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("imu.csv");
    std::fs::write(&p, "t,ax,ay\n0,1,2\n").unwrap();
    assert_eq!(read_imu_csv(&p).unwrap_err().kind(), "format");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn imu_csv_is_lossless(vals in proptest::collection::vec(-1e4f32..1e4, 1..20)) {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("imu.csv");
        let imu: Vec<f32> = vals.iter().flat_map(|&v| [v; 9]).collect();
        write_imu_csv(&p, &imu, 9).unwrap();
        let (back, ch) = read_imu_csv(&p).unwrap();
        prop_assert_eq!(ch, 9);
        prop_assert_eq!(back, imu);
    }
}

#[test]
fn checkpoint_round_trips_at_both_precisions() {
    let d = tempfile::tempdir().unwrap();
    let m = FusionModel::<f32>::build(&FusionSpec::proposed(Arch::compact()), 3).unwrap();
    for p in [Precision::F32, Precision::F16] {
        let q = m.quantize_weights(p);
        let path = d.path().join(format!("m-{}.jmfc", p.name()));
        checkpoint::save(&path, &q.to_blob()).unwrap();
        let blob = checkpoint::load(&path).unwrap();
        assert_eq!(blob, q.to_blob());
        let payload = blob.payload_bytes();
        assert_eq!(payload, m.param_count() * p.bytes());
        let back = FusionModel::<f32>::from_blob(&blob).unwrap();
        assert_eq!(back.params(), q.params());
    }
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let d = tempfile::tempdir().unwrap();
    let m = FusionModel::<f32>::build(&FusionSpec::proposed(Arch::compact()), 3).unwrap();
    let bytes = checkpoint::encode(&m.to_blob());
    let p = d.path().join("x");
    for bad in [&b"NOPE"[..], &bytes[..bytes.len() - 1], &bytes[..20]] {
        assert_eq!(checkpoint::decode(bad, &p).unwrap_err().kind(), "format");
    }
}

#[test]
fn hashes_are_stable() {
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    assert_eq!(json_hash(&[1, 2]), json_hash(&[1, 2]));
}
