//! The 2-channel backbone must be able to fit a handful of clean frames.

use damr::channel::{apply_channel, ReceiverChannelState};
use damr::dataset::{DatasetRecord, Split};
use damr::experiment::train_receiver;
use damr::modulation::{generate_frame, ModulationType, ShapingConfig};
use damr::nn::{evaluate_loss, TrainConfig};
use damr::experiment::ReceiverFrames;

#[test]
fn backbone_memorizes_one_frame_per_class() {
    let state = ReceiverChannelState::identity(30.0);
    let records: Vec<DatasetRecord> = ModulationType::ALL
        .iter()
        .enumerate()
        .map(|(k, &label)| {
            let tx = generate_frame(label, &ShapingConfig::default(), 100 + k as u64);
            DatasetRecord {
                label,
                snr_db: vec![30.0],
                frames: vec![apply_channel(&tx, &state, k as u64)],
            }
        })
        .collect();
    let split = Split {
        train: (0..8).collect(),
        test: Vec::new(),
        val: Vec::new(),
    };
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 200,
        patience: None,
        seed: 4,
        ..TrainConfig::default()
    };
    let (net, report) = train_receiver(&records, &split, 0, &cfg, &mut |_| {}).unwrap();
    let (loss, accuracy) = evaluate_loss(&net, &ReceiverFrames { records: &records, rx: 0 }, &split.train).unwrap();
    assert_eq!(accuracy, 1.0, "final loss {loss}");
    assert!(report.history.last().unwrap().train_loss < report.history[0].train_loss);
}
