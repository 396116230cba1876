mod common;

use common::*;
use grouplift::config::TrainConfig;
use grouplift::data::{generate, read_csv, write_labeled_csv, LabeledDomain, SyntheticSpec, UnlabeledDomain};
use grouplift::multilabel::{train_mnet, LabelMatrix, MultiLabelModel, MnetRun};
use grouplift::nn::Checkpoint;
use grouplift::transfer::{train_tnet, TransferTask};

fn shifted_pair(seed: u64) -> (LabeledDomain, UnlabeledDomain) {
    let spec = SyntheticSpec {
        samples: 600,
        target_samples: 300,
        shift: 1.5,
        rotation_deg: 15.0,
        seed,
        ..SyntheticSpec::default()
    };
    generate(&spec).unwrap()
}

fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed,
        epochs,
        learning_rate: 0.1,
        trunk_units: vec![16, 16],
        head_units: vec![8, 8],
        ..TrainConfig::default()
    }
}

fn mnet(data: &LabeledDomain, cfg: &TrainConfig) -> MnetRun {
    let weights = vec![1.0 / data.names.len() as f64; data.names.len()];
    let model = MultiLabelModel::initialize(data.features.cols(), &data.names, weights, cfg).unwrap();
    train_mnet(model, data, cfg).unwrap()
}

#[test]
fn mnet_training_is_deterministic() {
    let (src, _) = shifted_pair(0);
    let cfg = small_config(7, 3);
    let a = mnet(&src, &cfg);
    let b = mnet(&src, &cfg);
    assert_eq!(a.model.parameters(), b.model.parameters());
    assert_eq!(a.epochs, b.epochs);
    let c = mnet(&src, &small_config(8, 3));
    assert_ne!(a.model.parameters(), c.model.parameters());
}

#[test]
fn trained_checkpoint_round_trips() {
    let (src, _) = shifted_pair(1);
    let run = mnet(&src, &small_config(1, 2));
    let text = run.model.to_checkpoint(1, "h").to_text();
    let back = MultiLabelModel::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
    assert_eq!(back.parameters(), run.model.parameters());
    assert_eq!(back.loss_weights(), run.model.loss_weights());
    assert_eq!(back.attribute_names(), run.model.attribute_names());
    let pa = run.model.predict(&src.features).unwrap();
    let pb = back.predict(&src.features).unwrap();
    assert_eq!(pa.decisions, pb.decisions);
}

#[test]
fn target_labels_never_influence_adaptation() {
    let (src, tgt) = shifted_pair(2);
    let cfg = small_config(2, 3);
    let m = mnet(&src, &cfg).model;
    let with = TransferTask::build(&m, &src, "a0", tgt.clone(), "a1", &cfg).unwrap();
    let without = TransferTask::build(&m, &src, "a0", tgt.without_labels(), "a1", &cfg).unwrap();
    let a = train_tnet(&m, &with, &cfg).unwrap();
    let b = train_tnet(&m, &without, &cfg).unwrap();
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(a.model.parameters()), bits(b.model.parameters()));
    assert!(a.epochs.iter().all(|e| e.target_accuracy.is_some()));
    assert!(b.epochs.iter().all(|e| e.target_accuracy.is_none()));
}

#[test]
fn frozen_prefix_stays_fixed() {
    let (src, tgt) = shifted_pair(3);
    let mut cfg = small_config(3, 2);
    let m = mnet(&src, &cfg).model;
    cfg.freeze_depth = Some(1);
    let task = TransferTask::build(&m, &src, "a0", tgt, "a1", &cfg).unwrap();
    let run = train_tnet(&m, &task, &cfg).unwrap();
    let before = &m.trunk.layers()[0];
    let after = &run.model.trunk.layers()[0];
    assert_eq!(before.weights().data(), after.weights().data());
    assert_eq!(before.bias(), after.bias());
    assert_ne!(m.trunk.layers()[1].weights().data(), run.model.trunk.layers()[1].weights().data());
}

#[test]
fn adaptation_reduces_the_discrepancy() {
    let handles: Vec<_> = (0..5u64)
        .map(|seed| {
            std::thread::spawn(move || {
                let (src, tgt) = shifted_pair(seed);
                let cfg = small_config(seed, 8);
                let m = mnet(&src, &cfg).model;
                let task = TransferTask::build(&m, &src, "a0", tgt, "a1", &cfg).unwrap();
                let run = train_tnet(&m, &task, &cfg).unwrap();
                (run.epochs[0].mmd_sum(), run.epochs.last().unwrap().mmd_sum())
            })
        })
        .collect();
    for (seed, h) in handles.into_iter().enumerate() {
        let (first, last) = h.join().unwrap();
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn logged_losses_decompose() {
    let (src, tgt) = shifted_pair(4);
    let mut cfg = small_config(4, 3);
    let m = mnet(&src, &cfg).model;
    cfg.alpha = 0.37;
    cfg.mmd_multipliers = Some(vec![0.5, 1.0, 2.0]);
    let task = TransferTask::build(&m, &src, "a0", tgt, "a1", &cfg).unwrap();
    let run = train_tnet(&m, &task, &cfg).unwrap();
    for e in &run.epochs {
        let parts: f64 = e
            .mmd_components
            .iter()
            .zip(&task.multipliers)
            .map(|(d, w)| d * w)
            .sum::<f64>()
            + 0.37 * e.source_softmax;
        assert!((e.total - parts).abs() <= 1e-9 * e.total.abs().max(1.0), "{} vs {parts}", e.total);
    }
}

#[test]
fn zero_epochs_returns_the_restricted_model() {
    let (src, tgt) = shifted_pair(5);
    let mut cfg = small_config(5, 2);
    let m = mnet(&src, &cfg).model;
    cfg.epochs = 0;
    let task = TransferTask::build(&m, &src, "a2", tgt, "a2", &cfg).unwrap();
    let run = train_tnet(&m, &task, &cfg).unwrap();
    assert!(run.epochs.is_empty());
    assert_eq!(run.model.parameters(), m.restrict_to(2).unwrap().parameters());
}

#[test]
fn csv_values_round_trip_exactly() {
    let mut r = rng(12);
    let x = normal(20, 5, &mut r);
    let mut data = x.into_data();
    data[0] = 0.1 + 0.2;
    data[1] = 1e-300;
    data[2] = -123456.789e10;
    let x = grouplift::nn::Matrix::from_vec(20, 5, data).unwrap();
    let y = LabelMatrix::from_columns(&[random_labels(20, &mut r), random_labels(20, &mut r)]).unwrap();
    let d = LabeledDomain::new(x, y, vec!["p".into(), "q".into()]).unwrap();
    let mut buf = Vec::new();
    write_labeled_csv(&mut buf, &d).unwrap();
    let back = read_csv(buf.as_slice()).unwrap().into_labeled().unwrap();
    let bits = |m: &grouplift::nn::Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.features), bits(&d.features));
    assert_eq!(back.labels, d.labels);
    assert_eq!(back.names, d.names);
}
