mod common;

use dcrec::trainer::{train, train_step, Adam, AdamConfig, LossMask, ObjectiveSettings};
use dcrec::{DcdtConfig, DcrecModel, ExperimentConfig, ScheduleConfig, SyntheticKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        dim: 16,
        blocks: 1,
        max_len: 8,
        batch_size: 64,
        max_epochs: 3,
        inference_steps: 5,
        val_inference_steps: 2,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_batch_same_record() {
    let data = common::synthetic(SyntheticKind::Cycle, 40, 20, 8, 1);
    let sched = ScheduleConfig::default().build().unwrap();
    let batch: Vec<_> = data.train.iter().take(16).collect();
    let settings = ObjectiveSettings { lambda: 0.1, tau: 0.07, mask: LossMask::ALL };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = DcdtConfig { dim: 16, blocks: 1, seq_len: 8, ..Default::default() };
        let mut model = DcrecModel::new(cfg, data.num_items(), &mut rng).unwrap();
        let mut opt = Adam::new(AdamConfig::default());
        let rec = train_step(&mut model, &mut opt, &batch, &sched, &settings, 1.0, &mut rng).unwrap();
        (rec, model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn overfits_one_batch() {
    let data = common::synthetic(SyntheticKind::Cycle, 40, 20, 8, 2);
    let sched = ScheduleConfig::default().build().unwrap();
    let batch: Vec<_> = data.train.iter().take(32).collect();
    let settings = ObjectiveSettings { lambda: 0.1, tau: 0.07, mask: LossMask::ALL };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = DcdtConfig { dim: 16, blocks: 1, seq_len: 8, ..Default::default() };
    let mut model = DcrecModel::new(cfg, data.num_items(), &mut rng).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    let first = train_step(&mut model, &mut opt, &batch, &sched, &settings, 1.0, &mut rng).unwrap();
    let mut last = first.clone();
    for _ in 1..200 {
        last = train_step(&mut model, &mut opt, &batch, &sched, &settings, 1.0, &mut rng).unwrap();
    }
    assert!(last.total < first.total, "step 1 {} vs step 200 {}", first.total, last.total);
}

#[test]
fn training_is_reproducible_and_logged_in_order() {
    let data = common::synthetic(SyntheticKind::Cycle, 60, 20, 8, 3);
    let a = train(&small(), &data).unwrap();
    let b = train(&small(), &data).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    assert_eq!(a.log.len(), 3);
    for w in a.log.windows(2) {
        assert!(w[1].loss.epoch > w[0].loss.epoch && w[1].loss.step > w[0].loss.step);
    }
    for row in &a.log {
        let l = &row.loss;
        let expected = l.prior + (1.0 - l.lambda) * l.recon + l.lambda * l.rank;
        assert!((l.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert!(l.prior >= 0.0 && l.recon >= 0.0 && l.rank >= 0.0);
        assert!(row.val_hr10.is_some());
    }
}

#[test]
fn flat_validation_exhausts_patience() {
    let data = common::synthetic(SyntheticKind::Cycle, 60, 20, 8, 4);
    // A vanishing learning rate leaves validation metrics unchanged.
    let cfg = ExperimentConfig { lr: 1e-14, max_epochs: 20, patience: 5, ..small() };
    let out = train(&cfg, &data).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.best_epoch, 0);
    assert_eq!(out.log.len(), 6);
}

#[test]
fn empty_training_split_is_rejected() {
    let mut data = common::synthetic(SyntheticKind::Cycle, 10, 20, 8, 5);
    data.train.clear();
    assert!(train(&small(), &data).is_err());
}
