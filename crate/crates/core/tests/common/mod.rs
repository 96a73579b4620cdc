//! Helpers shared by the integration tests.
#![allow(dead_code)]

use dcrec::data::{make_synthetic, preprocess, InteractionSequence};
use dcrec::trainer::{objective_gradients, objective_value, ObjectiveSettings, Perturbation};
use dcrec::{DcdtConfig, DcrecModel, ItemEmbeddingTable, NoiseSchedule, SplitDataset, SyntheticKind};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Tiny model with every tensor redrawn, so no gradient is trivially zero.
pub fn dense_model(cfg: DcdtConfig, items: usize, rng: &mut impl Rng) -> DcrecModel {
    let mut model = DcrecModel::new(cfg, items, rng).unwrap();
    for t in model.net.tensors_mut() {
        t.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    model
}

/// Worst per-tensor relative error between analytic gradients and central
/// differences, over every denoiser tensor and the non-padding table rows.
pub fn gradient_check(
    model: &mut DcrecModel,
    batch: &[InteractionSequence],
    sched: &NoiseSchedule,
    pert: &Perturbation,
    settings: &ObjectiveSettings,
) -> (f64, String) {
    let (_, grads) = objective_gradients(model, batch, sched, pert, settings).unwrap();
    let value = |m: &DcrecModel| objective_value(m, batch, sched, pert, settings).unwrap().total;
    let mut worst = (0.0, String::new());
    for i in 0..model.net.tensors().len() {
        let mut numeric = Vec::new();
        for j in 0..model.net.tensors()[i].len() {
            let orig = model.net.tensors()[i].as_slice().unwrap()[j];
            model.net.tensors_mut()[i].as_slice_mut().unwrap()[j] = orig + FD_STEP;
            let up = value(model);
            model.net.tensors_mut()[i].as_slice_mut().unwrap()[j] = orig - FD_STEP;
            let down = value(model);
            model.net.tensors_mut()[i].as_slice_mut().unwrap()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let e = relative_error(grads.net[i].as_slice().unwrap(), &numeric);
        if e > worst.0 {
            worst = (e, model.net.names()[i].clone());
        }
    }
    // Row 0 is the padding row, pinned at zero.
    let base = model.table.weights().clone();
    let (mut numeric, mut analytic) = (Vec::new(), Vec::new());
    for r in 1..base.nrows() {
        for c in 0..base.ncols() {
            let mut w = base.clone();
            w[[r, c]] += FD_STEP;
            model.table = ItemEmbeddingTable::from_weights(w.clone()).unwrap();
            let up = value(model);
            w[[r, c]] -= 2.0 * FD_STEP;
            model.table = ItemEmbeddingTable::from_weights(w).unwrap();
            let down = value(model);
            numeric.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grads.table[[r, c]]);
        }
    }
    model.table = ItemEmbeddingTable::from_weights(base).unwrap();
    let e = relative_error(&analytic, &numeric);
    if e > worst.0 {
        worst = (e, "item_embedding".into());
    }
    worst
}

/// Three short sequences over 20 items, one with padding.
pub fn tiny_batch() -> Vec<InteractionSequence> {
    vec![
        InteractionSequence { user: 0, history: vec![0, 4, 9], target: 13 },
        InteractionSequence { user: 1, history: vec![2, 7, 7], target: 20 },
        InteractionSequence { user: 2, history: vec![0, 0, 5], target: 1 },
    ]
}

pub fn synthetic(kind: SyntheticKind, users: usize, items: usize, len: usize, seed: u64) -> SplitDataset {
    preprocess(&make_synthetic(kind, users, items, len, seed).unwrap(), len, 5.min(len)).unwrap()
}
