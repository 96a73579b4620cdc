//! Shared fixtures for the benchmarks.

use dcrec::data::{make_synthetic, preprocess};
use dcrec::{DcdtConfig, DcrecModel, SplitDataset, SyntheticKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Cycle dataset with `users` users over `items` items and sequences of `len`.
pub fn cycle_dataset(users: usize, items: usize, len: usize) -> SplitDataset {
    let log = make_synthetic(SyntheticKind::Cycle, users, items, len, 1).expect("valid generator");
    preprocess(&log, len, 5.min(len)).expect("valid lengths")
}

/// Freshly initialized model of the given width and depth.
pub fn model(dim: usize, blocks: usize, seq_len: usize, items: usize) -> DcrecModel {
    let cfg = DcdtConfig { dim, blocks, seq_len, ..Default::default() };
    DcrecModel::new(cfg, items, &mut ChaCha8Rng::seed_from_u64(0)).expect("valid config")
}
