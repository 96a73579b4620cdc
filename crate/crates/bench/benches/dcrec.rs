use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcrec::dcdt::history_summary;
use dcrec::sampler::{infer_batch, InferenceConfig};
use dcrec::trainer::{train_step, Adam, AdamConfig, LossMask, ObjectiveSettings};
use dcrec::{ScheduleConfig, Tensor};
use dcrec_bench::{cycle_dataset, model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dcdt_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("dcdt_forward");
    for dim in [32, 128] {
        let m = model(dim, 2, 10, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Tensor::from_shape_fn((10, dim), |_| rng.random_range(-1.0..1.0));
        let h = Tensor::from_shape_fn((9, dim), |_| rng.random_range(-1.0..1.0));
        let mask = vec![false; 9];
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| m.net.predict(&s, 25, &h, &mask).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let data = cycle_dataset(500, 50, 10);
    let sched = ScheduleConfig::default().build().unwrap();
    let settings = ObjectiveSettings { lambda: 0.2, tau: 0.07, mask: LossMask::ALL };
    let batch: Vec<_> = data.train.iter().take(128).collect();
    let mut m = model(32, 2, 10, data.num_items());
    let mut opt = Adam::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    c.bench_function("train_step/batch128_d32", |b| {
        b.iter(|| train_step(&mut m, &mut opt, &batch, &sched, &settings, 1.0, &mut rng).unwrap())
    });
}

fn inference(c: &mut Criterion) {
    let data = cycle_dataset(500, 50, 10);
    let sched = ScheduleConfig::default().build().unwrap();
    let m = model(32, 2, 10, data.num_items());
    let histories: Vec<&[u32]> = data.test.iter().take(64).map(|s| s.history.as_slice()).collect();
    let streams: Vec<u64> = (0..histories.len() as u64).collect();
    let mut group = c.benchmark_group("infer_batch64");
    for steps in [5, 50] {
        let cfg = InferenceConfig { steps, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(steps), &steps, |b, _| {
            b.iter(|| infer_batch(&m, &sched, &histories, &streams, &cfg).unwrap())
        });
    }
    group.finish();
}

fn rank_items(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank_items");
    for items in [1_000, 20_000] {
        let m = model(128, 1, 10, items);
        let h = m.table.embed(&[1, 2, 3]).unwrap();
        let query = history_summary(&h, &[false; 3]);
        group.bench_with_input(BenchmarkId::from_parameter(items), &items, |b, _| {
            b.iter(|| m.table.rank_items(query.as_slice().unwrap(), 10).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dcdt_forward, training_step, inference, rank_items);
criterion_main!(benches);
