use dcrec::data::InteractionSequence;
use dcrec::eval::{evaluate, evaluate_rankings, hr_at_k, ndcg_at_k, EvalSettings};
use dcrec::experiment::sweep_steps;
use dcrec::sampler::{infer_next_item, select_inference_steps, InferenceConfig};
use dcrec::{DcdtConfig, DcrecModel, ExperimentConfig, ScheduleConfig, Variant};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_ranker_scores_one() {
    let targets: Vec<u32> = (1..=50).collect();
    let rankings: Vec<Vec<u32>> = targets.iter().map(|&t| (t..t + 10).collect()).collect();
    let users: Vec<u32> = (0..50).collect();
    let r = evaluate_rankings(&rankings, &targets, &users, &[1, 5, 10]).unwrap();
    for k in [1, 5, 10] {
        assert_eq!(r.hr(k), 1.0);
        assert_eq!(r.ndcg(k), 1.0);
    }
}

#[test]
fn uniform_ranker_hits_at_binomial_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let trials = 10_000;
    let mut ids: Vec<u32> = (1..=100).collect();
    let mut rankings = Vec::with_capacity(trials);
    let mut targets = Vec::with_capacity(trials);
    for _ in 0..trials {
        ids.shuffle(&mut rng);
        rankings.push(ids[..10].to_vec());
        targets.push(rng.random_range(1..=100));
    }
    let users: Vec<u32> = (0..trials as u32).collect();
    let r = evaluate_rankings(&rankings, &targets, &users, &[10]).unwrap();
    let sigma = (0.1 * 0.9 / trials as f64).sqrt();
    assert!((r.hr(10) - 0.1).abs() < 3.0 * sigma, "HR@10 {}", r.hr(10));
}

fn tiny_model(variant: Variant, seed: u64) -> DcrecModel {
    let cfg = DcdtConfig { dim: 8, blocks: 1, seq_len: 5, variant, ..Default::default() };
    DcrecModel::new(cfg, 30, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn evaluation_is_pure_in_seed_and_thread_count() {
    let model = tiny_model(Variant::Dcrec, 1);
    let sched = ScheduleConfig::default().build().unwrap();
    let split: Vec<InteractionSequence> = (0..40)
        .map(|u| InteractionSequence { user: u, history: vec![0, 1 + u % 29, 2, 3], target: 1 + (u * 7) % 30 })
        .collect();
    let base = EvalSettings { steps: 5, batch_size: 7, threads: 1, ..Default::default() };
    let a = evaluate(&model, &split, &sched, &base).unwrap();
    let b = evaluate(&model, &split, &sched, &EvalSettings { threads: 3, batch_size: 16, ..base.clone() }).unwrap();
    assert_eq!(a, b);
    assert!(a.hr(5) <= a.hr(10) && a.ndcg(5) <= a.ndcg(10));
    assert!(evaluate(&model, &[], &sched, &base).is_err());
}

#[test]
fn single_point_sweep_equals_evaluation() {
    let model = tiny_model(Variant::Dcrec, 4);
    let cfg = ExperimentConfig::default();
    let split: Vec<InteractionSequence> =
        (0..12).map(|u| InteractionSequence { user: u, history: vec![0, 0, 3, 1 + u], target: 2 + u }).collect();
    let points = sweep_steps(&model, &cfg, &split, &[cfg.steps], 1).unwrap();
    let report = evaluate(&model, &split, &cfg.schedule().unwrap(), &cfg.eval_settings(cfg.steps)).unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!((points[0].hr5, points[0].ndcg5), (report.hr(5), report.ndcg(5)));
    assert!(sweep_steps(&model, &cfg, &split, &[cfg.steps + 1], 1).is_err());
}

/// Without cross-attention or history-conditioned norms, the history reaches
/// the denoiser only through the initial state, which `δ = 0` removes.
#[test]
fn zero_delta_drops_history_from_initial_state() {
    let model = tiny_model(Variant::Icdm, 2);
    let sched = ScheduleConfig::default().build().unwrap();
    let cfg = InferenceConfig { steps: 5, delta: 0.0, k: 30, seed: 3 };
    let a = infer_next_item(&model, &[4, 9, 11, 2], &sched, &cfg).unwrap();
    let b = infer_next_item(&model, &[17, 1, 25, 6], &sched, &cfg).unwrap();
    assert_eq!(a, b);
    let cfg = InferenceConfig { delta: 0.5, ..cfg };
    let a = infer_next_item(&model, &[4, 9, 11, 2], &sched, &cfg).unwrap();
    let b = infer_next_item(&model, &[17, 1, 25, 6], &sched, &cfg).unwrap();
    assert_ne!(a, b);
    // Cross-attention still conditions the full model at δ = 0.
    let full = tiny_model(Variant::Dcrec, 2);
    let cfg = InferenceConfig { delta: 0.0, ..cfg };
    let a = infer_next_item(&full, &[4, 9, 11, 2], &sched, &cfg).unwrap();
    let b = infer_next_item(&full, &[17, 1, 25, 6], &sched, &cfg).unwrap();
    assert_ne!(a, b);
}

proptest! {
    #[test]
    fn ndcg_bounded_by_hr_and_monotone(perm in Just((1u32..=20).collect::<Vec<_>>()).prop_shuffle(), target in 1u32..=20, k in 1usize..20) {
        let (h, n) = (hr_at_k(&perm, target, k).unwrap(), ndcg_at_k(&perm, target, k).unwrap());
        prop_assert!(n <= h);
        prop_assert!(h <= hr_at_k(&perm, target, k + 1).unwrap());
        prop_assert!(n <= ndcg_at_k(&perm, target, k + 1).unwrap());
    }

    #[test]
    fn visited_steps_strictly_decrease(total in 1usize..200, frac in 0.0f64..1.0) {
        let count = 1 + ((total - 1) as f64 * frac) as usize;
        let steps = select_inference_steps(total, count).unwrap();
        prop_assert_eq!(steps.len(), count);
        prop_assert_eq!(steps[0], total);
        prop_assert!(steps.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(*steps.last().unwrap() >= 1);
        if count > 1 {
            prop_assert_eq!(*steps.last().unwrap(), 1);
        }
    }
}
