//! Hit ratio and NDCG with a single relevant item, and split-level evaluation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::InteractionSequence;
use crate::error::{Error, Result};
use crate::itemspace::ItemId;
use crate::model::DcrecModel;
use crate::sampler::{infer_batch, InferenceConfig};
use crate::schedule::NoiseSchedule;

fn check_cutoff(ranked: &[ItemId], k: usize) -> Result<()> {
    if k == 0 || k > ranked.len() {
        return Err(Error::InvalidCutoff { k, max: ranked.len() });
    }
    Ok(())
}

/// 1-based position of `target` in `ranked`.
pub fn target_rank(ranked: &[ItemId], target: ItemId) -> Option<usize> {
    ranked.iter().position(|&i| i == target).map(|p| p + 1)
}

pub fn hr_at_k(ranked: &[ItemId], target: ItemId, k: usize) -> Result<f64> {
    check_cutoff(ranked, k)?;
    Ok(if ranked[..k].contains(&target) { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(ranked: &[ItemId], target: ItemId, k: usize) -> Result<f64> {
    check_cutoff(ranked, k)?;
    Ok(match target_rank(&ranked[..k], target) {
        Some(r) => 1.0 / ((r + 1) as f64).log2(),
        None => 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAtK {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user: u32,
    pub target: ItemId,
    /// Rank within the returned list; `None` when absent or degenerate.
    pub rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub users: usize,
    /// Users whose predicted embedding had zero norm (scored as misses).
    pub degenerate: usize,
    pub metrics: Vec<MetricAtK>,
    #[serde(skip)]
    pub per_user: Vec<UserOutcome>,
}

impl EvalReport {
    pub fn metric(&self, k: usize) -> Option<&MetricAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn hr(&self, k: usize) -> f64 {
        self.metric(k).map_or(f64::NAN, |m| m.hr)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.metric(k).map_or(f64::NAN, |m| m.ndcg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("users: {}  degenerate: {}\n", self.users, self.degenerate);
        let _ = writeln!(s, "{:>6} {:>8} {:>8}", "K", "HR", "NDCG");
        for m in &self.metrics {
            let _ = writeln!(s, "{:>6} {:>8.4} {:>8.4}", m.k, m.hr, m.ndcg);
        }
        s
    }

    /// Per-user `user, target, rank` rows (rank 0 when missing).
    pub fn write_per_user_tsv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?;
        w.write_record(["user", "target", "rank"])?;
        for u in &self.per_user {
            w.write_record([u.user.to_string(), u.target.to_string(), u.rank.unwrap_or(0).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Aggregates ranked lists against targets. An empty list marks a
/// degenerate prediction and counts as a miss.
pub fn evaluate_rankings(
    rankings: &[Vec<ItemId>],
    targets: &[ItemId],
    users: &[u32],
    ks: &[usize],
) -> Result<EvalReport> {
    if rankings.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if rankings.len() != targets.len() || users.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rankings, {} targets, {} users",
            rankings.len(),
            targets.len(),
            users.len()
        )));
    }
    let mut sums = vec![(0.0, 0.0); ks.len()];
    let mut degenerate = 0;
    let mut per_user = Vec::with_capacity(rankings.len());
    for ((ranked, &target), &user) in rankings.iter().zip(targets).zip(users) {
        if ranked.is_empty() {
            degenerate += 1;
            per_user.push(UserOutcome { user, target, rank: None });
            continue;
        }
        for (sum, &k) in sums.iter_mut().zip(ks) {
            sum.0 += hr_at_k(ranked, target, k)?;
            sum.1 += ndcg_at_k(ranked, target, k)?;
        }
        per_user.push(UserOutcome { user, target, rank: target_rank(ranked, target) });
    }
    let n = rankings.len();
    let metrics = ks
        .iter()
        .zip(sums)
        .map(|(&k, (hr, ndcg))| MetricAtK { k, hr: hr / n as f64, ndcg: ndcg / n as f64, count: n })
        .collect();
    Ok(EvalReport { users: n, degenerate, metrics, per_user })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Visited reverse steps `T′`.
    pub steps: usize,
    pub delta: f64,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub batch_size: usize,
    /// Worker threads; `0` uses the available parallelism.
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { steps: 50, delta: 0.1, seed: 0, ks: vec![5, 10], batch_size: 256, threads: 0 }
    }
}

/// Ranked item lists (length `max(ks)`) for every example of `split`.
/// Example `i` draws its noise from stream `i`.
pub fn rank_split(
    model: &DcrecModel,
    split: &[InteractionSequence],
    sched: &NoiseSchedule,
    settings: &EvalSettings,
) -> Result<Vec<Vec<ItemId>>> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let k = settings.ks.iter().copied().max().unwrap_or(1).min(model.table.num_items());
    let cfg = InferenceConfig { steps: settings.steps, delta: settings.delta, k, seed: settings.seed };
    let batch = settings.batch_size.max(1);
    let chunks: Vec<(usize, &[InteractionSequence])> =
        split.chunks(batch).enumerate().map(|(i, c)| (i * batch, c)).collect();
    let threads = match settings.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(chunks.len());

    let run = |(offset, chunk): &(usize, &[InteractionSequence])| -> Result<Vec<Vec<ItemId>>> {
        let histories: Vec<&[ItemId]> = chunk.iter().map(|s| s.history.as_slice()).collect();
        let streams: Vec<u64> = (0..chunk.len()).map(|i| (offset + i) as u64).collect();
        let ranked = infer_batch(model, sched, &histories, &streams, &cfg)?;
        Ok(ranked.into_iter().map(|r| r.into_iter().map(|(id, _)| id).collect()).collect())
    };

    let mut results: Vec<Option<Result<Vec<Vec<ItemId>>>>> = (0..chunks.len()).map(|_| None).collect();
    if threads <= 1 {
        for (slot, c) in results.iter_mut().zip(&chunks) {
            *slot = Some(run(c));
        }
    } else {
        std::thread::scope(|scope| {
            let per = chunks.len().div_ceil(threads);
            for (slots, work) in results.chunks_mut(per).zip(chunks.chunks(per)) {
                let run = &run;
                scope.spawn(move || {
                    for (slot, c) in slots.iter_mut().zip(work) {
                        *slot = Some(run(c));
                    }
                });
            }
        });
    }
    let mut out = Vec::with_capacity(split.len());
    for r in results {
        out.extend(r.expect("every chunk ran")?);
    }
    Ok(out)
}

/// Runs inference for every example and aggregates HR and NDCG at each K.
pub fn evaluate(
    model: &DcrecModel,
    split: &[InteractionSequence],
    sched: &NoiseSchedule,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    for &k in &settings.ks {
        if k == 0 || k > model.table.num_items() {
            return Err(Error::InvalidCutoff { k, max: model.table.num_items() });
        }
    }
    let rankings = rank_split(model, split, sched, settings)?;
    let targets: Vec<ItemId> = split.iter().map(|s| s.target).collect();
    let users: Vec<u32> = split.iter().map(|s| s.user).collect();
    evaluate_rankings(&rankings, &targets, &users, &settings.ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_ratio_boundaries() {
        let ranked = [9, 8, 7, 6, 5, 4, 3];
        assert_eq!(hr_at_k(&ranked, 9, 5).unwrap(), 1.0);
        assert_eq!(hr_at_k(&ranked, 4, 5).unwrap(), 0.0);
        assert_eq!(hr_at_k(&ranked, 5, 5).unwrap(), 1.0);
        assert!(hr_at_k(&ranked, 5, 8).is_err());
    }

    #[test]
    fn ndcg_values() {
        let ranked: Vec<ItemId> = (1..=12).collect();
        assert_eq!(ndcg_at_k(&ranked, 1, 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&ranked, 3, 10).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&ranked, 11, 10).unwrap(), 0.0);
        assert!(ndcg_at_k(&ranked, 1, 13).is_err());
    }

    #[test]
    fn degenerate_rows_count_as_misses() {
        let r = evaluate_rankings(&[vec![], vec![2, 1]], &[1, 1], &[0, 1], &[1, 2]).unwrap();
        assert_eq!(r.degenerate, 1);
        assert_eq!(r.hr(1), 0.0);
        assert_eq!(r.hr(2), 0.5);
        assert!(evaluate_rankings(&[], &[], &[], &[1]).is_err());
    }
}
