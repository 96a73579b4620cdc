//! Train-and-evaluate pipelines, ablation suites and inference-step sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{ingest_interactions, preprocess, InteractionSequence, SplitDataset};
use crate::dcdt::Variant;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::DcrecModel;
use crate::trainer::{train, train_with, write_log_tsv, EpochLog, LossTerm, TrainOutcome};

/// Loads a preprocessed dataset directory, or preprocesses a raw
/// interaction file with the configured length limits.
pub fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<SplitDataset> {
    if path.is_dir() {
        SplitDataset::load(path)
    } else {
        preprocess(&ingest_interactions(path)?, cfg.max_len, cfg.min_len)
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains, evaluates on the test split and writes `config.json`,
/// `checkpoint/`, `train_log.tsv`, `report.json`, `report.txt` and
/// `per_user.tsv` into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &SplitDataset, out: &Path) -> Result<RunSummary> {
    run_experiment_with(cfg, data, out, |_| {})
}

/// [`run_experiment`] with a per-epoch callback.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    data: &SplitDataset,
    out: &Path,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    let outcome = train_with(cfg, data, on_epoch)?;
    outcome.model.save(&out.join("checkpoint"))?;
    write_log_tsv(&out.join("train_log.tsv"), &outcome.log)?;
    let report = evaluate(&outcome.model, &data.test, &cfg.schedule()?, &cfg.eval_settings(cfg.inference_steps))?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("report.txt"), report.to_table())?;
    report.write_per_user_tsv(&out.join("per_user.tsv"))?;
    Ok(RunSummary { dir: out.to_path_buf(), outcome, report })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Each loss term alone against the combined objective.
    Loss,
    /// History merged into self-attention, plain layer norm, and the full model.
    Module,
    /// Implicit-only, explicit-only and dual conditioning.
    Conditioning,
    /// Noise on the whole sequence against noise on the target row only.
    Noise,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(Self::Loss),
            "module" => Ok(Self::Module),
            "conditioning" => Ok(Self::Conditioning),
            "noise" => Ok(Self::Noise),
            other => Err(Error::InvalidConfig(format!(
                "unknown suite {other:?}; expected loss, module, conditioning or noise"
            ))),
        }
    }
}

/// Named configurations of a suite, each derived from `base` by changing
/// only the suite's flag.
pub fn suite_configs(suite: Suite, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let with_variant = |v: Variant| (v.name().to_string(), ExperimentConfig { variant: v, ..base.clone() });
    let with_mask = |name: &str, terms: &[LossTerm]| {
        (name.to_string(), ExperimentConfig { loss_mask: terms.to_vec(), ..base.clone() })
    };
    match suite {
        Suite::Loss => vec![
            with_mask("L_T", &[LossTerm::Prior]),
            with_mask("L_t", &[LossTerm::Recon]),
            with_mask("L_z", &[LossTerm::Rank]),
            with_mask("combined", &[LossTerm::Prior, LossTerm::Recon, LossTerm::Rank]),
        ],
        Suite::Module => [Variant::SingleAttn, Variant::NoCondln, Variant::Dcrec].map(with_variant).to_vec(),
        Suite::Conditioning => [Variant::Icdm, Variant::Ecdm, Variant::Dcrec].map(with_variant).to_vec(),
        Suite::Noise => [Variant::Dcrec, Variant::PartialNoise].map(with_variant).to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    /// Config keys that differ from the base configuration.
    pub flags: Vec<String>,
    /// Per-seed `(HR@5, NDCG@5, HR@10, NDCG@10)`.
    pub runs: Vec<[f64; 4]>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl AblationRow {
    /// Mean and sample standard deviation of metric column `i`.
    pub fn stat(&self, i: usize) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r[i]).collect::<Vec<_>>())
    }
}

pub const METRIC_NAMES: [&str; 4] = ["HR@5", "NDCG@5", "HR@10", "NDCG@10"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<14}", "variant");
        for m in METRIC_NAMES {
            let _ = write!(s, " {m:>17}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<14}", r.name);
            for i in 0..4 {
                let (m, sd) = r.stat(i);
                let _ = write!(s, " {:>17}", format!("{m:.4} ± {sd:.4}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant\tmetric\tmean\tstd\n");
        for r in &self.rows {
            for (i, m) in METRIC_NAMES.iter().enumerate() {
                let (mean, sd) = r.stat(i);
                let _ = writeln!(s, "{}\t{m}\t{mean}\t{sd}", r.name);
            }
        }
        s
    }
}

fn metrics(report: &EvalReport) -> [f64; 4] {
    [report.hr(5), report.ndcg(5), report.hr(10), report.ndcg(10)]
}

/// Trains and tests `cfg` once per seed, without writing artifacts.
pub fn run_seeds(cfg: &ExperimentConfig, data: &SplitDataset, seeds: &[u64]) -> Result<Vec<[f64; 4]>> {
    let jobs: Vec<ExperimentConfig> = seeds.iter().map(|&seed| ExperimentConfig { seed, ..cfg.clone() }).collect();
    run_parallel(&jobs, data)?.iter().map(|r| Ok(metrics(r))).collect()
}

/// Trains and tests every job on its own thread, one evaluation thread each.
pub fn run_parallel(jobs: &[ExperimentConfig], data: &SplitDataset) -> Result<Vec<EvalReport>> {
    let run = |cfg: &ExperimentConfig| -> Result<EvalReport> {
        let cfg = ExperimentConfig { threads: 1, ..cfg.clone() };
        let outcome = train(&cfg, data)?;
        evaluate(&outcome.model, &data.test, &cfg.schedule()?, &cfg.eval_settings(cfg.inference_steps))
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    let mut results: Vec<Option<Result<EvalReport>>> = (0..jobs.len()).map(|_| None).collect();
    for (slots, batch) in results.chunks_mut(workers).zip(jobs.chunks(workers)) {
        std::thread::scope(|scope| {
            for (slot, cfg) in slots.iter_mut().zip(batch) {
                let run = &run;
                scope.spawn(move || *slot = Some(run(cfg)));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Runs every configuration of `suite` under each seed and tabulates test metrics.
pub fn ablate(suite: Suite, base: &ExperimentConfig, data: &SplitDataset, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let configs = suite_configs(suite, base);
    let mut jobs = Vec::new();
    for (_, cfg) in &configs {
        cfg.validate()?;
        jobs.extend(seeds.iter().map(|&seed| ExperimentConfig { seed, ..cfg.clone() }));
    }
    let reports = run_parallel(&jobs, data)?;
    let rows = configs
        .iter()
        .zip(reports.chunks(seeds.len()))
        .map(|((name, cfg), reps)| AblationRow {
            name: name.clone(),
            flags: cfg.diff(base),
            runs: reps.iter().map(metrics).collect(),
        })
        .collect();
    Ok(AblationTable { suite, seeds: seeds.to_vec(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub steps: usize,
    pub hr5: f64,
    pub ndcg5: f64,
    /// Mean wall-clock seconds of one full evaluation pass.
    pub seconds: f64,
}

/// Evaluates one trained model at every `T′` in `steps_list`, timing
/// `repeats` passes each.
pub fn sweep_steps(
    model: &DcrecModel,
    cfg: &ExperimentConfig,
    split: &[InteractionSequence],
    steps_list: &[usize],
    repeats: usize,
) -> Result<Vec<SweepPoint>> {
    let sched = cfg.schedule()?;
    if let Some(&bad) = steps_list.iter().find(|&&s| s == 0 || s > sched.steps()) {
        return Err(Error::InvalidConfig(format!("inference steps {bad} outside 1..={}", sched.steps())));
    }
    steps_list
        .iter()
        .map(|&steps| {
            let settings = cfg.eval_settings(steps);
            let mut report = None;
            let start = Instant::now();
            for _ in 0..repeats.max(1) {
                report = Some(evaluate(model, split, &sched, &settings)?);
            }
            let seconds = start.elapsed().as_secs_f64() / repeats.max(1) as f64;
            let report = report.expect("at least one repeat");
            Ok(SweepPoint { steps, hr5: report.hr(5), ndcg5: report.ndcg(5), seconds })
        })
        .collect()
}

pub fn sweep_tsv(points: &[SweepPoint]) -> String {
    let mut s = String::from("T_prime\tHR@5\tNDCG@5\tseconds\n");
    for p in points {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", p.steps, p.hr5, p.ndcg5, p.seconds);
    }
    s
}

/// Trains `cfg` on `data` and returns the model, for sweeps.
pub fn train_model(cfg: &ExperimentConfig, data: &SplitDataset) -> Result<DcrecModel> {
    Ok(train(cfg, data)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_change_only_their_flag() {
        let base = ExperimentConfig::default();
        for (suite, allowed) in [
            (Suite::Loss, "loss_mask"),
            (Suite::Module, "variant"),
            (Suite::Conditioning, "variant"),
            (Suite::Noise, "variant"),
        ] {
            for (name, cfg) in suite_configs(suite, &base) {
                let diff = cfg.diff(&base);
                assert!(diff.iter().all(|k| k == allowed), "{suite:?}/{name}: {diff:?}");
            }
        }
        assert_eq!(suite_configs(Suite::Loss, &base).len(), 4);
        assert_eq!(suite_configs(Suite::Noise, &base).len(), 2);
        assert!("foo".parse::<Suite>().is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
