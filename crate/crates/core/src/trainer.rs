//! Three-term objective, Adam updates and the epoch loop with early stopping.
//!
//! For a batch of `(history, target)` pairs the clean sequence
//! `S_0 = Concat(H_0, e_0)` is noised to one random step per sequence and the
//! denoiser predicts `S̄_0`. The loss is
//!
//! ```text
//! total = L_T + (1 − λ)·L_t + λ·L_z
//! L_T = mean(S̄_0²)
//! L_t = mean((ē_0 − e_0)²)
//! L_z = CE(softmax(cos(ē_0, items) / τ), target)
//! ```
//!
//! Gradients reach the denoiser and the item table (through `H_0`, `S_0`,
//! `e_0` and the cosine logits).

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{InteractionSequence, SplitDataset};
use crate::dcdt::InputLayout;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSettings};
use crate::graph::{Gradients, Graph, NodeId, ParamRef, Tensor};
use crate::itemspace::{ItemEmbeddingTable, ItemId, PADDING};
use crate::model::DcrecModel;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaKind {
    #[default]
    Fix,
    Decline,
    Smooth,
}

impl std::str::FromStr for LambdaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fix" => Ok(Self::Fix),
            "decline" => Ok(Self::Decline),
            "smooth" => Ok(Self::Smooth),
            other => Err(Error::InvalidConfig(format!("unknown lambda schedule {other:?}"))),
        }
    }
}

/// Epoch-dependent weight of the rank term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub kind: LambdaKind,
    pub c: f64,
    pub max: f64,
    pub min: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self { kind: LambdaKind::Fix, c: 0.1, max: 0.2, min: 0.003 }
    }
}

pub const SMOOTH_HORIZON: f64 = 150.0;
pub const SMOOTH_POWER: i32 = 9;

/// `fix`: `c`. `decline`: `max − (0.2 − epoch/400) + min` clamped to
/// `[min, max + min]`. `smooth`: `max·(1 − epoch/150)^9 + min`, then `min`
/// from epoch 150 on. Always clamped to `[0, 1]`.
pub fn lambda_value(s: &LambdaSchedule, epoch: usize) -> f64 {
    let ep = epoch as f64;
    let v = match s.kind {
        LambdaKind::Fix => s.c,
        LambdaKind::Decline => (s.max - (0.2 - ep / 400.0) + s.min).clamp(s.min, s.max + s.min),
        LambdaKind::Smooth if ep < SMOOTH_HORIZON => s.max * (1.0 - ep / SMOOTH_HORIZON).powi(SMOOTH_POWER) + s.min,
        LambdaKind::Smooth => s.min,
    };
    v.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossTerm {
    #[serde(rename = "L_T")]
    Prior,
    #[serde(rename = "L_t")]
    Recon,
    #[serde(rename = "L_z")]
    Rank,
}

impl std::str::FromStr for LossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L_T" => Ok(Self::Prior),
            "L_t" => Ok(Self::Recon),
            "L_z" => Ok(Self::Rank),
            other => Err(Error::InvalidConfig(format!("unknown loss term {other:?}"))),
        }
    }
}

/// Which terms contribute to the optimized total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossMask {
    pub prior: bool,
    pub recon: bool,
    pub rank: bool,
}

impl LossMask {
    pub const ALL: LossMask = LossMask { prior: true, recon: true, rank: true };

    pub fn from_terms(terms: &[LossTerm]) -> Self {
        Self {
            prior: terms.contains(&LossTerm::Prior),
            recon: terms.contains(&LossTerm::Recon),
            rank: terms.contains(&LossTerm::Rank),
        }
    }

    /// Coefficients of `(L_T, L_t, L_z)` in the total.
    pub fn weights(&self, lambda: f64) -> (f64, f64, f64) {
        let on = |b: bool, w: f64| if b { w } else { 0.0 };
        (on(self.prior, 1.0), on(self.recon, 1.0 - lambda), on(self.rank, lambda))
    }
}

impl Default for LossMask {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub lambda: f64,
    pub tau: f64,
    pub mask: LossMask,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self { lambda: 0.1, tau: 0.07, mask: LossMask::ALL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "L_T")]
    pub prior: f64,
    #[serde(rename = "L_t")]
    pub recon: f64,
    #[serde(rename = "L_z")]
    pub rank: f64,
    pub lambda: f64,
    pub total: f64,
    /// Predictions with zero norm, scored with zero logits in `L_z`.
    pub degenerate: usize,
}

/// Loss values for a single prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub prior: f64,
    pub recon: f64,
    pub rank: f64,
    pub degenerate: bool,
}

/// Random steps and Gaussian noise for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub steps: Vec<usize>,
    /// `(b·n) × d`.
    pub noise: Tensor,
}

impl Perturbation {
    /// One step per sequence uniform on `1..=total_steps`, then the noise.
    pub fn draw(b: usize, n: usize, d: usize, total_steps: usize, rng: &mut impl Rng) -> Self {
        let steps = (0..b).map(|_| rng.random_range(1..=total_steps)).collect();
        let noise = Tensor::from_shape_simple_fn((b * n, d), || rng.sample(StandardNormal));
        Self { steps, noise }
    }
}

struct Objective {
    graph: Graph,
    total: NodeId,
    prior: NodeId,
    recon: NodeId,
    rank: NodeId,
    degenerate: usize,
}

fn rank_loss(g: &mut Graph, e_bar: NodeId, table: NodeId, num_items: usize, targets: &[ItemId], tau: f64) -> NodeId {
    let q = g.l2_normalize_rows(e_bar);
    let tn = g.l2_normalize_rows(table);
    let items = g.gather_rows(tn, (1..=num_items).collect());
    let items_t = g.transpose(items);
    let cos = g.matmul(q, items_t);
    let logits = g.scale(cos, 1.0 / tau);
    g.cross_entropy(logits, targets.iter().map(|&t| t as usize - 1).collect())
}

fn zero_rows(t: &Tensor) -> usize {
    t.rows().into_iter().filter(|r| r.iter().all(|&x| x == 0.0)).count()
}

fn build_objective(
    model: &DcrecModel,
    batch: &[&InteractionSequence],
    sched: &NoiseSchedule,
    pert: &Perturbation,
    settings: &ObjectiveSettings,
    dropout: Option<&mut dyn RngCore>,
) -> Result<Objective> {
    let cfg = model.config();
    let (n, d) = (cfg.seq_len, cfg.dim);
    let hist = n - 1;
    let b = batch.len();
    if b == 0 {
        return Err(Error::Empty("training batch"));
    }
    for s in batch {
        if s.history.len() != hist {
            return Err(Error::ShapeMismatch(format!("history of length {}, model expects {hist}", s.history.len())));
        }
        if s.target == PADDING {
            return Err(Error::ItemOutOfRange { id: PADDING, num_items: model.table.num_items() });
        }
        model.table.check_id(s.target)?;
        for &h in &s.history {
            model.table.check_id(h)?;
        }
    }
    if pert.steps.len() != b || pert.noise.dim() != (b * n, d) {
        return Err(Error::ShapeMismatch("perturbation does not match the batch".into()));
    }
    if let Some(&t) = pert.steps.iter().find(|&&t| t == 0 || t > sched.steps()) {
        return Err(Error::StepOutOfRange { step: t, max: sched.steps() });
    }

    let mut g = Graph::new();
    let p = model.net.register(&mut g);
    let table = g.param(ParamRef::Embedding, model.table.weights());

    let hist_ids: Vec<usize> = batch.iter().flat_map(|s| s.history.iter().map(|&i| i as usize)).collect();
    let mask: Vec<bool> = hist_ids.iter().map(|&i| i == PADDING as usize).collect();
    let targets: Vec<ItemId> = batch.iter().map(|s| s.target).collect();
    let layout = cfg.variant.input_layout();
    let seq_ids: Vec<usize> = batch
        .iter()
        .flat_map(|s| {
            let t = s.target as usize;
            let rows: Vec<usize> = match layout {
                InputLayout::Concat => s.history.iter().map(|&i| i as usize).chain([t]).collect(),
                InputLayout::BroadcastTarget => vec![t; n],
            };
            rows
        })
        .collect();

    let h0 = g.gather_rows(table, hist_ids);
    let s0 = g.gather_rows(table, seq_ids);
    let clean_history = layout == InputLayout::Concat && !cfg.variant.noises_history();
    let mut signal = Vec::with_capacity(b * n);
    let mut noise = pert.noise.clone();
    for (s, &t) in pert.steps.iter().enumerate() {
        let (a, c) = sched.marginal_coefficients(t)?;
        for r in 0..n {
            let (a, c) = if clean_history && r < hist { (1.0, 0.0) } else { (a, c) };
            signal.push(a);
            noise.row_mut(s * n + r).mapv_inplace(|x| x * c);
        }
    }
    let scaled = g.scale_rows(s0, signal);
    let noise = g.constant(noise);
    let s_t = g.add(scaled, noise);
    let pred = model.net.forward(&mut g, &p, s_t, h0, &pert.steps, &mask, dropout)?;

    let e_bar = g.gather_rows(pred, (0..b).map(|s| s * n + hist).collect());
    let e0 = g.gather_rows(table, targets.iter().map(|&t| t as usize).collect());
    let prior = g.mean_square(pred);
    let diff = g.sub(e_bar, e0);
    let recon = g.mean_square(diff);
    let rank = rank_loss(&mut g, e_bar, table, model.table.num_items(), &targets, settings.tau);
    let degenerate = zero_rows(g.value(e_bar));
    let (wp, wr, wz) = settings.mask.weights(settings.lambda);
    let total = g.weighted_sum(vec![(prior, wp), (recon, wr), (rank, wz)]);
    Ok(Objective { graph: g, total, prior, recon, rank, degenerate })
}

impl Objective {
    fn record(&self, settings: &ObjectiveSettings) -> LossRecord {
        let g = &self.graph;
        LossRecord {
            epoch: 0,
            step: 0,
            prior: g.scalar(self.prior),
            recon: g.scalar(self.recon),
            rank: g.scalar(self.rank),
            lambda: settings.lambda,
            total: g.scalar(self.total),
            degenerate: self.degenerate,
        }
    }
}

/// Loss values of one prediction `S̄_0` against its target.
pub fn loss_terms(
    s0_bar: &Tensor,
    e_bar: &[f64],
    e0: &[f64],
    target: ItemId,
    table: &ItemEmbeddingTable,
    tau: f64,
) -> Result<LossTerms> {
    if target == PADDING {
        return Err(Error::ItemOutOfRange { id: target, num_items: table.num_items() });
    }
    table.check_id(target)?;
    let d = table.dim();
    if e_bar.len() != d || e0.len() != d || s0_bar.ncols() != d {
        return Err(Error::ShapeMismatch(format!("embeddings must have {d} columns")));
    }
    let mut g = Graph::new();
    let pred = g.constant(s0_bar.clone());
    let eb = g.constant(Tensor::from_shape_vec((1, d), e_bar.to_vec()).expect("row"));
    let e = g.constant(Tensor::from_shape_vec((1, d), e0.to_vec()).expect("row"));
    let t = g.constant(table.weights().clone());
    let prior = g.mean_square(pred);
    let diff = g.sub(eb, e);
    let recon = g.mean_square(diff);
    let rank = rank_loss(&mut g, eb, t, table.num_items(), &[target], tau);
    Ok(LossTerms {
        prior: g.scalar(prior),
        recon: g.scalar(recon),
        rank: g.scalar(rank),
        degenerate: e_bar.iter().all(|&x| x == 0.0),
    })
}

/// Gradients aligned with the denoiser tensors and the item table.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub net: Vec<Tensor>,
    pub table: Tensor,
}

impl ModelGradients {
    fn collect(grads: &Gradients, model: &DcrecModel) -> Self {
        let mut net: Vec<Tensor> = model.net.tensors().iter().map(|t| Tensor::zeros(t.raw_dim())).collect();
        let mut table = Tensor::zeros(model.table.weights().raw_dim());
        for (which, g) in grads.params() {
            match which {
                ParamRef::Net(i) => net[*i] += g,
                ParamRef::Embedding => table += g,
            }
        }
        Self { net, table }
    }

    pub fn global_norm(&self) -> f64 {
        self.net.iter().chain([&self.table]).map(|t| t.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    fn scale(&mut self, c: f64) {
        for t in self.net.iter_mut().chain([&mut self.table]) {
            *t *= c;
        }
    }
}

/// Objective value with dropout disabled.
pub fn objective_value(
    model: &DcrecModel,
    batch: &[InteractionSequence],
    sched: &NoiseSchedule,
    pert: &Perturbation,
    settings: &ObjectiveSettings,
) -> Result<LossRecord> {
    let refs: Vec<&InteractionSequence> = batch.iter().collect();
    Ok(build_objective(model, &refs, sched, pert, settings, None)?.record(settings))
}

/// Objective value and its exact gradient with dropout disabled.
pub fn objective_gradients(
    model: &DcrecModel,
    batch: &[InteractionSequence],
    sched: &NoiseSchedule,
    pert: &Perturbation,
    settings: &ObjectiveSettings,
) -> Result<(LossRecord, ModelGradients)> {
    let refs: Vec<&InteractionSequence> = batch.iter().collect();
    let obj = build_objective(model, &refs, sched, pert, settings, None)?;
    let grads = obj.graph.backward(obj.total);
    Ok((obj.record(settings), ModelGradients::collect(&grads, model)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 4e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam without weight decay over the denoiser tensors and the item table.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn update(&mut self, model: &mut DcrecModel, grads: &ModelGradients) {
        let params = model.net.tensors_mut().iter_mut().chain([model.table.weights_mut()]);
        let gs = grads.net.iter().chain([&grads.table]);
        if self.m.is_empty() {
            self.m = gs.clone().map(|g| Tensor::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.zip(gs).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// One optimizer update on `batch`. Draws steps and noise, then dropout
/// masks, then any table repairs from `rng`.
pub fn train_step(
    model: &mut DcrecModel,
    opt: &mut Adam,
    batch: &[&InteractionSequence],
    sched: &NoiseSchedule,
    settings: &ObjectiveSettings,
    grad_clip: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossRecord> {
    let cfg = model.config();
    let pert = Perturbation::draw(batch.len(), cfg.seq_len, cfg.dim, sched.steps(), rng);
    let obj = build_objective(model, batch, sched, &pert, settings, Some(rng))?;
    let record = obj.record(settings);
    let mut grads = ModelGradients::collect(&obj.graph.backward(obj.total), model);
    grads.table.row_mut(0).fill(0.0);
    let norm = grads.global_norm();
    if grad_clip > 0.0 && norm > grad_clip {
        grads.scale(grad_clip / norm);
    }
    opt.update(model, &grads);
    model.table.repair(rng);
    Ok(record)
}

/// Per-epoch summary: mean losses over the epoch's steps and validation HR@10.
///
/// Early stopping ranks epochs by validation HR@10 and breaks ties with NDCG@10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    #[serde(flatten)]
    pub loss: LossRecord,
    pub val_hr10: Option<f64>,
}

pub fn write_log_tsv(path: &Path, rows: &[EpochLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch\tstep\tL_T\tL_t\tL_z\tlambda\ttotal\tval_HR@10")?;
    for r in rows {
        let l = &r.loss;
        let val = r.val_hr10.map_or_else(String::new, |v| format!("{v}"));
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            l.epoch, l.step, l.prior, l.recon, l.rank, l.lambda, l.total, val
        )?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation HR@10 (the last
    /// epoch when there is no validation split).
    pub model: DcrecModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_hr10: Option<f64>,
    pub stopped_early: bool,
}

/// Early-stopping tracker on a score that should increase. Scores compare
/// lexicographically, so later entries only break ties.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Vec<f64>,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: Vec::new(), waited: 0 }
    }

    /// Returns whether `score` is a new best.
    pub fn observe(&mut self, score: &[f64]) -> bool {
        let better =
            self.best.is_empty() || score.iter().zip(&self.best).find(|(a, b)| a != b).is_some_and(|(a, b)| a > b);
        if better {
            self.best = score.to_vec();
            self.waited = 0;
            true
        } else {
            self.waited += 1;
            false
        }
    }

    pub fn exhausted(&self) -> bool {
        self.waited >= self.patience
    }
}

/// Trains from scratch; see [`train_with`].
pub fn train(cfg: &ExperimentConfig, data: &SplitDataset) -> Result<TrainOutcome> {
    train_with(cfg, data, |_| {})
}

/// Trains from scratch, calling `on_epoch` after every epoch.
pub fn train_with(
    cfg: &ExperimentConfig,
    data: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let sched = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DcrecModel::new(cfg.dcdt_config(data.max_len), data.num_items(), &mut rng)?;
    let mut opt = Adam::new(cfg.adam());
    let lambda = cfg.lambda_schedule();
    let mask = cfg.loss_mask();
    let val_settings = EvalSettings {
        steps: cfg.val_inference_steps,
        delta: cfg.delta,
        seed: cfg.seed,
        ks: vec![10.min(data.num_items())],
        batch_size: cfg.eval_batch_size,
        threads: cfg.threads,
    };

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (model.clone(), 0, None);
    let mut log = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let settings = ObjectiveSettings { lambda: lambda_value(&lambda, epoch), tau: cfg.tau, mask };
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut degenerate = 0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&InteractionSequence> = chunk.iter().map(|&i| &data.train[i]).collect();
            let r = train_step(&mut model, &mut opt, &batch, &sched, &settings, cfg.grad_clip, &mut rng)?;
            step += 1;
            batches += 1;
            for (s, v) in sums.iter_mut().zip([r.prior, r.recon, r.rank, r.total]) {
                *s += v;
            }
            degenerate += r.degenerate;
        }
        let mean = |i: usize| sums[i] / batches as f64;
        let val_hr10 = if data.validation.is_empty() {
            None
        } else {
            let report = evaluate(&model, &data.validation, &sched, &val_settings)?;
            Some((report.metrics[0].hr, report.metrics[0].ndcg))
        };
        let row = EpochLog {
            loss: LossRecord {
                epoch,
                step,
                prior: mean(0),
                recon: mean(1),
                rank: mean(2),
                lambda: settings.lambda,
                total: mean(3),
                degenerate,
            },
            val_hr10: val_hr10.map(|v| v.0),
        };
        on_epoch(&row);
        log.push(row);
        match val_hr10 {
            Some((hr, ndcg)) => {
                if stopper.observe(&[hr, ndcg]) {
                    best = (model.clone(), epoch, Some(hr));
                } else if stopper.exhausted() {
                    stopped_early = true;
                    break;
                }
            }
            None => best = (model.clone(), epoch, None),
        }
    }
    let (model, best_epoch, best_val_hr10) = best;
    Ok(TrainOutcome { model, log, best_epoch, best_val_hr10, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let fix = LambdaSchedule::default();
        assert_eq!(lambda_value(&fix, 0), 0.1);
        assert_eq!(lambda_value(&fix, 999), 0.1);
        let smooth = LambdaSchedule { kind: LambdaKind::Smooth, ..fix };
        assert!((lambda_value(&smooth, 0) - 0.203).abs() < 1e-15);
        assert_eq!(lambda_value(&smooth, 150), 0.003);
        assert_eq!(lambda_value(&smooth, 400), 0.003);
        let decline = LambdaSchedule { kind: LambdaKind::Decline, ..fix };
        assert!((lambda_value(&decline, 0) - 0.003).abs() < 1e-15);
        assert!((lambda_value(&decline, 40) - 0.103).abs() < 1e-12);
        assert!((lambda_value(&decline, 200) - 0.203).abs() < 1e-12);
    }

    #[test]
    fn smooth_is_non_increasing() {
        let s = LambdaSchedule { kind: LambdaKind::Smooth, ..Default::default() };
        for ep in 0..300 {
            assert!(lambda_value(&s, ep + 1) <= lambda_value(&s, ep));
        }
    }

    #[test]
    fn uniform_logits_give_log_n() {
        // Every item row identical: all cosines equal.
        let table = ItemEmbeddingTable::from_weights(Tensor::from_shape_fn((101, 4), |(i, j)| {
            if i == 0 {
                0.0
            } else {
                (j + 1) as f64
            }
        }))
        .unwrap();
        let terms =
            loss_terms(&Tensor::zeros((3, 4)), &[0.5, -1.0, 2.0, 0.1], &[0.5, -1.0, 2.0, 0.1], 17, &table, 0.07)
                .unwrap();
        assert_eq!(terms.prior, 0.0);
        assert_eq!(terms.recon, 0.0);
        assert!((terms.rank - 100f64.ln()).abs() < 1e-12);
        let zero = loss_terms(&Tensor::zeros((3, 4)), &[0.0; 4], &[1.0; 4], 3, &table, 0.07).unwrap();
        assert!(zero.degenerate);
        assert!((zero.rank - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_mask_weights() {
        assert_eq!(LossMask::ALL.weights(0.2), (1.0, 0.8, 0.2));
        let only = LossMask::from_terms(&[LossTerm::Rank]);
        assert_eq!(only.weights(0.2), (0.0, 0.0, 0.2));
    }

    #[test]
    fn early_stopping_after_flat_epochs() {
        let mut s = EarlyStopping::new(5);
        assert!(s.observe(&[0.3, 0.1]));
        assert!(s.observe(&[0.3, 0.2]));
        for _ in 0..4 {
            assert!(!s.observe(&[0.3, 0.2]));
            assert!(!s.exhausted());
        }
        assert!(!s.observe(&[0.2, 0.9]));
        assert!(s.exhausted());
    }
}
