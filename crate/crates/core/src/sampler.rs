//! Conditioned reverse diffusion with step skipping.
//!
//! Starting from Gaussian noise shifted toward the clean history, each visited
//! step predicts `S̄_0` and re-noises it to the next visited step with the
//! closed-form forward marginal. The last step keeps `S̄_0` and its target row
//! is rounded to items by cosine similarity.
//!
//! Every user owns a ChaCha stream keyed by `(seed, stream)`, so results do
//! not depend on how users are batched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dcdt::{last_rows, InputLayout};
use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::itemspace::{top_k, ItemEmbeddingTable, ItemId, PADDING};
use crate::model::DcrecModel;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Number of visited steps `T′`.
    pub steps: usize,
    /// Scale of the clean history added to the initial noise.
    pub delta: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { steps: 50, delta: 0.1, k: 10, seed: 0 }
    }
}

/// `count` evenly spaced steps from `total` down to 1.
pub fn select_inference_steps(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::InvalidConfig(format!("inference steps must lie in 1..={total}, got {count}")));
    }
    if count == 1 {
        return Ok(vec![total]);
    }
    let span = (total - 1) as f64 / (count - 1) as f64;
    Ok((0..count).map(|i| (total as f64 - span * i as f64).round() as usize).collect())
}

/// Keeps the latest `len` items of `ids` and left-pads with the padding item.
pub fn pad_history(ids: &[ItemId], len: usize) -> Vec<ItemId> {
    let tail = &ids[ids.len().saturating_sub(len)..];
    let mut out = vec![PADDING; len - tail.len()];
    out.extend_from_slice(tail);
    out
}

fn user_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for x in out {
        *x = StandardNormal.sample(rng);
    }
}

/// Runs the reverse process for a batch of padded histories and returns the
/// predicted target embedding of each (`b × d`).
pub fn denoise_batch(
    model: &DcrecModel,
    sched: &NoiseSchedule,
    histories: &[&[ItemId]],
    streams: &[u64],
    cfg: &InferenceConfig,
) -> Result<Tensor> {
    let net_cfg = model.config();
    let (n, d) = (net_cfg.seq_len, net_cfg.dim);
    let hist = n - 1;
    let b = histories.len();
    if b == 0 {
        return Err(Error::Empty("inference batch"));
    }
    if streams.len() != b {
        return Err(Error::ShapeMismatch(format!("{} streams for {b} histories", streams.len())));
    }
    if cfg.delta < 0.0 {
        return Err(Error::InvalidConfig(format!("delta must be non-negative, got {}", cfg.delta)));
    }
    if let Some(h) = histories.iter().find(|h| h.len() != hist) {
        return Err(Error::ShapeMismatch(format!("history of length {}, model expects {hist}", h.len())));
    }
    let steps = select_inference_steps(sched.steps(), cfg.steps)?;
    let ids: Vec<ItemId> = histories.iter().flat_map(|h| h.iter().copied()).collect();
    let h0 = model.table.embed(&ids)?;
    let mask: Vec<bool> = ids.iter().map(|&i| i == PADDING).collect();
    let variant = net_cfg.variant;
    let concat = variant.input_layout() == InputLayout::Concat;
    let mut rngs: Vec<ChaCha8Rng> = streams.iter().map(|&s| user_rng(cfg.seed, s)).collect();

    let mut s = Tensor::zeros((b * n, d));
    let mut buf = vec![0.0; n * d];
    for (u, rng) in rngs.iter_mut().enumerate() {
        // e_T first, then H_T.
        fill_normal(rng, &mut buf[hist * d..]);
        fill_normal(rng, &mut buf[..hist * d]);
        let mut block = s.slice_mut(ndarray::s![u * n..(u + 1) * n, ..]);
        for r in 0..n {
            for c in 0..d {
                let mut v = buf[r * d + c];
                if concat && r < hist {
                    let h = h0[[u * hist + r, c]];
                    v = if variant.noises_history() { v + cfg.delta * h } else { h };
                }
                block[[r, c]] = v;
            }
        }
    }

    let mut g = Graph::new();
    let p = model.net.register(&mut g);
    let h0_node = g.constant(h0.clone());
    let mark = g.len();
    for (i, &t) in steps.iter().enumerate() {
        g.truncate(mark);
        let s_node = g.constant(s);
        let step_vec = vec![t; b];
        let out = model.net.forward(&mut g, &p, s_node, h0_node, &step_vec, &mask, None)?;
        let pred = g.value(out).clone();
        let Some(&next) = steps.get(i + 1) else {
            return Ok(last_rows(&pred, n));
        };
        let (a, c) = sched.marginal_coefficients(next)?;
        s = pred;
        for (u, rng) in rngs.iter_mut().enumerate() {
            fill_normal(rng, &mut buf);
            for r in 0..n {
                let row = u * n + r;
                let keep_clean = concat && r < hist && !variant.noises_history();
                for col in 0..d {
                    s[[row, col]] =
                        if keep_clean { h0[[u * hist + r, col]] } else { a * s[[row, col]] + c * buf[r * d + col] };
                }
            }
        }
    }
    unreachable!("at least one inference step")
}

/// Top-`k` items for every row of `queries`. A zero-norm row yields an empty
/// list.
pub fn rank_rows(table: &ItemEmbeddingTable, queries: &Tensor, k: usize) -> Result<Vec<Vec<(ItemId, f64)>>> {
    if k == 0 || k > table.num_items() {
        return Err(Error::InvalidCutoff { k, max: table.num_items() });
    }
    let w = table.weights();
    let items = w.slice(ndarray::s![1.., ..]);
    let norms: Vec<f64> = items.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let dots = queries.dot(&items.t());
    Ok(queries
        .rows()
        .into_iter()
        .zip(dots.rows())
        .map(|(q, row)| {
            let qn = q.dot(&q).sqrt();
            if qn == 0.0 || !qn.is_finite() {
                return Vec::new();
            }
            let scores: Vec<f64> =
                row.iter().zip(&norms).map(|(&dot, &rn)| if rn == 0.0 { 0.0 } else { dot / (rn * qn) }).collect();
            top_k(&scores, k)
        })
        .collect())
}

/// Ranked predictions for a batch of padded histories; user `i` draws from
/// stream `streams[i]`.
pub fn infer_batch(
    model: &DcrecModel,
    sched: &NoiseSchedule,
    histories: &[&[ItemId]],
    streams: &[u64],
    cfg: &InferenceConfig,
) -> Result<Vec<Vec<(ItemId, f64)>>> {
    let e0 = denoise_batch(model, sched, histories, streams, cfg)?;
    rank_rows(&model.table, &e0, cfg.k)
}

/// Ranked next-item prediction for one history of any length (stream 0).
pub fn infer_next_item(
    model: &DcrecModel,
    history: &[ItemId],
    sched: &NoiseSchedule,
    cfg: &InferenceConfig,
) -> Result<Vec<(ItemId, f64)>> {
    for &id in history {
        model.table.check_id(id)?;
    }
    let padded = pad_history(history, model.config().history_len());
    let e0 = denoise_batch(model, sched, &[&padded], &[0], cfg)?;
    model.table.rank_items(e0.row(0).as_slice().expect("contiguous"), cfg.k)
}
