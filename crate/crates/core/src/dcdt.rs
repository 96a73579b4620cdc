//! The dual conditional denoising transformer.
//!
//! Predicts the clean concatenated sequence `S̄_0 = Concat(H̄_0, ē_0)` from a
//! noised sequence `S_t`, the step `t`, and the clean history `H_0`. History
//! enters twice: through the noised rows of the input (implicit) and through
//! cross-attention plus history-conditioned layer norms (explicit).
//!
//! Each block is pre-norm with residuals:
//!
//! ```text
//! x += Dropout(SelfAttn(CondLN(x)))
//! x += Dropout(CrossAttn(CondLN(x), H_0))
//! x += Dropout(ReLU(CondLN(x)·W + b))
//! ```
//!
//! followed by a final CondLN. `H_0` carries no positional embedding.

use ndarray::{s, Array1};
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamRef, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Model family; every non-default variant is one ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Implicit (noised concatenated history) plus explicit (cross-attention, CondLN) conditioning.
    #[default]
    Dcrec,
    /// Implicit only: no cross-attention, norms conditioned on the step alone.
    Icdm,
    /// Explicit only: the input sequence is the target broadcast over every position.
    Ecdm,
    /// History added onto the self-attention input instead of cross-attention.
    SingleAttn,
    /// Plain layer norm with learned, unconditioned affine parameters.
    NoCondln,
    /// Noise applied to the target row only; history rows stay clean.
    PartialNoise,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Dcrec, Variant::Icdm, Variant::Ecdm, Variant::SingleAttn, Variant::NoCondln, Variant::PartialNoise];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dcrec => "dcrec",
            Variant::Icdm => "icdm",
            Variant::Ecdm => "ecdm",
            Variant::SingleAttn => "single_attn",
            Variant::NoCondln => "no_condln",
            Variant::PartialNoise => "partial_noise",
        }
    }

    pub fn cross_attention(self) -> bool {
        !matches!(self, Variant::Icdm | Variant::SingleAttn)
    }

    pub fn conditional_norm(self) -> bool {
        self != Variant::NoCondln
    }

    /// Whether CondLN sees the pooled history (in addition to the step).
    pub fn history_in_norm(self) -> bool {
        self.conditional_norm() && self != Variant::Icdm
    }

    pub fn merges_history(self) -> bool {
        self == Variant::SingleAttn
    }

    pub fn input_layout(self) -> InputLayout {
        if self == Variant::Ecdm {
            InputLayout::BroadcastTarget
        } else {
            InputLayout::Concat
        }
    }

    pub fn noises_history(self) -> bool {
        self != Variant::PartialNoise
    }
}

/// How the diffusion sequence `S_0` is assembled from history and target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// `Concat(H_0, e_0)`.
    Concat,
    /// `e_0` repeated at every position.
    BroadcastTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcdtConfig {
    pub blocks: usize,
    pub dim: usize,
    /// `n`: history length plus one target row.
    pub seq_len: usize,
    pub dropout: f64,
    pub emb_dropout: f64,
    pub variant: Variant,
}

impl Default for DcdtConfig {
    fn default() -> Self {
        Self { blocks: 4, dim: 128, seq_len: 50, dropout: 0.1, emb_dropout: 0.4, variant: Variant::Dcrec }
    }
}

impl DcdtConfig {
    pub fn history_len(&self) -> usize {
        self.seq_len - 1
    }

    /// Trainable scalar count for the full dual-conditional model.
    pub fn dcrec_parameter_count(blocks: usize, dim: usize, seq_len: usize) -> usize {
        let (b, d, n) = (blocks, dim, seq_len);
        let mlp = |input: usize| input * d + d + d * d + d;
        let cond_norm = 2 * mlp(2 * d);
        let attn = 4 * d * d;
        let ffn = d * d + d;
        n * d + mlp(d) + b * (3 * cond_norm + 2 * attn + ffn) + cond_norm
    }
}

#[derive(Clone, Debug)]
struct MlpIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
enum NormIdx {
    Conditional { gain: MlpIdx, bias: MlpIdx },
    Plain { gain: usize, bias: usize },
}

#[derive(Clone, Debug)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Debug)]
struct BlockIdx {
    norm_self: NormIdx,
    self_attn: AttnIdx,
    cross: Option<(NormIdx, AttnIdx)>,
    norm_ffn: NormIdx,
    ffn_w: usize,
    ffn_b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    pos: usize,
    time: Option<MlpIdx>,
    blocks: Vec<BlockIdx>,
    final_norm: NormIdx,
}

enum Init {
    Zeros,
    Ones,
    Uniform(f64),
}

struct LayoutBuilder<'r, R: Rng> {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    rng: &'r mut R,
}

impl<R: Rng> LayoutBuilder<'_, R> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let t = match init {
            Init::Zeros => Tensor::zeros((rows, cols)),
            Init::Ones => Tensor::ones((rows, cols)),
            Init::Uniform(b) => Tensor::from_shape_fn((rows, cols), |_| self.rng.random_range(-b..b)),
        };
        self.tensors.push(t);
        self.names.push(name);
        self.tensors.len() - 1
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize, zero: bool) -> (usize, usize) {
        let init = if zero { Init::Zeros } else { Init::Uniform(1.0 / (input as f64).sqrt()) };
        let w = self.add(format!("{prefix}.w"), input, output, init);
        let b = self.add(format!("{prefix}.b"), 1, output, Init::Zeros);
        (w, b)
    }

    /// Two-layer MLP; `zero_out` zero-initializes the second layer.
    fn mlp(&mut self, prefix: &str, input: usize, dim: usize, zero_out: bool) -> MlpIdx {
        let (w1, b1) = self.linear(&format!("{prefix}.fc1"), input, dim, false);
        let (w2, b2) = self.linear(&format!("{prefix}.fc2"), dim, dim, zero_out);
        MlpIdx { w1, b1, w2, b2 }
    }

    fn norm(&mut self, prefix: &str, cfg: &DcdtConfig) -> NormIdx {
        let d = cfg.dim;
        if cfg.variant.conditional_norm() {
            let input = if cfg.variant.history_in_norm() { 2 * d } else { d };
            NormIdx::Conditional {
                gain: self.mlp(&format!("{prefix}.gain"), input, d, true),
                bias: self.mlp(&format!("{prefix}.bias"), input, d, true),
            }
        } else {
            NormIdx::Plain {
                gain: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
                bias: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
            }
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let bound = 1.0 / (d as f64).sqrt();
        let [wq, wk, wv, wo] =
            ["wq", "wk", "wv", "wo"].map(|w| self.add(format!("{prefix}.{w}"), d, d, Init::Uniform(bound)));
        AttnIdx { wq, wk, wv, wo }
    }
}

/// All denoiser weights.
#[derive(Clone, Debug)]
pub struct DcdtParams {
    config: DcdtConfig,
    tensors: Vec<Tensor>,
    names: Vec<String>,
    layout: Layout,
}

impl PartialEq for DcdtParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

impl DcdtParams {
    pub fn new(config: DcdtConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.blocks == 0 || config.dim == 0 || config.seq_len < 2 {
            return Err(Error::InvalidConfig(format!("need blocks >= 1, dim >= 1, seq_len >= 2; got {config:?}")));
        }
        for (name, p) in [("dropout", config.dropout), ("emb_dropout", config.emb_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        let d = config.dim;
        let mut b = LayoutBuilder { tensors: Vec::new(), names: Vec::new(), rng };
        let pos = b.add("pos".into(), config.seq_len, d, Init::Zeros);
        let time = config.variant.conditional_norm().then(|| b.mlp("time", d, d, false));
        let blocks = (0..config.blocks)
            .map(|i| {
                let p = format!("block{i}");
                let norm_self = b.norm(&format!("{p}.norm_self"), &config);
                let self_attn = b.attn(&format!("{p}.self_attn"), d);
                let cross = config
                    .variant
                    .cross_attention()
                    .then(|| (b.norm(&format!("{p}.norm_cross"), &config), b.attn(&format!("{p}.cross_attn"), d)));
                let norm_ffn = b.norm(&format!("{p}.norm_ffn"), &config);
                let (ffn_w, ffn_b) = b.linear(&format!("{p}.ffn"), d, d, false);
                BlockIdx { norm_self, self_attn, cross, norm_ffn, ffn_w, ffn_b }
            })
            .collect();
        let final_norm = b.norm("final_norm", &config);
        let layout = Layout { pos, time, blocks, final_norm };
        Ok(Self { config, tensors: b.tensors, names: b.names, layout })
    }

    /// Rebuilds a parameter set from named tensors (checkpoint loading).
    pub fn from_named(config: DcdtConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut fresh = Self::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        if named.len() != fresh.tensors.len() {
            return Err(Error::InvalidCheckpoint(format!(
                "expected {} tensors, found {}",
                fresh.tensors.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != fresh.names[i] || t.dim() != fresh.tensors[i].dim() {
                return Err(Error::InvalidCheckpoint(format!(
                    "tensor {i}: expected {} {:?}, found {name} {:?}",
                    fresh.names[i],
                    fresh.tensors[i].dim(),
                    t.dim()
                )));
            }
            fresh.tensors[i] = t;
        }
        Ok(fresh)
    }

    pub fn config(&self) -> &DcdtConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a parameter leaf of `g`.
    pub fn register(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors.iter().enumerate().map(|(i, t)| g.param(ParamRef::Net(i), t)).collect()
    }

    /// Step embedding after the learned MLP. Empty when the variant has no
    /// conditional norms.
    pub fn timestep_embedding(&self, t: usize) -> Vec<f64> {
        let Some(time) = &self.layout.time else { return Vec::new() };
        let mut g = Graph::new();
        let p = self.register(&mut g);
        let enc = g.constant(
            Tensor::from_shape_vec((1, self.config.dim), timestep_encoding(t, self.config.dim)).expect("shape"),
        );
        let out = mlp(&mut g, &p, time, enc);
        g.value(out).row(0).to_vec()
    }

    /// Batched forward pass on a graph.
    ///
    /// `s_t` is `(b·n) × d`, `h0` is `(b·(n−1)) × d`, `steps` has one entry
    /// per sequence and `history_mask[s·(n−1) + r]` marks padded history row
    /// `r` of sequence `s`. Dropout is active iff `dropout_rng` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[NodeId],
        s_t: NodeId,
        h0: NodeId,
        steps: &[usize],
        history_mask: &[bool],
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let (b, n, d) = (steps.len(), cfg.seq_len, cfg.dim);
        let hist = n - 1;
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        if g.value(s_t).dim() != (b * n, d) {
            return Err(Error::ShapeMismatch(format!("S_t is {:?}, expected {:?}", g.value(s_t).dim(), (b * n, d))));
        }
        if g.value(h0).dim() != (b * hist, d) || history_mask.len() != b * hist {
            return Err(Error::ShapeMismatch(format!(
                "H_0 is {:?} with mask {}, expected {:?}",
                g.value(h0).dim(),
                history_mask.len(),
                (b * hist, d)
            )));
        }
        let live: Vec<usize> = history_mask.chunks(hist).map(|m| m.iter().filter(|&&x| !x).count()).collect();
        if cfg.variant.cross_attention() {
            if let Some(s) = live.iter().position(|&c| c == 0) {
                return Err(Error::EmptyAttentionSupport(format!(
                    "cross-attention of sequence {s} (history is all padding)"
                )));
            }
        }

        let self_mask: Vec<bool> = match cfg.variant.input_layout() {
            InputLayout::Concat => {
                history_mask.chunks(hist).flat_map(|m| m.iter().copied().chain(std::iter::once(false))).collect()
            }
            InputLayout::BroadcastTarget => vec![false; b * n],
        };

        let mut x = s_t;
        if cfg.variant.merges_history() {
            let idx = (0..b).flat_map(|s| (0..hist).map(move |r| s * n + r)).collect();
            let hx = g.scatter_rows(h0, idx, b * n);
            x = g.add(x, hx);
        }
        let pos = g.tile_rows(p[self.layout.pos], b);
        x = g.add(x, pos);
        x = dropout(g, x, cfg.emb_dropout, &mut dropout_rng);

        let cond = match &self.layout.time {
            None => None,
            Some(time) => {
                let enc = Tensor::from_shape_fn((b, d), |(s, j)| timestep_encoding_at(steps[s], j, d));
                let enc = g.constant(enc);
                let t_emb = mlp(g, p, time, enc);
                if cfg.variant.history_in_norm() {
                    let weights = history_mask
                        .iter()
                        .enumerate()
                        .map(|(i, &m)| if m { 0.0 } else { 1.0 / live[i / hist].max(1) as f64 })
                        .collect();
                    let summary = g.pool_rows(h0, hist, weights);
                    Some(g.concat_cols(t_emb, summary))
                } else {
                    Some(t_emb)
                }
            }
        };

        let scale = 1.0 / (d as f64).sqrt();
        for block in &self.layout.blocks {
            let y = norm(g, p, &block.norm_self, x, cond, n, b);
            let y = attention(g, p, &block.self_attn, y, y, n, n, &self_mask, scale);
            let y = dropout(g, y, cfg.dropout, &mut dropout_rng);
            x = g.add(x, y);

            if let Some((norm_cross, cross)) = &block.cross {
                let y = norm(g, p, norm_cross, x, cond, n, b);
                let y = attention(g, p, cross, y, h0, n, hist, history_mask, scale);
                let y = dropout(g, y, cfg.dropout, &mut dropout_rng);
                x = g.add(x, y);
            }

            let y = norm(g, p, &block.norm_ffn, x, cond, n, b);
            let y = feed_forward(g, p[block.ffn_w], p[block.ffn_b], y);
            let y = dropout(g, y, cfg.dropout, &mut dropout_rng);
            x = g.add(x, y);
        }
        Ok(norm(g, p, &self.layout.final_norm, x, cond, n, b))
    }

    /// Single-sequence forward in eval mode: predicted `S̄_0` (`n × d`).
    pub fn predict(&self, s_t: &Tensor, t: usize, h0: &Tensor, history_mask: &[bool]) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.register(&mut g);
        let s = g.constant(s_t.clone());
        let h = g.constant(h0.clone());
        let out = self.forward(&mut g, &p, s, h, &[t], history_mask, None)?;
        Ok(g.value(out).clone())
    }
}

fn dropout(g: &mut Graph, x: NodeId, rate: f64, rng: &mut Option<&mut dyn RngCore>) -> NodeId {
    let Some(rng) = rng.as_mut() else { return x };
    if rate == 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let dim = g.value(x).raw_dim();
    let mask = Tensor::from_shape_fn(dim, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    let m = g.constant(mask);
    g.mul(x, m)
}

fn mlp(g: &mut Graph, p: &[NodeId], idx: &MlpIdx, x: NodeId) -> NodeId {
    let h = g.matmul(x, p[idx.w1]);
    let h = g.add_row(h, p[idx.b1]);
    let h = g.silu(h);
    let o = g.matmul(h, p[idx.w2]);
    g.add_row(o, p[idx.b2])
}

#[allow(clippy::too_many_arguments)]
fn norm(g: &mut Graph, p: &[NodeId], idx: &NormIdx, x: NodeId, cond: Option<NodeId>, n: usize, b: usize) -> NodeId {
    match idx {
        NormIdx::Conditional { gain, bias } => {
            let cond = cond.expect("conditional norm needs a conditioning vector");
            cond_norm(g, p, gain, bias, x, cond, n)
        }
        NormIdx::Plain { gain, bias } => {
            let y = g.normalize(x, LN_EPS);
            let gr = g.repeat_rows(p[*gain], b * n);
            let y = g.mul(y, gr);
            g.add_row(y, p[*bias])
        }
    }
}

fn cond_norm(g: &mut Graph, p: &[NodeId], gain: &MlpIdx, bias: &MlpIdx, x: NodeId, cond: NodeId, n: usize) -> NodeId {
    let y = g.normalize(x, LN_EPS);
    let raw = mlp(g, p, gain, cond);
    let gv = g.add_scalar(raw, 1.0);
    let bv = mlp(g, p, bias, cond);
    let gr = g.repeat_rows(gv, n);
    let br = g.repeat_rows(bv, n);
    let y = g.mul(y, gr);
    g.add(y, br)
}

#[allow(clippy::too_many_arguments)]
fn attention(
    g: &mut Graph,
    p: &[NodeId],
    idx: &AttnIdx,
    query: NodeId,
    keys: NodeId,
    nq: usize,
    nk: usize,
    key_mask: &[bool],
    scale: f64,
) -> NodeId {
    let q = g.matmul(query, p[idx.wq]);
    let k = g.matmul(keys, p[idx.wk]);
    let v = g.matmul(keys, p[idx.wv]);
    let a = g.attention(q, k, v, nq, nk, key_mask, scale);
    g.matmul(a, p[idx.wo])
}

fn feed_forward(g: &mut Graph, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
    let h = g.matmul(x, w);
    let h = g.add_row(h, b);
    g.relu(h)
}

fn timestep_encoding_at(t: usize, j: usize, dim: usize) -> f64 {
    let freq = 10000f64.powf(-((j / 2 * 2) as f64) / dim as f64);
    let arg = t as f64 * freq;
    if j.is_multiple_of(2) {
        arg.sin()
    } else {
        arg.cos()
    }
}

/// Sinusoidal step encoding with interleaved `(sin, cos)` pairs.
pub fn timestep_encoding(t: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|j| timestep_encoding_at(t, j, dim)).collect()
}

/// Weights of one attention module.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Tensor,
}

/// Weights of a two-layer SiLU MLP.
#[derive(Clone, Debug)]
pub struct MlpWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

fn attention_weights(g: &mut Graph, w: &AttentionWeights) -> (Vec<NodeId>, AttnIdx) {
    let p = [&w.query, &w.key, &w.value, &w.output].map(|t| g.constant(t.clone())).to_vec();
    (p, AttnIdx { wq: 0, wk: 1, wv: 2, wo: 3 })
}

/// Masked single-head self-attention followed by the output projection.
pub fn self_attention(s: &Tensor, w: &AttentionWeights, pad_mask: &[bool]) -> Result<Tensor> {
    if pad_mask.len() != s.nrows() {
        return Err(Error::ShapeMismatch(format!("mask {} for {} rows", pad_mask.len(), s.nrows())));
    }
    if pad_mask.iter().all(|&m| m) {
        return Err(Error::EmptyAttentionSupport("self-attention".into()));
    }
    let mut g = Graph::new();
    let (p, idx) = attention_weights(&mut g, w);
    let x = g.constant(s.clone());
    let n = s.nrows();
    let out = attention(&mut g, &p, &idx, x, x, n, n, pad_mask, 1.0 / (s.ncols() as f64).sqrt());
    Ok(g.value(out).clone())
}

/// Cross-attention from `s` (queries) onto the clean history `h0` (keys and values).
pub fn cross_attention(s: &Tensor, h0: &Tensor, w: &AttentionWeights, pad_mask: &[bool]) -> Result<Tensor> {
    if pad_mask.len() != h0.nrows() {
        return Err(Error::ShapeMismatch(format!("mask {} for {} rows", pad_mask.len(), h0.nrows())));
    }
    if pad_mask.iter().all(|&m| m) {
        return Err(Error::EmptyAttentionSupport("cross-attention".into()));
    }
    let mut g = Graph::new();
    let (p, idx) = attention_weights(&mut g, w);
    let x = g.constant(s.clone());
    let h = g.constant(h0.clone());
    let scale = 1.0 / (s.ncols() as f64).sqrt();
    let out = attention(&mut g, &p, &idx, x, h, s.nrows(), h0.nrows(), pad_mask, scale);
    Ok(g.value(out).clone())
}

/// Position-wise `ReLU(S·W + b)`.
pub fn ffn(s: &Tensor, w: &Tensor, b: &Array1<f64>) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(s.clone());
    let wn = g.constant(w.clone());
    let bn = g.constant(b.clone().insert_axis(ndarray::Axis(0)));
    let out = feed_forward(&mut g, wn, bn, x);
    g.value(out).clone()
}

/// Layer norm whose gain `1 + gain_mlp([t_emb ‖ h])` and bias `bias_mlp([t_emb ‖ h])`
/// come from the step embedding and pooled history.
pub fn cond_layer_norm(s: &Tensor, t_emb: &[f64], h_summary: &[f64], gain: &MlpWeights, bias: &MlpWeights) -> Tensor {
    let mut g = Graph::new();
    let mut p = Vec::new();
    for w in [gain, bias] {
        for t in [&w.w1, &w.b1, &w.w2, &w.b2] {
            p.push(g.constant(t.clone()));
        }
    }
    let gi = MlpIdx { w1: 0, b1: 1, w2: 2, b2: 3 };
    let bi = MlpIdx { w1: 4, b1: 5, w2: 6, b2: 7 };
    let cond: Vec<f64> = t_emb.iter().chain(h_summary).copied().collect();
    let cond = g.constant(Tensor::from_shape_vec((1, cond.len()), cond).expect("row"));
    let x = g.constant(s.clone());
    let out = cond_norm(&mut g, &p, &gi, &bi, x, cond, s.nrows());
    g.value(out).clone()
}

/// Last row of each group of `n` rows.
pub fn last_rows(s: &Tensor, n: usize) -> Tensor {
    let b = s.nrows() / n;
    Tensor::from_shape_fn((b, s.ncols()), |(i, j)| s[[i * n + n - 1, j]])
}

/// Masked mean of history rows.
pub fn history_summary(h0: &Tensor, pad_mask: &[bool]) -> Array1<f64> {
    let live: Vec<usize> = (0..h0.nrows()).filter(|&r| !pad_mask[r]).collect();
    let mut out = Array1::zeros(h0.ncols());
    for &r in &live {
        out += &h0.slice(s![r, ..]);
    }
    if !live.is_empty() {
        out /= live.len() as f64;
    }
    out
}
