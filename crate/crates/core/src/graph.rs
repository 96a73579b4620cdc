//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is an `Array2<f64>`; vectors are `1 × d` rows. A batch of `b`
//! sequences of length `n` is stored as a `(b·n) × d` matrix, and the
//! per-sequence ops (`attention`, `repeat_rows`, `pool_rows`) take the group
//! size explicitly.

use ndarray::{s, Array2, Axis, Zip};

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Identifies which trainable tensor a parameter leaf was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRef {
    Net(usize),
    Embedding,
}

enum Op {
    Leaf,
    Param(ParamRef),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleRows(NodeId, Vec<f64>),
    AddScalar(NodeId),
    Relu(NodeId),
    Silu(NodeId),
    Normalize { x: NodeId, inv_std: Vec<f64> },
    Attention(Box<AttentionTape>),
    RepeatRows { x: NodeId, times: usize },
    TileRows { x: NodeId, times: usize },
    ConcatCols(NodeId, NodeId),
    GatherRows { x: NodeId, idx: Vec<usize> },
    ScatterRows { x: NodeId, idx: Vec<usize> },
    PoolRows { x: NodeId, group: usize, weights: Vec<f64> },
    L2NormalizeRows { x: NodeId, norms: Vec<f64> },
    MeanSquare(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Tensor },
    WeightedSum(Vec<(NodeId, f64)>),
}

struct AttentionTape {
    q: NodeId,
    k: NodeId,
    v: NodeId,
    nq: usize,
    nk: usize,
    scale: f64,
    probs: Vec<Tensor>,
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`; earlier ids stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[[0, 0]]
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, which: ParamRef, value: &Tensor) -> NodeId {
        self.push(value.clone(), Op::Param(which))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `1 × d` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    /// Multiplies row `i` of `a` by the constant `coefs[i]`.
    pub fn scale_rows(&mut self, a: NodeId, coefs: Vec<f64>) -> NodeId {
        let mut v = self.value(a).clone();
        assert_eq!(coefs.len(), v.nrows());
        for (mut row, &c) in v.rows_mut().into_iter().zip(&coefs) {
            row *= c;
        }
        self.push(v, Op::ScaleRows(a, coefs))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)`.
    pub fn normalize(&mut self, x: NodeId, eps: f64) -> NodeId {
        let src = self.value(x);
        let mut out = src.clone();
        let mut inv_std = Vec::with_capacity(src.nrows());
        for mut row in out.rows_mut() {
            let d = row.len() as f64;
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let r = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * r);
            inv_std.push(r);
        }
        self.push(out, Op::Normalize { x, inv_std })
    }

    /// Scaled dot-product attention computed independently per group.
    ///
    /// `q` holds groups of `nq` rows, `k` and `v` groups of `nk` rows.
    /// `key_mask[g·nk + j] == true` removes key `j` of group `g`. Callers must
    /// guarantee every group keeps at least one key.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        nq: usize,
        nk: usize,
        key_mask: &[bool],
        scale: f64,
    ) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let groups = qv.nrows() / nq;
        assert_eq!(groups * nq, qv.nrows());
        assert_eq!(groups * nk, kv.nrows());
        assert_eq!(kv.nrows(), vv.nrows());
        assert_eq!(key_mask.len(), kv.nrows());
        let mut out = Tensor::zeros((qv.nrows(), vv.ncols()));
        let mut probs = Vec::with_capacity(groups);
        for g in 0..groups {
            let qs = qv.slice(s![g * nq..(g + 1) * nq, ..]);
            let ks = kv.slice(s![g * nk..(g + 1) * nk, ..]);
            let vs = vv.slice(s![g * nk..(g + 1) * nk, ..]);
            let mut p = qs.dot(&ks.t()) * scale;
            let mask = &key_mask[g * nk..(g + 1) * nk];
            for mut row in p.rows_mut() {
                softmax_masked(row.as_slice_mut().expect("contiguous"), mask);
            }
            out.slice_mut(s![g * nq..(g + 1) * nq, ..]).assign(&p.dot(&vs));
            probs.push(p);
        }
        self.push(out, Op::Attention(Box::new(AttentionTape { q, k, v, nq, nk, scale, probs })))
    }

    /// `b × d → (b·times) × d`, each row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: NodeId, times: usize) -> NodeId {
        let src = self.value(x);
        let mut out = Tensor::zeros((src.nrows() * times, src.ncols()));
        for (i, row) in src.rows().into_iter().enumerate() {
            for r in 0..times {
                out.row_mut(i * times + r).assign(&row);
            }
        }
        self.push(out, Op::RepeatRows { x, times })
    }

    /// `n × d → (times·n) × d`, the whole block stacked `times` times.
    pub fn tile_rows(&mut self, x: NodeId, times: usize) -> NodeId {
        let src = self.value(x);
        let n = src.nrows();
        let mut out = Tensor::zeros((n * times, src.ncols()));
        for t in 0..times {
            out.slice_mut(s![t * n..(t + 1) * n, ..]).assign(src);
        }
        self.push(out, Op::TileRows { x, times })
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()]).expect("row counts agree");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// `out[i] = x[idx[i]]`.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let v = self.value(x).select(Axis(0), &idx);
        self.push(v, Op::GatherRows { x, idx })
    }

    /// Places `x[i]` at row `idx[i]` of a zero matrix with `rows` rows.
    pub fn scatter_rows(&mut self, x: NodeId, idx: Vec<usize>, rows: usize) -> NodeId {
        let src = self.value(x);
        let mut out = Tensor::zeros((rows, src.ncols()));
        for (i, &dst) in idx.iter().enumerate() {
            let mut r = out.row_mut(dst);
            r += &src.row(i);
        }
        self.push(out, Op::ScatterRows { x, idx })
    }

    /// Weighted sum of each group of `group` consecutive rows.
    pub fn pool_rows(&mut self, x: NodeId, group: usize, weights: Vec<f64>) -> NodeId {
        let src = self.value(x);
        assert_eq!(weights.len(), src.nrows());
        let groups = src.nrows() / group;
        let mut out = Tensor::zeros((groups, src.ncols()));
        for g in 0..groups {
            let mut dst = out.row_mut(g);
            for (r, &w) in weights.iter().enumerate().skip(g * group).take(group) {
                if w != 0.0 {
                    dst.scaled_add(w, &src.row(r));
                }
            }
        }
        self.push(out, Op::PoolRows { x, group, weights })
    }

    /// Unit-normalizes every row; rows of zero norm stay zero.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
            norms.push(n);
        }
        self.push(out, Op::L2NormalizeRows { x, norms })
    }

    /// Mean of squared entries, as a `1 × 1` value.
    pub fn mean_square(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let v = src.iter().map(|x| x * x).sum::<f64>() / src.len() as f64;
        self.push(Tensor::from_elem((1, 1), v), Op::MeanSquare(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(&targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let v = loss / targets.len() as f64;
        self.push(Tensor::from_elem((1, 1), v), Op::CrossEntropy { logits, targets, probs })
    }

    /// `Σ w_i · x_i` over `1 × 1` inputs.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> NodeId {
        let v: f64 = terms.iter().map(|&(id, w)| w * self.scalar(id)).sum();
        self.push(Tensor::from_elem((1, 1), v), Op::WeightedSum(terms))
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: NodeId) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(self.value(output).raw_dim()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::ScaleRows(a, coefs) => {
                    let mut g = g;
                    for (mut row, &c) in g.rows_mut().into_iter().zip(coefs) {
                        row *= c;
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut g = g;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::Silu(a) => {
                    let mut g = g;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        let sg = sigmoid(x);
                        *g *= sg * (1.0 + x * (1.0 - sg));
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::Normalize { x, inv_std } => {
                    let y = &node.value;
                    let mut dx = g;
                    for ((mut drow, yrow), &r) in dx.rows_mut().into_iter().zip(y.rows()).zip(inv_std) {
                        let d = drow.len() as f64;
                        let mean_g = drow.sum() / d;
                        let mean_gy = drow.dot(&yrow) / d;
                        Zip::from(&mut drow).and(&yrow).for_each(|dv, &yv| *dv = r * (*dv - mean_g - yv * mean_gy));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention(tape) => {
                    let AttentionTape { q, k, v, nq, nk, scale, probs } = tape.as_ref();
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut dq = Tensor::zeros(qv.raw_dim());
                    let mut dk = Tensor::zeros(kv.raw_dim());
                    let mut dv = Tensor::zeros(vv.raw_dim());
                    for (grp, p) in probs.iter().enumerate() {
                        let qr = grp * nq..(grp + 1) * nq;
                        let kr = grp * nk..(grp + 1) * nk;
                        let go = g.slice(s![qr.clone(), ..]);
                        let vs = vv.slice(s![kr.clone(), ..]);
                        dv.slice_mut(s![kr.clone(), ..]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vs.t());
                        let mut ds = p * &dp;
                        for (mut srow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let dot = srow.sum();
                            srow.scaled_add(-dot, &prow);
                        }
                        ds *= *scale;
                        let ks = kv.slice(s![kr.clone(), ..]);
                        let qs = qv.slice(s![qr.clone(), ..]);
                        dq.slice_mut(s![qr, ..]).assign(&ds.dot(&ks));
                        dk.slice_mut(s![kr, ..]).assign(&ds.t().dot(&qs));
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::RepeatRows { x, times } => {
                    let rows = g.nrows() / times;
                    let mut dx = Tensor::zeros((rows, g.ncols()));
                    for (i, row) in g.rows().into_iter().enumerate() {
                        let mut d = dx.row_mut(i / times);
                        d += &row;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::TileRows { x, times } => {
                    let n = g.nrows() / times;
                    let mut dx = Tensor::zeros((n, g.ncols()));
                    for t in 0..*times {
                        dx += &g.slice(s![t * n..(t + 1) * n, ..]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    accumulate(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    accumulate(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::GatherRows { x, idx } => {
                    let mut dx = Tensor::zeros(self.value(*x).raw_dim());
                    for (i, &src) in idx.iter().enumerate() {
                        let mut d = dx.row_mut(src);
                        d += &g.row(i);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ScatterRows { x, idx } => {
                    let dx = g.select(Axis(0), idx);
                    accumulate(&mut grads, *x, dx);
                }
                Op::PoolRows { x, group, weights } => {
                    let mut dx = Tensor::zeros(self.value(*x).raw_dim());
                    for (r, &w) in weights.iter().enumerate() {
                        if w != 0.0 {
                            dx.row_mut(r).scaled_add(w, &g.row(r / group));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut dx = g;
                    for ((mut drow, yrow), &n) in dx.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                        if n > 0.0 {
                            let dot = drow.dot(&yrow);
                            drow.scaled_add(-dot, &yrow);
                            drow /= n;
                        } else {
                            drow.fill(0.0);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanSquare(a) => {
                    let src = self.value(*a);
                    let c = 2.0 * g[[0, 0]] / src.len() as f64;
                    accumulate(&mut grads, *a, src * c);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let c = g[[0, 0]] / targets.len() as f64;
                    let mut dl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        dl[[i, t]] -= 1.0;
                    }
                    dl *= c;
                    accumulate(&mut grads, *logits, dl);
                }
                Op::WeightedSum(terms) => {
                    for &(id, w) in terms {
                        accumulate(&mut grads, id, &g * w);
                    }
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(r) => grads[i].take().map(|g| (r, g)),
                _ => None,
            })
            .collect();
        Gradients { params, nodes: grads }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    params: Vec<(ParamRef, Tensor)>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a constant leaf, if it was reached.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradients of parameter leaves; several leaves may share one `ParamRef`.
    pub fn params(&self) -> &[(ParamRef, Tensor)] {
        &self.params
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place softmax over the unmasked entries; masked entries become 0.
pub(crate) fn softmax_masked(row: &mut [f64], mask: &[bool]) {
    let max = row.iter().zip(mask).filter(|(_, &m)| !m).fold(f64::NEG_INFINITY, |acc, (&x, _)| acc.max(x));
    let mut sum = 0.0;
    for (x, &m) in row.iter_mut().zip(mask) {
        *x = if m { 0.0 } else { (*x - max).exp() };
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor) -> Tensor {
        let h = 1e-6;
        let mut out = Tensor::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            out[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn normalize_gradient() {
        let x0 = array![[0.3, -1.2, 2.0, 0.7], [1.0, 1.5, -0.5, 0.0]];
        let w = array![[1.0, -2.0, 0.5, 3.0], [0.2, 0.1, -1.0, 2.0]];
        let f = |x: &Tensor| {
            let mut g = Graph::new();
            let xi = g.constant(x.clone());
            let wi = g.constant(w.clone());
            let y = g.normalize(xi, 1e-5);
            let z = g.mul(y, wi);
            let out = g.mean_square(z);
            (g.scalar(out), g.backward(out).wrt(xi).unwrap().clone())
        };
        let (_, analytic) = f(&x0);
        let numeric = numeric_grad(|x| f(x).0, &x0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn attention_gradient_with_mask() {
        let q0 = array![[0.1, 0.4], [-0.3, 0.2], [0.5, -0.5], [0.9, 0.1]];
        let k0 = array![[0.2, -0.1], [0.7, 0.3], [-0.4, 0.8], [0.3, 0.3]];
        let v0 = array![[1.0, 0.0], [0.5, -1.0], [0.2, 0.2], [-0.7, 0.4]];
        let mask = [false, true, false, false];
        let f = |q: &Tensor, k: &Tensor, v: &Tensor| {
            let mut g = Graph::new();
            let (qi, ki, vi) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
            let a = g.attention(qi, ki, vi, 2, 2, &mask, 0.7);
            let out = g.mean_square(a);
            let grads = g.backward(out);
            (g.scalar(out), [qi, ki, vi].map(|i| grads.wrt(i).unwrap().clone()))
        };
        let (_, [dq, dk, dv]) = f(&q0, &k0, &v0);
        assert_close(&dq, &numeric_grad(|q| f(q, &k0, &v0).0, &q0), 1e-6);
        assert_close(&dk, &numeric_grad(|k| f(&q0, k, &v0).0, &k0), 1e-6);
        assert_close(&dv, &numeric_grad(|v| f(&q0, &k0, v).0, &v0), 1e-6);
        // masked key receives no gradient
        assert_eq!(dk.row(1).sum(), 0.0);
    }

    #[test]
    fn cross_entropy_and_l2_normalize_gradient() {
        let x0 = array![[0.3, -1.2, 2.0], [1.0, 1.5, -0.5]];
        let table = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.3, -0.2, 1.0], [-1.0, 1.0, 1.0]];
        let f = |x: &Tensor| {
            let mut g = Graph::new();
            let xi = g.constant(x.clone());
            let ti = g.constant(table.clone());
            let xn = g.l2_normalize_rows(xi);
            let tn = g.l2_normalize_rows(ti);
            let tt = g.transpose(tn);
            let logits = g.matmul(xn, tt);
            let logits = g.scale(logits, 1.0 / 0.3);
            let out = g.cross_entropy(logits, vec![2, 0]);
            (g.scalar(out), g.backward(out).wrt(xi).unwrap().clone())
        };
        let (_, analytic) = f(&x0);
        assert_close(&analytic, &numeric_grad(|x| f(x).0, &x0), 1e-6);
    }

    #[test]
    fn structural_ops_gradient() {
        let x0 = array![[0.3, -1.2], [1.0, 1.5], [-0.5, 0.25]];
        let f = |x: &Tensor| {
            let mut g = Graph::new();
            let xi = g.constant(x.clone());
            let r = g.repeat_rows(xi, 2);
            let t = g.tile_rows(xi, 2);
            let sum = g.add(r, t);
            let act = g.silu(sum);
            let pooled = g.pool_rows(act, 3, vec![0.5, 0.0, 1.0, 2.0, -1.0, 0.3]);
            let gathered = g.gather_rows(xi, vec![2, 0, 2]);
            let scattered = g.scatter_rows(gathered, vec![4, 1, 0], 6);
            let c = g.concat_cols(pooled, pooled);
            let sq = g.mean_square(c);
            let sq2 = g.mean_square(scattered);
            let out = g.weighted_sum(vec![(sq, 1.0), (sq2, 0.5)]);
            (g.scalar(out), g.backward(out).wrt(xi).unwrap().clone())
        };
        let (_, analytic) = f(&x0);
        assert_close(&analytic, &numeric_grad(|x| f(x).0, &x0), 1e-6);
    }

    #[test]
    fn softmax_masked_ignores_masked_entries() {
        let mut row = [1.0, 100.0, 1.0];
        softmax_masked(&mut row, &[false, true, false]);
        assert_eq!(row, [0.5, 0.0, 0.5]);
    }
}
