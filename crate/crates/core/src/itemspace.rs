//! Item embedding table and cosine rounding back to item IDs.

use ndarray::Axis;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Tensor;

/// Item identifier; `0` is the padding item.
pub type ItemId = u32;

pub const PADDING: ItemId = 0;

/// Learnable lookup from item IDs to `dim`-vectors. Row 0 is the padding row
/// and is held at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemEmbeddingTable {
    weights: Tensor,
}

impl ItemEmbeddingTable {
    /// Uniform init in `[-1/sqrt(dim), 1/sqrt(dim)]`, padding row zeroed.
    pub fn new(num_items: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut weights = Tensor::from_shape_fn((num_items + 1, dim), |_| rng.random_range(-bound..bound));
        weights.row_mut(0).fill(0.0);
        Self { weights }
    }

    /// Wraps an existing `(num_items + 1) × dim` matrix; the padding row is zeroed.
    pub fn from_weights(mut weights: Tensor) -> Result<Self> {
        if weights.nrows() < 2 || weights.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "embedding table needs at least one item and one column, got {:?}",
                weights.dim()
            )));
        }
        weights.row_mut(0).fill(0.0);
        Ok(Self { weights })
    }

    pub fn num_items(&self) -> usize {
        self.weights.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn check_id(&self, id: ItemId) -> Result<()> {
        if id as usize > self.num_items() {
            return Err(Error::ItemOutOfRange { id, num_items: self.num_items() });
        }
        Ok(())
    }

    /// Deterministic lookup: row `i` of the result is `weights[ids[i]]`.
    pub fn embed(&self, ids: &[ItemId]) -> Result<Tensor> {
        for &id in ids {
            self.check_id(id)?;
        }
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Ok(self.weights.select(Axis(0), &idx))
    }

    /// Restores table invariants after an update: padding row zero, and any
    /// non-padding row whose norm collapsed is re-drawn from the init law.
    pub fn repair(&mut self, rng: &mut impl Rng) -> usize {
        self.weights.row_mut(0).fill(0.0);
        let bound = 1.0 / (self.dim() as f64).sqrt();
        let mut repaired = 0;
        for mut row in self.weights.rows_mut().into_iter().skip(1) {
            if row.dot(&row).sqrt() < 1e-12 {
                row.mapv_inplace(|_| rng.random_range(-bound..bound));
                repaired += 1;
            }
        }
        repaired
    }

    /// Cosine similarity of `query` against every non-padding row; entry
    /// `i` belongs to item `i + 1`.
    pub fn cosine_scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("query has {} dims, table has {}", query.len(), self.dim())));
        }
        let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(self
            .weights
            .rows()
            .into_iter()
            .skip(1)
            .map(|row| {
                let rn = row.dot(&row).sqrt();
                if rn == 0.0 {
                    0.0
                } else {
                    row.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (rn * qn)
                }
            })
            .collect())
    }

    /// The `k` items closest in cosine to `query`, best first, ties by smaller ID.
    pub fn rank_items(&self, query: &[f64], k: usize) -> Result<Vec<(ItemId, f64)>> {
        if k == 0 || k > self.num_items() {
            return Err(Error::InvalidCutoff { k, max: self.num_items() });
        }
        let scores = self.cosine_scores(query)?;
        Ok(top_k(&scores, k))
    }

    /// Item with maximal cosine similarity.
    pub fn round_to_item(&self, query: &[f64]) -> Result<ItemId> {
        Ok(self.rank_items(query, 1)?[0].0)
    }
}

/// Top-`k` of `scores` (index `i` ↦ item `i + 1`), descending, ties by ID.
pub(crate) fn top_k(scores: &[f64], k: usize) -> Vec<(ItemId, f64)> {
    let order = |a: &(ItemId, f64), b: &(ItemId, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0));
    let mut all: Vec<(ItemId, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as ItemId + 1, s)).collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_by(order);
    all
}
