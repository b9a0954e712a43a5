//! Higher-order attention over a frozen combinatorial complex.
//!
//! Each cell attends over its incidence neighborhood plus itself with scaled
//! dot-product scores shifted by a learnable rank-pair bias
//! phi(e_rank(y) * e_rank(x)); heads are concatenated, projected, and added
//! residually. Per-kind affine embedders lift raw multimodal features into
//! the shared model width, and pooling takes per-rank means followed by one
//! learned projection.

use std::collections::BTreeMap;
use std::rc::Rc;

use thiserror::Error;

use crate::cc::{Cell, CellId, CellKind, FrozenComplex};
use crate::numerics::{NumericsError, ParamId, ParamStore, RngStream, Tape, Tensor, ValueId};

#[derive(Debug, Error)]
pub enum HatError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("no embedder for cell kind {0:?}")]
    MissingEmbedder(CellKind),
    #[error("embedder for {kind:?} expects input dim {expected}, got {got}")]
    DimMismatch {
        kind: CellKind,
        expected: usize,
        got: usize,
    },
    #[error("rank {rank} exceeds configured max rank {max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Model hyperparameters. `d_model` must divide evenly into `heads`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HatConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_r: usize,
    pub layers: usize,
    pub max_rank: usize,
}

impl Default for HatConfig {
    fn default() -> Self {
        HatConfig {
            d_model: 64,
            heads: 4,
            d_r: 16,
            layers: 2,
            max_rank: 2,
        }
    }
}

impl HatConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn rank_count(&self) -> usize {
        self.max_rank + 1
    }

    pub fn validate(&self) -> Result<(), HatError> {
        if self.d_model == 0 || self.heads == 0 || self.d_r == 0 || self.layers == 0 {
            return Err(HatError::InvalidConfig("all dims must be >= 1".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(HatError::InvalidConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// Per-layer weights: per-head projections, output projection, rank
/// embeddings, and the bias projection phi. Weights are not shared across
/// layers.
#[derive(Debug, Clone)]
pub struct HatLayerParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub rank_embeddings: Vec<ParamId>,
    pub phi: ParamId,
}

#[derive(Debug, Clone)]
pub struct KindEmbedder {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
}

/// One learned affine map per cell kind, raw width -> d_model.
#[derive(Debug, Clone, Default)]
pub struct InputEmbedders {
    pub by_kind: BTreeMap<CellKind, KindEmbedder>,
}

/// The full network: embedders, stacked attention layers, pooling projection.
#[derive(Debug, Clone)]
pub struct HatNetwork {
    pub config: HatConfig,
    pub embedders: InputEmbedders,
    pub layers: Vec<HatLayerParams>,
    pub pool_weight: ParamId,
    pub pool_bias: ParamId,
}

/// Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)).
pub fn xavier(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.range(-bound, bound)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("finite init")
}

/// Raw feature width per cell kind; every kind must be internally consistent.
pub fn feature_dims<'a>(
    cells: impl Iterator<Item = &'a Cell>,
) -> Result<BTreeMap<CellKind, usize>, HatError> {
    let mut dims = BTreeMap::new();
    for cell in cells {
        let dim = cell.raw_feature.len();
        match dims.get(&cell.kind) {
            None => {
                dims.insert(cell.kind, dim);
            }
            Some(&existing) if existing != dim => {
                return Err(HatError::DimMismatch {
                    kind: cell.kind,
                    expected: existing,
                    got: dim,
                });
            }
            _ => {}
        }
    }
    Ok(dims)
}

impl HatNetwork {
    /// Builds parameters for the given per-kind raw feature widths. The bias
    /// projection phi starts at zero so training begins at the bias-free
    /// reduction of plain scaled dot-product attention.
    pub fn init(
        config: HatConfig,
        dims: &BTreeMap<CellKind, usize>,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Result<Self, HatError> {
        config.validate()?;
        let d = config.d_model;
        let dk = config.d_k();

        let mut embedders = InputEmbedders::default();
        for (&kind, &input_dim) in dims {
            let name = format!("embed.{:?}", kind).to_lowercase();
            let weight = store.add(format!("{name}.w"), xavier(rng, input_dim, d));
            let bias = store.add(format!("{name}.b"), Tensor::zeros(&[1, d]));
            embedders.by_kind.insert(
                kind,
                KindEmbedder {
                    weight,
                    bias,
                    input_dim,
                },
            );
        }

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut heads = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                heads.push(HeadParams {
                    w_q: store.add(format!("layer{l}.head{h}.wq"), xavier(rng, d, dk)),
                    w_k: store.add(format!("layer{l}.head{h}.wk"), xavier(rng, d, dk)),
                    w_v: store.add(format!("layer{l}.head{h}.wv"), xavier(rng, d, dk)),
                });
            }
            // zero-init: every layer starts at the residual identity and the
            // attention branch fades in as W_O trains, which keeps early
            // pooled statistics clean
            let w_o = store.add(
                format!("layer{l}.wo"),
                Tensor::zeros(&[config.heads * dk, d]),
            );
            let scale = 1.0 / (config.d_r as f64).sqrt();
            let rank_embeddings = (0..config.rank_count())
                .map(|r| {
                    let data = rng.normal_vec(config.d_r).iter().map(|x| x * scale).collect();
                    store.add(
                        format!("layer{l}.rank{r}"),
                        Tensor::from_vec(&[1, config.d_r], data).expect("finite init"),
                    )
                })
                .collect();
            let phi = store.add(
                format!("layer{l}.phi"),
                Tensor::zeros(&[config.d_r, config.heads]),
            );
            layers.push(HatLayerParams {
                heads,
                w_o,
                rank_embeddings,
                phi,
            });
        }

        let pool_weight = store.add(
            "pool.w",
            xavier(rng, config.rank_count() * d, d),
        );
        let pool_bias = store.add("pool.b", Tensor::zeros(&[1, d]));

        Ok(HatNetwork {
            config,
            embedders,
            layers,
            pool_weight,
            pool_bias,
        })
    }

    fn check_ranks(&self, frozen: &FrozenComplex) -> Result<(), HatError> {
        let max = frozen.cells().iter().map(|c| c.rank).max().unwrap_or(0);
        if max > self.config.max_rank {
            return Err(HatError::RankOutOfRange {
                rank: max,
                max: self.config.max_rank,
            });
        }
        Ok(())
    }

    /// Layer-0 features: h_y = raw_feature(y) * W_kind + b_kind, batched per
    /// kind and regathered into cell-id order.
    pub fn embed_inputs(
        &self,
        frozen: &FrozenComplex,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<ValueId, HatError> {
        self.check_ranks(frozen)?;
        let d = self.config.d_model;
        let n = frozen.len();
        if n == 0 {
            return Ok(tape.zeros(&[0, d]));
        }
        let mut groups: BTreeMap<CellKind, Vec<usize>> = BTreeMap::new();
        for cell in frozen.cells() {
            groups.entry(cell.kind).or_default().push(cell.id.index());
        }
        let mut blocks = Vec::with_capacity(groups.len());
        let mut order = Vec::with_capacity(n);
        for (&kind, rows) in &groups {
            let embedder = self
                .embedders
                .by_kind
                .get(&kind)
                .ok_or(HatError::MissingEmbedder(kind))?;
            let mut raw = Vec::with_capacity(rows.len() * embedder.input_dim);
            for &row in rows {
                let feature = &frozen.cells()[row].raw_feature;
                if feature.len() != embedder.input_dim {
                    return Err(HatError::DimMismatch {
                        kind,
                        expected: embedder.input_dim,
                        got: feature.len(),
                    });
                }
                raw.extend_from_slice(feature);
            }
            let raw = tape.constant(Tensor::from_vec(&[rows.len(), embedder.input_dim], raw)?);
            let w = tape.param(store, embedder.weight);
            let b = tape.param(store, embedder.bias);
            let projected = tape.matmul(raw, w)?;
            let block = tape.add_row_broadcast(projected, b)?;
            blocks.push(block);
            order.extend_from_slice(rows);
        }
        let stacked = tape.concat_rows(&blocks)?;
        // order[p] = cell row stored at stacked position p; invert it
        let mut lookup = vec![0usize; n];
        for (pos, &row) in order.iter().enumerate() {
            lookup[row] = pos;
        }
        Ok(tape.gather_rows(stacked, Rc::new(lookup))?)
    }

    /// On-tape bias table of shape (rank_count^2, heads):
    /// row (ry * rank_count + rx) = phi(e_ry * e_rx).
    fn bias_table(
        &self,
        layer: &HatLayerParams,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<ValueId, HatError> {
        let r = self.config.rank_count();
        let embeds: Vec<ValueId> = layer
            .rank_embeddings
            .iter()
            .map(|&id| tape.param(store, id))
            .collect();
        let mut rows = Vec::with_capacity(r * r);
        for &ey in &embeds {
            for &ex in &embeds {
                rows.push(tape.mul(ey, ex)?);
            }
        }
        let stacked = tape.concat_rows(&rows)?;
        let phi = tape.param(store, layer.phi);
        Ok(tape.matmul(stacked, phi)?)
    }

    /// One attention layer: per-head masked attention over N(y) + {y} with
    /// rank-pair bias, head concatenation, output projection, residual add.
    pub fn layer_forward(
        &self,
        layer_index: usize,
        features: ValueId,
        support: &Rc<Vec<Vec<usize>>>,
        ranks: &Rc<Vec<usize>>,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<ValueId, HatError> {
        let layer = &self.layers[layer_index];
        let dk = self.config.d_k();
        let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
        let bias_table = self.bias_table(layer, tape, store)?;

        let mut messages = Vec::with_capacity(layer.heads.len());
        for (h, head) in layer.heads.iter().enumerate() {
            let wq = tape.param(store, head.w_q);
            let wk = tape.param(store, head.w_k);
            let wv = tape.param(store, head.w_v);
            let q = tape.matmul(features, wq)?;
            // scaling the (n x d_k) queries instead of the (n x n) scores
            // saves a full pairwise pass per head
            let q = tape.scale(q, inv_sqrt_dk)?;
            let k = tape.matmul(features, wk)?;
            let v = tape.matmul(features, wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let bias = tape.rank_pair_expand(
                bias_table,
                h,
                ranks.clone(),
                self.config.rank_count(),
            )?;
            let biased = tape.add(scores, bias)?;
            let alpha = tape.masked_softmax_rows(biased, support.clone())?;
            messages.push(tape.matmul(alpha, v)?);
        }
        let concat = tape.concat_cols(&messages)?;
        let wo = tape.param(store, layer.w_o);
        let projected = tape.matmul(concat, wo)?;
        Ok(tape.add(features, projected)?)
    }

    /// Embedding followed by every attention layer; returns all layer states
    /// (index 0 = embedding, index L = final).
    pub fn forward(
        &self,
        frozen: &FrozenComplex,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<ForwardPass, HatError> {
        let support = Rc::new(frozen.attention_support());
        let ranks = Rc::new(frozen.ranks());
        let mut states = vec![self.embed_inputs(frozen, tape, store)?];
        for l in 0..self.layers.len() {
            let next =
                self.layer_forward(l, *states.last().unwrap(), &support, &ranks, tape, store)?;
            states.push(next);
        }
        Ok(ForwardPass { states })
    }

    /// Per-rank mean pooling (zero vector for an empty rank), concatenated in
    /// rank order and passed through one learned affine projection.
    pub fn pool(
        &self,
        frozen: &FrozenComplex,
        features: ValueId,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<ValueId, HatError> {
        let d = self.config.d_model;
        let mut parts = Vec::with_capacity(self.config.rank_count());
        for rank in 0..self.config.rank_count() {
            let rows = frozen.rank_rows(rank);
            if rows.is_empty() {
                parts.push(tape.zeros(&[1, d]));
            } else {
                let gathered = tape.gather_rows(features, Rc::new(rows.to_vec()))?;
                parts.push(tape.mean_rows(gathered)?);
            }
        }
        let concat = tape.concat_cols(&parts)?;
        let w = tape.param(store, self.pool_weight);
        let b = tape.param(store, self.pool_bias);
        let projected = tape.matmul(concat, w)?;
        Ok(tape.add(projected, b)?)
    }

    /// The rank-pair bias vector phi(e_rank_y * e_rank_x), one entry per head,
    /// evaluated directly from parameter values.
    pub fn rank_bias(
        &self,
        layer_index: usize,
        rank_y: usize,
        rank_x: usize,
        store: &ParamStore,
    ) -> Result<Vec<f64>, HatError> {
        let max = self.config.max_rank;
        for rank in [rank_y, rank_x] {
            if rank > max {
                return Err(HatError::RankOutOfRange { rank, max });
            }
        }
        let layer = &self.layers[layer_index];
        let ey = store.value(layer.rank_embeddings[rank_y]);
        let ex = store.value(layer.rank_embeddings[rank_x]);
        let prod = ey.mul(ex)?;
        let bias = prod.matmul(store.value(layer.phi))?;
        Ok(bias.data().to_vec())
    }

    /// Attention distribution of cell `y` for one head and layer, computed
    /// cell-by-cell from the given feature state: support is exactly
    /// N(y) + {y} and the coefficients sum to one.
    pub fn attention_coeffs(
        &self,
        layer_index: usize,
        head_index: usize,
        y: CellId,
        frozen: &FrozenComplex,
        features: &Tensor,
        store: &ParamStore,
    ) -> Result<Vec<(CellId, f64)>, HatError> {
        self.check_ranks(frozen)?;
        let layer = &self.layers[layer_index];
        let head = &layer.heads[head_index];
        let dk = self.config.d_k();
        let mut rows = frozen.neighborhood_rows(y);
        let pos = rows.binary_search(&y.index()).unwrap_or_else(|e| e);
        rows.insert(pos, y.index());

        let hy = features.gather_rows(&[y.index()])?;
        let q = hy.matmul(store.value(head.w_q))?;
        let rank_y = frozen.cell(y).rank;
        let mut scores = Vec::with_capacity(rows.len());
        for &row in &rows {
            let hx = features.gather_rows(&[row])?;
            let k = hx.matmul(store.value(head.w_k))?;
            let mut dot = 0.0;
            for (qv, kv) in q.data().iter().zip(k.data()) {
                dot += qv * kv;
            }
            let rank_x = frozen.cells()[row].rank;
            let bias = self.rank_bias(layer_index, rank_y, rank_x, store)?[head_index];
            scores.push(dot / (dk as f64).sqrt() + bias);
        }
        let weights = crate::numerics::softmax_row(
            &Tensor::from_vec(&[scores.len()], scores)?,
            None,
        )?;
        Ok(rows
            .iter()
            .zip(weights.data())
            .map(|(&row, &w)| (CellId(row as u32), w))
            .collect())
    }
}

/// All feature states of one forward pass (layer 0 = input embedding).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub states: Vec<ValueId>,
}

impl ForwardPass {
    pub fn final_state(&self) -> ValueId {
        *self.states.last().expect("at least the embedding state")
    }

    pub fn layer0(&self) -> ValueId {
        self.states[0]
    }
}
