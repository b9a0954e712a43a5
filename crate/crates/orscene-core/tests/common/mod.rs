//! Shared fixtures for integration tests: random combinatorial complexes,
//! independently coded scalar oracles, and tolerance helpers.

use orscene_core::cc::{CellKind, CombinatorialComplex, FrozenComplex};
use orscene_core::hat::{feature_dims, HatConfig, HatNetwork};
use orscene_core::numerics::{ParamStore, RngStream, Tensor};
use orscene_core::CellId;

pub const RANK0_KINDS: [CellKind; 5] = [
    CellKind::Joint,
    CellKind::Object,
    CellKind::EvidenceRobotLog,
    CellKind::EvidenceAudio,
    CellKind::EvidenceScreen,
];
pub const RANK1_KINDS: [CellKind; 5] = [
    CellKind::SkeletonEdge,
    CellKind::SpatialEdge,
    CellKind::SemanticEdge,
    CellKind::EvidenceEdge,
    CellKind::TemporalEdge,
];
pub const RANK2_KINDS: [CellKind; 2] = [CellKind::PersonCell, CellKind::FunctionalCell];

/// Fixed raw-feature width per kind so embedders line up across complexes.
pub fn test_feature_dim(kind: CellKind) -> usize {
    match kind {
        CellKind::Joint => 5,
        CellKind::Object => 4,
        CellKind::EvidenceRobotLog => 6,
        CellKind::EvidenceAudio => 3,
        CellKind::EvidenceScreen => 2,
        CellKind::SkeletonEdge | CellKind::SpatialEdge => 1,
        CellKind::SemanticEdge | CellKind::EvidenceEdge | CellKind::TemporalEdge => 2,
        CellKind::PersonCell => 3,
        CellKind::FunctionalCell => 2,
    }
}

/// A random valid complex: roughly half rank-0 cells, a third rank-1, the
/// rest rank-2, with random incidences respecting the strict rank order
/// (including some rank-0 -> rank-2 pairs). Isolated cells are possible.
pub fn random_complex(rng: &mut RngStream, n_cells: usize) -> CombinatorialComplex {
    let mut cc = CombinatorialComplex::new();
    let n0 = (n_cells / 2).max(1);
    let n1 = (n_cells * 3 / 10).min(n_cells - n0);
    let n2 = n_cells - n0 - n1;

    let mut by_rank: Vec<Vec<CellId>> = vec![Vec::new(), Vec::new(), Vec::new()];
    for rank in 0..3 {
        let (count, kinds): (usize, &[CellKind]) = match rank {
            0 => (n0, &RANK0_KINDS),
            1 => (n1, &RANK1_KINDS),
            _ => (n2, &RANK2_KINDS),
        };
        for _ in 0..count {
            let kind = kinds[rng.range_usize(kinds.len())];
            let position = kind
                .requires_position()
                .then(|| [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(0.0, 2.0)]);
            let feature = (0..test_feature_dim(kind))
                .map(|_| rng.range(-1.0, 1.0))
                .collect();
            let id = cc.push_cell(kind, position, None, feature).unwrap();
            by_rank[rank].push(id);
        }
    }

    // attach each higher cell to a few random strictly-lower cells
    for upper_rank in 1..3 {
        for &upper in by_rank[upper_rank].clone().iter() {
            let attachments = rng.range_usize(4);
            for _ in 0..attachments {
                let lower_rank = rng.range_usize(upper_rank);
                if by_rank[lower_rank].is_empty() {
                    continue;
                }
                let lower = by_rank[lower_rank][rng.range_usize(by_rank[lower_rank].len())];
                // duplicates are rejected; ignore and move on
                let _ = cc.add_incidence(lower, upper);
            }
        }
    }
    cc
}

pub fn random_frozen(rng: &mut RngStream, n_cells: usize) -> FrozenComplex {
    random_complex(rng, n_cells).freeze().expect("random complex is valid")
}

/// Network with every parameter (including phi and the rank embeddings)
/// randomized, so oracle comparisons exercise the bias path.
pub fn random_net(
    config: HatConfig,
    frozen: &FrozenComplex,
    seed: u64,
) -> (HatNetwork, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed);
    let dims = feature_dims(frozen.cells().iter()).unwrap();
    let net = HatNetwork::init(config, &dims, &mut store, &mut rng).unwrap();
    randomize_store(&mut store, &mut rng);
    (net, store)
}

/// Overwrites every trainable parameter with small random values.
pub fn randomize_store(store: &mut ParamStore, rng: &mut RngStream) {
    for id in store.ids().collect::<Vec<_>>() {
        if !store.get(id).trainable {
            continue;
        }
        let shape = store.value(id).shape().to_vec();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.range(-0.4, 0.4))
            .collect();
        store.get_mut(id).value = Tensor::from_vec(&shape, data).unwrap();
    }
}

pub fn small_config() -> HatConfig {
    HatConfig {
        d_model: 8,
        heads: 2,
        d_r: 4,
        layers: 2,
        max_rank: 2,
    }
}

/// Independent scalar re-implementation of one attention layer, straight
/// from the defining equations: per cell, per head, score every support
/// member, softmax, weight the value projections, concatenate heads, apply
/// the output projection, add the residual. Plain loops over raw slices.
pub fn scalar_layer_forward(
    net: &HatNetwork,
    layer_index: usize,
    frozen: &FrozenComplex,
    input: &Tensor,
    store: &ParamStore,
) -> Tensor {
    let d = net.config.d_model;
    let dk = net.config.d_k();
    let heads = net.config.heads;
    let layer = &net.layers[layer_index];
    let n = frozen.len();
    let mut out = vec![0.0; n * d];

    let matvec = |m: &Tensor, x: &[f64]| -> Vec<f64> {
        // m is (in x out); x is a row vector of length in
        let (rows, cols) = (m.shape()[0], m.shape()[1]);
        let mut y = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                y[c] += x[r] * m.data()[r * cols + c];
            }
        }
        y
    };

    for y_idx in 0..n {
        let y = CellId(y_idx as u32);
        let mut support: Vec<usize> = frozen
            .boundary(y)
            .iter()
            .chain(frozen.coboundary(y))
            .map(|c| c.index())
            .collect();
        support.push(y_idx);
        support.sort_unstable();

        let h_y = &input.data()[y_idx * d..(y_idx + 1) * d];
        let rank_y = frozen.cells()[y_idx].rank;
        let mut concat = Vec::with_capacity(heads * dk);
        for (h, head) in layer.heads.iter().enumerate() {
            let q = matvec(store.value(head.w_q), h_y);
            let mut scores = Vec::with_capacity(support.len());
            for &x_idx in &support {
                let h_x = &input.data()[x_idx * d..(x_idx + 1) * d];
                let k = matvec(store.value(head.w_k), h_x);
                let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
                let rank_x = frozen.cells()[x_idx].rank;
                let e_y = store.value(layer.rank_embeddings[rank_y]).data();
                let e_x = store.value(layer.rank_embeddings[rank_x]).data();
                let phi = store.value(layer.phi);
                let mut bias = 0.0;
                for r in 0..net.config.d_r {
                    bias += e_y[r] * e_x[r] * phi.data()[r * heads + h];
                }
                scores.push(dot / (dk as f64).sqrt() + bias);
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut message = vec![0.0; dk];
            for (pos, &x_idx) in support.iter().enumerate() {
                let alpha = exps[pos] / total;
                let h_x = &input.data()[x_idx * d..(x_idx + 1) * d];
                let v = matvec(store.value(head.w_v), h_x);
                for (m, vv) in message.iter_mut().zip(&v) {
                    *m += alpha * vv;
                }
            }
            concat.extend(message);
        }
        let projected = matvec(store.value(layer.w_o), &concat);
        for c in 0..d {
            out[y_idx * d + c] = h_y[c] + projected[c];
        }
    }
    Tensor::from_vec(&[n, d], out).unwrap()
}

/// Per-cell layer-0 embedding computed directly.
pub fn scalar_embed(net: &HatNetwork, frozen: &FrozenComplex, store: &ParamStore) -> Tensor {
    let d = net.config.d_model;
    let n = frozen.len();
    let mut out = vec![0.0; n * d];
    for cell in frozen.cells() {
        let embedder = &net.embedders.by_kind[&cell.kind];
        let w = store.value(embedder.weight);
        let b = store.value(embedder.bias);
        let row = &mut out[cell.id.index() * d..(cell.id.index() + 1) * d];
        row.copy_from_slice(b.data());
        for (r, &x) in cell.raw_feature.iter().enumerate() {
            for c in 0..d {
                row[c] += x * w.data()[r * d + c];
            }
        }
    }
    Tensor::from_vec(&[n, d], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

