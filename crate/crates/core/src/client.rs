//! Client round: complement the local graph and labels with the server's
//! pseudo artifacts, train locally, and build the upload.

use ndarray::{Array2, ArrayView2};

use crate::error::{FedglError, Result};
use crate::gcn::{self, ModelWeights, OptimizerState, Targets};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::sparse::CsrMatrix;

/// Which per-node matrix is uploaded as the client's node embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingSource {
    /// Second-layer output (pre-softmax, C columns).
    #[default]
    Output,
    /// First-layer activations (h columns).
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalHyper {
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub dropout: f64,
    pub embedding_source: EmbeddingSource,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub graph: Graph,
    norm_adj_base: NormalizedAdjacency,
    /// Adjacency used in the latest round (base plus pseudo-graph term).
    current_adj: CsrMatrix,
    labels: Array2<f64>,
    pub weights: ModelWeights,
    pub optimizer: OptimizerState,
    rng: SimRng,
}

impl ClientState {
    /// The client's dropout stream is keyed by `(seed, client_id)`.
    pub fn new(
        client_id: usize,
        graph: Graph,
        weights: ModelWeights,
        learning_rate: f64,
        weight_decay: f64,
        seed: u64,
    ) -> Result<Self> {
        if graph.num_features() != weights.features() || graph.num_classes != weights.classes() {
            return Err(FedglError::validation(format!(
                "client {client_id}: graph has {} features / {} classes, model expects {} / {}",
                graph.num_features(),
                graph.num_classes,
                weights.features(),
                weights.classes()
            )));
        }
        let norm_adj_base = normalize_adjacency(&graph.adjacency)?;
        let current_adj = norm_adj_base.matrix().clone();
        let labels = graph.one_hot_labels();
        let optimizer = OptimizerState::new(&weights, learning_rate, weight_decay);
        Ok(ClientState {
            client_id,
            norm_adj_base,
            current_adj,
            labels,
            weights,
            optimizer,
            rng: stream_rng(seed, Stream::Client, client_id as u64),
            graph,
        })
    }

    pub fn base_adjacency(&self) -> &NormalizedAdjacency {
        &self.norm_adj_base
    }

    pub fn current_adjacency(&self) -> &CsrMatrix {
        &self.current_adj
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn node_count(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Evaluation-mode outputs of `weights` on the current adjacency.
    pub fn predict(&self, weights: &ModelWeights) -> Result<gcn::ForwardOutput> {
        gcn::predict(&self.current_adj, &self.graph.features, weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpload {
    pub weights: ModelWeights,
    pub predictions: Array2<f64>,
    pub embeddings: Array2<f64>,
    pub node_count: usize,
    pub ids: Vec<usize>,
}

/// `Â + β · D̄^{-1/2} Ā_k D̄^{-1/2}` with `D̄` the row sums of the slice;
/// zero-degree rows contribute nothing.
pub fn complement_adjacency(base: &NormalizedAdjacency, slice: &CsrMatrix, beta: f64) -> Result<CsrMatrix> {
    if !(beta >= 0.0) {
        return Err(FedglError::validation(format!("beta must be non-negative, got {beta}")));
    }
    let base = base.matrix();
    if slice.shape() != base.shape() {
        return Err(FedglError::validation(format!(
            "pseudo-graph slice {:?} does not match adjacency {:?}",
            slice.shape(),
            base.shape()
        )));
    }
    if beta == 0.0 || slice.nnz() == 0 {
        return Ok(base.clone());
    }
    let inv_sqrt: Vec<f64> = slice
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let rows = (0..slice.nrows())
        .map(|r| {
            let (cols, vals) = slice.row(r);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| (c, inv_sqrt[r] * v * inv_sqrt[c]))
                .collect()
        })
        .collect();
    base.add_scaled(&CsrMatrix::from_sorted_rows(slice.ncols(), rows), beta)
}

/// Pseudo labels restricted to non-training rows, and the mask of rows that
/// still carry one.
pub fn prepare_ssl_targets(slice: &ArrayView2<f64>, train_mask: &[bool]) -> Result<(Array2<f64>, Vec<bool>)> {
    if slice.nrows() != train_mask.len() {
        return Err(FedglError::validation(format!(
            "pseudo-label slice has {} rows, train mask {}",
            slice.nrows(),
            train_mask.len()
        )));
    }
    let mut targets = slice.to_owned();
    let mut mask = vec![false; train_mask.len()];
    for (i, mut row) in targets.rows_mut().into_iter().enumerate() {
        if train_mask[i] {
            row.fill(0.0);
        } else {
            mask[i] = row.iter().any(|&v| v != 0.0);
        }
    }
    Ok((targets, mask))
}

/// One client round: start from `start`, complement the adjacency with
/// `pseudo_graph` (the client's square slice), train `epochs` epochs on
/// labels plus `pseudo_labels` (row slice), then upload eval-mode outputs.
pub fn local_train(
    state: &mut ClientState,
    start: &ModelWeights,
    pseudo_labels: &ArrayView2<f64>,
    pseudo_graph: &CsrMatrix,
    hyper: &LocalHyper,
    round: usize,
) -> Result<RoundUpload> {
    if hyper.epochs == 0 {
        return Err(FedglError::validation("local epochs must be at least 1"));
    }
    if !start.same_shape(&state.weights) {
        return Err(FedglError::validation("global weights do not match the client model"));
    }
    state.weights = start.clone();
    state.current_adj = complement_adjacency(&state.norm_adj_base, pseudo_graph, hyper.beta)?;
    let (ssl_labels, ssl_mask) = prepare_ssl_targets(pseudo_labels, &state.graph.train_mask)?;
    let targets = Targets::from_masks(
        &state.labels.view(),
        &state.graph.train_mask,
        &ssl_labels.view(),
        &ssl_mask,
        hyper.alpha,
    )?;

    for epoch in 0..hyper.epochs {
        gcn::train_epoch(
            &state.current_adj,
            &state.graph.features,
            &mut state.weights,
            &mut state.optimizer,
            &targets,
            hyper.dropout,
            &mut state.rng,
        )
        .map_err(|e| match e {
            FedglError::Numeric(msg) => FedglError::Numeric(format!(
                "client {} round {round} epoch {}: {msg}",
                state.client_id,
                epoch + 1
            )),
            other => other,
        })?;
    }

    let out = state.predict(&state.weights)?;
    let embeddings = match hyper.embedding_source {
        EmbeddingSource::Output => out.embeddings,
        EmbeddingSource::Hidden => out.hidden,
    };
    Ok(RoundUpload {
        weights: state.weights.clone(),
        predictions: out.probabilities,
        embeddings,
        node_count: state.node_count(),
        ids: state.graph.global_ids.clone(),
    })
}
