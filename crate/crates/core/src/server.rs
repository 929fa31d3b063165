//! Server round: weight aggregation, fusion of client predictions and
//! embeddings, pseudo-label discovery and pseudo-graph construction.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{FedglError, Result};
use crate::gcn::{argmax, ModelWeights};
use crate::graph::GlobalRegistry;
use crate::sparse::CsrMatrix;

/// Server state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalArtifacts {
    pub weights: ModelWeights,
    /// One-hot over registry rows, zero rows where no label was discovered.
    pub pseudo_labels: Array2<f64>,
    /// Row-normalised top-s similarity graph over registry rows.
    pub pseudo_graph: CsrMatrix,
    pub round: usize,
}

impl GlobalArtifacts {
    pub fn initial(weights: ModelWeights, registry: &GlobalRegistry) -> Self {
        let m = registry.union_size();
        let classes = weights.classes();
        GlobalArtifacts {
            weights,
            pseudo_labels: Array2::zeros((m, classes)),
            pseudo_graph: CsrMatrix::zeros(m, m),
            round: 0,
        }
    }

    pub fn pseudo_label_count(&self) -> usize {
        pseudo_label_count(&self.pseudo_labels.view())
    }
}

pub fn pseudo_label_count(labels: &ArrayView2<f64>) -> usize {
    labels.rows().into_iter().filter(|r| r.iter().any(|&v| v != 0.0)).count()
}

fn upload_fractions(counts: impl Iterator<Item = usize>) -> Result<Vec<f64>> {
    let counts: Vec<usize> = counts.collect();
    let total: usize = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(FedglError::validation("no uploads with nodes to combine"));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// `W̄ = Σ N_k / Σ N_j · W_k` over the uploads given.
pub fn aggregate_weights(uploads: &[(usize, &ModelWeights)]) -> Result<ModelWeights> {
    let fractions = upload_fractions(uploads.iter().map(|u| u.0))?;
    let first = uploads[0].1;
    if let Some((_, w)) = uploads.iter().find(|(_, w)| !w.same_shape(first)) {
        return Err(FedglError::validation(format!(
            "upload weights {:?}/{:?} differ from {:?}/{:?}",
            w.w0.dim(),
            w.w1.dim(),
            first.w0.dim(),
            first.w1.dim()
        )));
    }
    let mut w0 = &first.w0 * fractions[0];
    let mut w1 = &first.w1 * fractions[0];
    for ((_, w), &f) in uploads.iter().zip(&fractions).skip(1) {
        w0.scaled_add(f, &w.w0);
        w1.scaled_add(f, &w.w1);
    }
    Ok(ModelWeights { w0, w1 })
}

/// One client's per-node matrix with its node count and global IDs.
#[derive(Debug, Clone, Copy)]
pub struct RowUpload<'a> {
    pub node_count: usize,
    pub rows: ArrayView2<'a, f64>,
    pub ids: &'a [usize],
}

/// `Σ N_k / M · scatter(X_k)` onto registry rows, `M` the summed node count
/// of the uploads. With `renormalize`, each row is instead divided by the
/// total weight of the uploads containing that node.
pub fn fuse_rows(uploads: &[RowUpload<'_>], registry: &GlobalRegistry, renormalize: bool) -> Result<Array2<f64>> {
    let fractions = upload_fractions(uploads.iter().map(|u| u.node_count))?;
    let cols = uploads[0].rows.ncols();
    let mut fused = Array2::<f64>::zeros((registry.union_size(), cols));
    let mut coverage = vec![0.0f64; registry.union_size()];
    for (u, &f) in uploads.iter().zip(&fractions) {
        if u.rows.nrows() != u.ids.len() || u.rows.ncols() != cols {
            return Err(FedglError::validation(format!(
                "upload of shape {:?} with {} ids does not fit {cols} columns",
                u.rows.dim(),
                u.ids.len()
            )));
        }
        let positions = registry.positions(u.ids)?;
        for (r, &p) in positions.iter().enumerate() {
            fused.row_mut(p).scaled_add(f, &u.rows.row(r));
            coverage[p] += f;
        }
    }
    if renormalize {
        for (mut row, &c) in fused.rows_mut().into_iter().zip(&coverage) {
            if c > 0.0 {
                row.mapv_inplace(|v| v / c);
            }
        }
    }
    Ok(fused)
}

/// Fused predictions `P̄`.
pub fn fuse_predictions(uploads: &[RowUpload<'_>], registry: &GlobalRegistry, renormalize: bool) -> Result<Array2<f64>> {
    fuse_rows(uploads, registry, renormalize)
}

/// Fused node embeddings `H̄`.
pub fn fuse_embeddings(uploads: &[RowUpload<'_>], registry: &GlobalRegistry, renormalize: bool) -> Result<Array2<f64>> {
    fuse_rows(uploads, registry, renormalize)
}

/// One-hot pseudo labels for rows whose top fused probability is strictly
/// above `lambda`, excluding training nodes (`is_train` over registry rows).
pub fn discover_pseudo_labels(fused: &ArrayView2<f64>, lambda: f64, is_train: &[bool]) -> Result<Array2<f64>> {
    if is_train.len() != fused.nrows() {
        return Err(FedglError::validation(format!(
            "train flags for {} rows, fused matrix has {}",
            is_train.len(),
            fused.nrows()
        )));
    }
    let mut labels = Array2::zeros(fused.dim());
    for (i, row) in fused.rows().into_iter().enumerate() {
        if is_train[i] || row.is_empty() {
            continue;
        }
        let j = argmax(row.iter().copied());
        if row[j] > lambda {
            labels[[i, j]] = 1.0;
        }
    }
    Ok(labels)
}

/// Registry-row flags for the given global training IDs.
pub fn train_flags(registry: &GlobalRegistry, train_ids: &[usize]) -> Result<Vec<bool>> {
    let mut flags = vec![false; registry.union_size()];
    for p in registry.positions(train_ids)? {
        flags[p] = true;
    }
    Ok(flags)
}

/// `max(H̄ H̄ᵀ, 0)` with a zero diagonal, keeping the `s` largest positive
/// entries per row (ties to the lower column) and normalising rows to sum 1.
pub fn build_pseudo_graph(embeddings: &ArrayView2<f64>, s: usize) -> Result<CsrMatrix> {
    if s == 0 {
        return Err(FedglError::validation("pseudo-graph neighbour cap must be at least 1"));
    }
    let m = embeddings.nrows();
    let h = embeddings.as_standard_layout();
    let data = h.as_slice().expect("standard layout");
    let c = embeddings.ncols();
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let hi = &data[i * c..(i + 1) * c];
            let mut candidates: Vec<(usize, f64)> = (0..m)
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let hj = &data[j * c..(j + 1) * c];
                    let mut dot = 0.0;
                    for k in 0..c {
                        dot += hi[k] * hj[k];
                    }
                    (dot > 0.0).then_some((j, dot))
                })
                .collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            if candidates.len() > s {
                candidates.select_nth_unstable_by(s - 1, order);
                candidates.truncate(s);
            }
            candidates.sort_unstable_by_key(|e| e.0);
            let sum: f64 = candidates.iter().map(|e| e.1).sum();
            for e in &mut candidates {
                e.1 /= sum;
            }
            candidates
        })
        .collect();
    Ok(CsrMatrix::from_sorted_rows(m, rows))
}
