//! Graph data, adjacency normalization and alignment between a client's
//! local row order and the server's global index space.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use crate::error::{FedglError, Result};
use crate::sparse::CsrMatrix;

/// One party's graph: structure, node features, labels, split masks and the
/// map from local row to global node ID.
///
/// Features are held row-compressed; bag-of-words inputs are ~1% dense.
/// Labels are class indices, `None` for unlabeled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adjacency: CsrMatrix,
    pub features: CsrMatrix,
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub global_ids: Vec<usize>,
}

impl Graph {
    /// Builds a graph with empty masks and identity global IDs.
    pub fn new(
        adjacency: CsrMatrix,
        features: CsrMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        let graph = Graph {
            adjacency,
            features,
            labels,
            num_classes,
            train_mask: vec![false; n],
            val_mask: vec![false; n],
            test_mask: vec![false; n],
            global_ids: (0..n).collect(),
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.adjacency.ncols() != n {
            return Err(FedglError::validation("adjacency is not square"));
        }
        if self.features.nrows() != n {
            return Err(FedglError::validation(format!(
                "feature matrix has {} rows for {} nodes",
                self.features.nrows(),
                n
            )));
        }
        for (name, len) in [
            ("labels", self.labels.len()),
            ("train_mask", self.train_mask.len()),
            ("val_mask", self.val_mask.len()),
            ("test_mask", self.test_mask.len()),
            ("global_ids", self.global_ids.len()),
        ] {
            if len != n {
                return Err(FedglError::validation(format!("{name} has length {len}, expected {n}")));
            }
        }
        if self.adjacency.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(FedglError::validation("adjacency has negative or non-finite weights"));
        }
        if !self.adjacency.is_symmetric() {
            return Err(FedglError::validation("adjacency is not symmetric"));
        }
        if let Some(c) = self.labels.iter().flatten().find(|&&c| c >= self.num_classes) {
            return Err(FedglError::validation(format!(
                "label {c} outside {} classes",
                self.num_classes
            )));
        }
        for i in 0..n {
            let count = [self.train_mask[i], self.val_mask[i], self.test_mask[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            if count > 1 {
                return Err(FedglError::validation(format!(
                    "node {} is in more than one split",
                    self.global_ids[i]
                )));
            }
            if count == 1 && self.labels[i].is_none() {
                return Err(FedglError::validation(format!(
                    "unlabeled node {} is in a split",
                    self.global_ids[i]
                )));
            }
        }
        let mut ids = self.global_ids.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(FedglError::validation("duplicate global IDs"));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// Undirected edges (each symmetric pair counted once, self-loops once).
    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().filter(|&(r, c, _)| r <= c).count()
    }

    pub fn one_hot_labels(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.num_nodes(), self.num_classes));
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(c) = label {
                y[[i, *c]] = 1.0;
            }
        }
        y
    }

    pub fn dense_features(&self) -> Array2<f64> {
        self.features.to_dense()
    }

    pub fn has_split(&self) -> bool {
        self.train_mask.iter().chain(&self.val_mask).chain(&self.test_mask).any(|&b| b)
    }

    pub fn clear_split(&mut self) {
        let n = self.num_nodes();
        self.train_mask = vec![false; n];
        self.val_mask = vec![false; n];
        self.test_mask = vec![false; n];
    }

    /// Scales every feature row to sum to one; all-zero rows stay zero.
    pub fn row_normalize_features(&mut self) {
        let sums = self.features.row_sums();
        let indptr = self.features.indptr().to_vec();
        let data = self.features.data_mut();
        for (r, sum) in sums.into_iter().enumerate() {
            if sum != 0.0 {
                for v in &mut data[indptr[r]..indptr[r + 1]] {
                    *v /= sum;
                }
            }
        }
    }

    /// Subgraph induced by the local rows in `rows` (kept in that order).
    pub fn induced_subgraph(&self, rows: &[usize]) -> Graph {
        let pick = |mask: &[bool]| rows.iter().map(|&r| mask[r]).collect::<Vec<_>>();
        let feature_rows = rows
            .iter()
            .map(|&r| {
                let (cols, vals) = self.features.row(r);
                cols.iter().copied().zip(vals.iter().copied()).collect()
            })
            .collect();
        Graph {
            adjacency: self.adjacency.submatrix(rows),
            features: CsrMatrix::from_sorted_rows(self.num_features(), feature_rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
            train_mask: pick(&self.train_mask),
            val_mask: pick(&self.val_mask),
            test_mask: pick(&self.test_mask),
            global_ids: rows.iter().map(|&r| self.global_ids[r]).collect(),
        }
    }

    pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for a symmetric non-negative adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(CsrMatrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CsrMatrix {
        self.0
    }
}

pub fn normalize_adjacency(adjacency: &CsrMatrix) -> Result<NormalizedAdjacency> {
    if adjacency.nrows() == 0 {
        return Err(FedglError::validation("adjacency must have at least one node"));
    }
    if adjacency.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(FedglError::validation("adjacency has negative or non-finite weights"));
    }
    if !adjacency.is_symmetric() {
        return Err(FedglError::validation("adjacency is not symmetric"));
    }
    let with_loops = adjacency.add_scaled(&CsrMatrix::identity(adjacency.nrows()), 1.0)?;
    let degrees = with_loops.row_sums();
    let rows = (0..with_loops.nrows())
        .map(|r| {
            let (cols, vals) = with_loops.row(r);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| (c, v / (degrees[r] * degrees[c]).sqrt()))
                .collect()
        })
        .collect();
    Ok(NormalizedAdjacency(CsrMatrix::from_sorted_rows(
        with_loops.ncols(),
        rows,
    )))
}

/// The server's index space: the sorted union of client node IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRegistry {
    union_ids: Vec<usize>,
    total_multiplicity: usize,
    per_client_counts: Vec<usize>,
}

impl GlobalRegistry {
    pub fn from_clients<'a>(clients: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let mut union_ids = Vec::new();
        let mut per_client_counts = Vec::new();
        for ids in clients {
            per_client_counts.push(ids.len());
            union_ids.extend_from_slice(ids);
        }
        union_ids.sort_unstable();
        union_ids.dedup();
        GlobalRegistry {
            union_ids,
            total_multiplicity: per_client_counts.iter().sum(),
            per_client_counts,
        }
    }

    pub fn union_size(&self) -> usize {
        self.union_ids.len()
    }

    /// M = Σ N_k, counting overlapping nodes once per client.
    pub fn total_multiplicity(&self) -> usize {
        self.total_multiplicity
    }

    pub fn per_client_counts(&self) -> &[usize] {
        &self.per_client_counts
    }

    pub fn union_ids(&self) -> &[usize] {
        &self.union_ids
    }

    /// Positions of global IDs within the union index space.
    pub fn positions(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.union_ids
                    .binary_search(id)
                    .map_err(|_| FedglError::validation(format!("node {id} not in registry")))
            })
            .collect()
    }
}

/// Row `i` of the result is row `positions[i]` of `global`.
pub fn project_rows(global: &ArrayView2<f64>, positions: &[usize]) -> Result<Array2<f64>> {
    let cols = global.ncols();
    let mut out = Array2::zeros((positions.len(), cols));
    for (i, &p) in positions.iter().enumerate() {
        if p >= global.nrows() {
            return Err(FedglError::validation(format!(
                "position {p} outside global index space of {}",
                global.nrows()
            )));
        }
        out.row_mut(i).assign(&global.row(p));
    }
    Ok(out)
}

/// Inverse of [`project_rows`]: places client rows into a zeroed global matrix.
pub fn scatter_rows(
    client: &ArrayView2<f64>,
    positions: &[usize],
    union_size: usize,
) -> Result<Array2<f64>> {
    if client.nrows() != positions.len() {
        return Err(FedglError::validation(format!(
            "{} rows but {} positions",
            client.nrows(),
            positions.len()
        )));
    }
    let mut out = Array2::zeros((union_size, client.ncols()));
    let mut seen = vec![false; union_size];
    for (i, &p) in positions.iter().enumerate() {
        if p >= union_size {
            return Err(FedglError::validation(format!(
                "position {p} outside union of {union_size}"
            )));
        }
        if std::mem::replace(&mut seen[p], true) {
            return Err(FedglError::validation(format!("duplicate position {p}")));
        }
        out.row_mut(p).assign(&client.row(i));
    }
    Ok(out)
}

/// Union of client graphs by global ID. Nodes come out sorted by global ID,
/// duplicate edges collapse to weight one, masks are OR-ed.
pub fn merge_graphs(graphs: &[Graph]) -> Result<Graph> {
    let first = graphs
        .first()
        .ok_or_else(|| FedglError::validation("merge of zero graphs"))?;
    let (d, c) = (first.num_features(), first.num_classes);
    if let Some(g) = graphs.iter().find(|g| g.num_features() != d || g.num_classes != c) {
        return Err(FedglError::validation(format!(
            "cannot merge graph with d={}, C={} into d={d}, C={c}",
            g.num_features(),
            g.num_classes
        )));
    }

    // global id -> (graph index, local row) of first occurrence
    let mut owner: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (gi, g) in graphs.iter().enumerate() {
        for (row, &id) in g.global_ids.iter().enumerate() {
            match owner.get(&id) {
                None => {
                    owner.insert(id, (gi, row));
                }
                Some(&(oj, orow)) => {
                    let other = &graphs[oj];
                    if other.labels[orow] != g.labels[row]
                        || other.features.row(orow) != g.features.row(row)
                    {
                        return Err(FedglError::validation(format!(
                            "conflicting features or labels for node {id}"
                        )));
                    }
                }
            }
        }
    }
    let ids: Vec<usize> = owner.keys().copied().collect();
    let index = |id: usize| ids.binary_search(&id).unwrap();
    let n = ids.len();

    let mut edges = Vec::new();
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for g in graphs {
        for (r, col, _) in g.adjacency.iter() {
            edges.push((index(g.global_ids[r]), index(g.global_ids[col])));
        }
        for (row, &id) in g.global_ids.iter().enumerate() {
            let m = index(id);
            train[m] |= g.train_mask[row];
            val[m] |= g.val_mask[row];
            test[m] |= g.test_mask[row];
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let adjacency = CsrMatrix::from_triplets(n, n, edges.into_iter().map(|(a, b)| (a, b, 1.0)))?;

    let mut feature_rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for &(gi, row) in owner.values() {
        let (cols, vals) = graphs[gi].features.row(row);
        feature_rows.push(cols.iter().copied().zip(vals.iter().copied()).collect());
        labels.push(graphs[gi].labels[row]);
    }
    let merged = Graph {
        adjacency,
        features: CsrMatrix::from_sorted_rows(d, feature_rows),
        labels,
        num_classes: c,
        train_mask: train,
        val_mask: val,
        test_mask: test,
        global_ids: ids,
    };
    merged.validate()?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        )
        .unwrap()
    }

    pub(crate) fn toy_graph(n: usize, edges: &[(usize, usize)], ids: Vec<usize>) -> Graph {
        let adj = CsrMatrix::from_triplets(
            n,
            n,
            edges.iter().flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)]),
        )
        .unwrap();
        let feats = CsrMatrix::from_triplets(
            n,
            2,
            ids.iter().enumerate().map(|(i, &id)| (i, id % 2, id as f64 + 1.0)),
        )
        .unwrap();
        let labels = ids.iter().map(|&id| Some(id % 2)).collect();
        let mut g = Graph::new(adj, feats, labels, 2).unwrap();
        g.global_ids = ids;
        g
    }

    #[test]
    fn normalize_single_node() {
        let a = normalize_adjacency(&CsrMatrix::zeros(1, 1)).unwrap();
        assert_eq!(a.matrix().to_dense(), array![[1.0]]);
    }

    #[test]
    fn normalize_single_edge() {
        let e = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let a = normalize_adjacency(&e).unwrap();
        assert_eq!(a.matrix().to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn normalize_path() {
        // degrees with self-loops: (2, 3, 2)
        let a = normalize_adjacency(&path3()).unwrap().into_inner();
        let s6 = 1.0 / 6f64.sqrt();
        let expect = [
            [0.5, s6, 0.0],
            [s6, 1.0 / 3.0, s6],
            [0.0, s6, 0.5],
        ];
        for (i, row) in expect.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((a.get(i, j) - v).abs() < 1e-15, "({i},{j})");
            }
        }
        assert!(a.is_symmetric());
    }

    #[test]
    fn normalize_rejects_bad_input() {
        let asym = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        assert!(matches!(normalize_adjacency(&asym), Err(FedglError::Validation(_))));
        let neg = CsrMatrix::from_triplets(2, 2, vec![(0, 1, -1.0), (1, 0, -1.0)]).unwrap();
        assert!(normalize_adjacency(&neg).is_err());
    }

    #[test]
    fn cycle_rows_sum_to_one() {
        let n = 7;
        let edges = (0..n).flat_map(|i| [(i, (i + 1) % n, 1.0), ((i + 1) % n, i, 1.0)]);
        let a = normalize_adjacency(&CsrMatrix::from_triplets(n, n, edges).unwrap()).unwrap();
        for s in a.matrix().row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn project_examples() {
        let global = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(
            project_rows(&global.view(), &[2, 0]).unwrap(),
            array![[1.0, 1.0], [1.0, 0.0]]
        );
        assert_eq!(project_rows(&global.view(), &[0, 1, 2]).unwrap(), global);
        assert_eq!(project_rows(&global.view(), &[]).unwrap().dim(), (0, 2));
        assert!(project_rows(&global.view(), &[3]).is_err());
    }

    #[test]
    fn scatter_examples() {
        let client = array![[1.0, 2.0]];
        assert_eq!(
            scatter_rows(&client.view(), &[1], 3).unwrap(),
            array![[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]]
        );
        let two = array![[1.0], [2.0]];
        assert!(scatter_rows(&two.view(), &[1, 1], 3).is_err());
        assert!(scatter_rows(&two.view(), &[0, 3], 3).is_err());
    }

    #[test]
    fn scatter_sum_matches_brute_force() {
        // 5-node registry, clients {0,2,3} and {2,4}
        let a = array![[1.0, 0.5], [2.0, 0.0], [3.0, 1.0]];
        let b = array![[10.0, 1.0], [20.0, 2.0]];
        let sum = scatter_rows(&a.view(), &[0, 2, 3], 5).unwrap()
            + scatter_rows(&b.view(), &[2, 4], 5).unwrap();
        let mut brute = Array2::<f64>::zeros((5, 2));
        for (rows, ids) in [(&a, vec![0, 2, 3]), (&b, vec![2, 4])] {
            for (i, &id) in ids.iter().enumerate() {
                for c in 0..2 {
                    brute[[id, c]] += rows[[i, c]];
                }
            }
        }
        assert_eq!(sum, brute);
        assert_eq!(sum.row(2).to_vec(), vec![12.0, 1.0]);
    }

    #[test]
    fn registry_counts() {
        let a = [0usize, 2, 5];
        let b = [2usize, 7];
        let reg = GlobalRegistry::from_clients([&a[..], &b[..]]);
        assert_eq!(reg.union_size(), 4);
        assert_eq!(reg.total_multiplicity(), 5);
        assert_eq!(reg.per_client_counts(), &[3, 2]);
        assert_eq!(reg.positions(&[7, 0]).unwrap(), vec![3, 0]);
        assert!(reg.positions(&[1]).is_err());
    }

    #[test]
    fn merge_single_is_identity() {
        let g = toy_graph(3, &[(0, 1)], vec![4, 6, 9]);
        assert_eq!(merge_graphs(std::slice::from_ref(&g)).unwrap(), g);
    }

    #[test]
    fn merge_disjoint_is_block_diagonal() {
        let a = toy_graph(2, &[(0, 1)], vec![0, 1]);
        let b = toy_graph(2, &[(0, 1)], vec![2, 3]);
        let m = merge_graphs(&[a, b]).unwrap();
        assert_eq!(m.num_nodes(), 4);
        assert_eq!(
            m.adjacency.to_dense(),
            array![
                [0.0, 1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, 1.0, 0.0]
            ]
        );
    }

    #[test]
    fn merge_shared_node_edge_once() {
        // master: 10 nodes; client A holds {5, 7} with edge (5,7), client B holds {3, 5, 7} without it
        let a = toy_graph(2, &[(0, 1)], vec![5, 7]);
        let b = toy_graph(3, &[(0, 1)], vec![3, 5, 7]);
        let m = merge_graphs(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.global_ids, vec![3, 5, 7]);
        // brute-force union of edge sets in global IDs
        let mut brute = std::collections::BTreeSet::new();
        for g in [&a, &b] {
            for (r, c, _) in g.adjacency.iter() {
                brute.insert((g.global_ids[r], g.global_ids[c]));
            }
        }
        let merged: std::collections::BTreeSet<_> = m
            .adjacency
            .iter()
            .map(|(r, c, _)| (m.global_ids[r], m.global_ids[c]))
            .collect();
        assert_eq!(merged, brute);
        assert_eq!(m.adjacency.get(1, 2), 1.0);
        assert_eq!(m.num_edges(), 2);
        // commutative on node/edge sets
        assert_eq!(merge_graphs(&[b, a]).unwrap(), m);
    }

    #[test]
    fn merge_conflict_detected() {
        let a = toy_graph(1, &[], vec![5]);
        let mut b = toy_graph(1, &[], vec![5]);
        b.labels[0] = Some(0);
        assert!(merge_graphs(&[a, b]).is_err());
    }

    #[test]
    fn row_normalization() {
        let mut g = toy_graph(2, &[], vec![1, 2]);
        g.features = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 3.0)]).unwrap();
        g.row_normalize_features();
        assert_eq!(g.features.to_dense(), array![[0.25, 0.75], [0.0, 0.0]]);
    }
}
