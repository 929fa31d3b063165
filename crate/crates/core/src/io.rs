//! Plain-text file formats: dataset bundles, partition manifests, weights,
//! embeddings and metrics reports. Every file starts with [`HEADER`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{FedglError, Result};
use crate::gcn::ModelWeights;
use crate::graph::Graph;
use crate::orchestrator::{MetricsReport, RoundRecord};
use crate::sparse::CsrMatrix;

pub const HEADER: &str = "fedgl-format v1";

/// Non-empty lines of a text file, numbered from 1, header checked.
pub(crate) struct TextFile {
    pub path: PathBuf,
    lines: Vec<(usize, String)>,
}

impl TextFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| FedglError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            Some((n, l)) => return Err(FedglError::parse(path, n, format!("expected `{HEADER}`, found `{l}`"))),
            None => return Err(FedglError::parse(path, 1, "empty file")),
        }
        Ok(TextFile {
            path: path.to_path_buf(),
            lines: lines.collect(),
        })
    }

    pub fn lines(&self) -> impl Iterator<Item = (usize, &str)> {
        self.lines.iter().map(|(n, l)| (*n, l.as_str()))
    }

    pub fn error(&self, line: usize, msg: impl Into<String>) -> FedglError {
        FedglError::parse(&self.path, line, msg)
    }

    pub fn field<T: FromStr>(&self, line: usize, token: Option<&str>, what: &str) -> Result<T> {
        let token = token.ok_or_else(|| self.error(line, format!("missing {what}")))?;
        token
            .parse()
            .map_err(|_| self.error(line, format!("invalid {what} `{token}`")))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| FedglError::io(path, e))
}

/// 17 significant digits; parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), format_float)
}

fn parse_opt(file: &TextFile, line: usize, token: Option<&str>, what: &str) -> Result<Option<f64>> {
    match token {
        Some("none") => Ok(None),
        other => file.field(line, other, what).map(Some),
    }
}

/// Counts read from a bundle alongside the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub nodes: usize,
    /// Edge lines in the file, as published.
    pub edge_lines: usize,
    /// Distinct undirected edges after symmetrisation, self-loops dropped.
    pub undirected_edges: usize,
    pub features: usize,
    pub classes: usize,
    pub labeled: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub stats: DatasetStats,
}

fn read_features(dir: &Path) -> Result<CsrMatrix> {
    let file = TextFile::read(&dir.join("features.txt"))?;
    let mut lines = file.lines();
    let (n0, shape) = lines.next().ok_or_else(|| file.error(2, "missing shape line"))?;
    let mut t = shape.split_whitespace();
    let kind = t.next().unwrap_or_default().to_string();
    let n: usize = file.field(n0, t.next(), "node count")?;
    let d: usize = file.field(n0, t.next(), "feature count")?;
    match kind.as_str() {
        "sparse" => {
            let mut triplets = Vec::new();
            for (ln, line) in lines {
                let mut t = line.split_whitespace();
                let r: usize = file.field(ln, t.next(), "node")?;
                let c: usize = file.field(ln, t.next(), "column")?;
                let v: f64 = file.field(ln, t.next(), "value")?;
                if r >= n || c >= d {
                    return Err(file.error(ln, format!("entry ({r}, {c}) outside {n}x{d}")));
                }
                if !v.is_finite() {
                    return Err(file.error(ln, "non-finite feature value"));
                }
                triplets.push((r, c, v));
            }
            CsrMatrix::from_triplets(n, d, triplets)
        }
        "dense" => {
            let mut dense = Array2::zeros((n, d));
            let mut row = 0;
            for (ln, line) in lines {
                if row >= n {
                    return Err(file.error(ln, format!("more than {n} feature rows")));
                }
                let values: Vec<f64> = line
                    .split_whitespace()
                    .map(|tok| file.field(ln, Some(tok), "value"))
                    .collect::<Result<_>>()?;
                if values.len() != d {
                    return Err(file.error(ln, format!("{} values, expected {d}", values.len())));
                }
                dense.row_mut(row).assign(&ndarray::Array1::from(values));
                row += 1;
            }
            if row != n {
                return Err(file.error(n0, format!("{row} feature rows, expected {n}")));
            }
            Ok(CsrMatrix::from_dense(&dense.view()))
        }
        other => Err(file.error(n0, format!("unknown feature layout `{other}`"))),
    }
}

fn read_labels(dir: &Path, n: usize) -> Result<(Vec<Option<usize>>, usize)> {
    let file = TextFile::read(&dir.join("labels.txt"))?;
    let mut lines = file.lines();
    let (n0, head) = lines.next().ok_or_else(|| file.error(2, "missing `classes` line"))?;
    let mut t = head.split_whitespace();
    if t.next() != Some("classes") {
        return Err(file.error(n0, "expected `classes C`"));
    }
    let classes: usize = file.field(n0, t.next(), "class count")?;
    let mut labels = vec![None; n];
    for (ln, line) in lines {
        let mut t = line.split_whitespace();
        let node: usize = file.field(ln, t.next(), "node")?;
        let class: usize = file.field(ln, t.next(), "class")?;
        if node >= n {
            return Err(file.error(ln, format!("node {node} outside 0..{n}")));
        }
        if class >= classes {
            return Err(file.error(ln, format!("class {class} outside 0..{classes}")));
        }
        if labels[node].replace(class).is_some() {
            return Err(file.error(ln, format!("duplicate label for node {node}")));
        }
    }
    Ok((labels, classes))
}

fn read_edges(dir: &Path, n: usize) -> Result<(CsrMatrix, usize)> {
    let file = TextFile::read(&dir.join("edges.txt"))?;
    let mut triplets = Vec::new();
    let mut count = 0;
    for (ln, line) in file.lines() {
        let mut t = line.split_whitespace();
        let u: usize = file.field(ln, t.next(), "node")?;
        let v: usize = file.field(ln, t.next(), "node")?;
        if u >= n || v >= n {
            return Err(file.error(ln, format!("edge ({u}, {v}) outside 0..{n}")));
        }
        count += 1;
        if u != v {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
    }
    let mut adj = CsrMatrix::from_triplets(n, n, triplets)?;
    // duplicates were summed; the graph is binary
    adj.data_mut().fill(1.0);
    Ok((adj, count))
}

fn read_split(path: &Path, graph: &mut Graph) -> Result<()> {
    let file = TextFile::read(path)?;
    let n = graph.num_nodes();
    let mut seen = vec![false; n];
    for (ln, line) in file.lines() {
        let mut t = line.split_whitespace();
        let node: usize = file.field(ln, t.next(), "node")?;
        if node >= n {
            return Err(file.error(ln, format!("node {node} outside 0..{n}")));
        }
        if std::mem::replace(&mut seen[node], true) {
            return Err(file.error(ln, format!("node {node} listed twice")));
        }
        match t.next() {
            Some("train") => graph.train_mask[node] = true,
            Some("val") => graph.val_mask[node] = true,
            Some("test") => graph.test_mask[node] = true,
            other => return Err(file.error(ln, format!("unknown split `{}`", other.unwrap_or("")))),
        }
    }
    Ok(())
}

/// Loads a bundle directory: `edges.txt`, `features.txt`, `labels.txt` and
/// optionally `split.txt`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let features = read_features(dir)?;
    let n = features.nrows();
    let (labels, classes) = read_labels(dir, n)?;
    let (adjacency, edge_lines) = read_edges(dir, n)?;
    let mut graph = Graph::new(adjacency, features, labels, classes)?;
    let split = dir.join("split.txt");
    if split.exists() {
        read_split(&split, &mut graph)?;
        graph.validate()?;
    }
    let stats = DatasetStats {
        nodes: n,
        edge_lines,
        undirected_edges: graph.num_edges(),
        features: graph.num_features(),
        classes,
        labeled: graph.labels.iter().filter(|l| l.is_some()).count(),
    };
    Ok(Dataset { graph, stats })
}

fn split_name(graph: &Graph, row: usize) -> &'static str {
    if graph.train_mask[row] {
        "train"
    } else if graph.val_mask[row] {
        "val"
    } else if graph.test_mask[row] {
        "test"
    } else {
        "none"
    }
}

/// Per-client node lists with split membership.
pub fn write_manifest(path: &Path, clients: &[Graph]) -> Result<()> {
    let mut out = format!("{HEADER}\nclients {}\n", clients.len());
    for (k, g) in clients.iter().enumerate() {
        let _ = writeln!(out, "client {k} {}", g.num_nodes());
        for (r, id) in g.global_ids.iter().enumerate() {
            let _ = writeln!(out, "{id} {}", split_name(g, r));
        }
    }
    write_file(path, &out)
}

/// Rebuilds client graphs from a manifest over `master`.
pub fn read_manifest(path: &Path, master: &Graph) -> Result<Vec<Graph>> {
    let file = TextFile::read(path)?;
    let mut lines = file.lines();
    let (n0, head) = lines.next().ok_or_else(|| file.error(2, "missing `clients` line"))?;
    let mut t = head.split_whitespace();
    if t.next() != Some("clients") {
        return Err(file.error(n0, "expected `clients K`"));
    }
    let k: usize = file.field(n0, t.next(), "client count")?;
    let mut clients = Vec::with_capacity(k);
    for expected in 0..k {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| file.error(n0, format!("missing client {expected}")))?;
        let mut t = line.split_whitespace();
        let index: usize = match t.next() {
            Some("client") => file.field(ln, t.next(), "client index")?,
            _ => return Err(file.error(ln, "expected `client k N_k`")),
        };
        if index != expected {
            return Err(file.error(ln, format!("client {index} out of order, expected {expected}")));
        }
        let count: usize = file.field(ln, t.next(), "node count")?;
        let mut rows = Vec::with_capacity(count);
        let mut splits = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| file.error(ln, format!("client {index} lists fewer than {count} nodes")))?;
            let mut t = line.split_whitespace();
            let id: usize = file.field(ln, t.next(), "node id")?;
            if id >= master.num_nodes() {
                return Err(file.error(ln, format!("node {id} outside the dataset")));
            }
            let split = t.next().unwrap_or("");
            if !matches!(split, "train" | "val" | "test" | "none") {
                return Err(file.error(ln, format!("unknown split `{split}`")));
            }
            rows.push(id);
            splits.push(split.to_string());
        }
        let mut g = master.induced_subgraph(&rows);
        g.clear_split();
        for (r, s) in splits.iter().enumerate() {
            match s.as_str() {
                "train" => g.train_mask[r] = true,
                "val" => g.val_mask[r] = true,
                "test" => g.test_mask[r] = true,
                _ => {}
            }
        }
        g.validate()?;
        clients.push(g);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(file.error(ln, "trailing content after the last client"));
    }
    Ok(clients)
}

fn write_matrix(out: &mut String, name: &str, m: &ArrayView2<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

fn read_matrix<'a>(
    file: &TextFile,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
) -> Result<Array2<f64>> {
    let (ln, head) = lines
        .next()
        .ok_or_else(|| file.error(0, format!("missing `{name}` block")))?;
    let mut t = head.split_whitespace();
    if t.next() != Some(name) {
        return Err(file.error(ln, format!("expected `{name} rows cols`")));
    }
    let rows: usize = file.field(ln, t.next(), "row count")?;
    let cols: usize = file.field(ln, t.next(), "column count")?;
    let mut m = Array2::zeros((rows, cols));
    for r in 0..rows {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| file.error(ln, format!("`{name}` has fewer than {rows} rows")))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| file.field(ln, Some(tok), "value"))
            .collect::<Result<_>>()?;
        if values.len() != cols {
            return Err(file.error(ln, format!("{} values, expected {cols}", values.len())));
        }
        m.row_mut(r).assign(&ndarray::Array1::from(values));
    }
    Ok(m)
}

pub fn write_weights(path: &Path, weights: &ModelWeights) -> Result<()> {
    let mut out = format!("{HEADER}\n");
    write_matrix(&mut out, "w0", &weights.w0.view());
    write_matrix(&mut out, "w1", &weights.w1.view());
    write_file(path, &out)
}

pub fn read_weights(path: &Path) -> Result<ModelWeights> {
    let file = TextFile::read(path)?;
    let mut lines = file.lines();
    let w0 = read_matrix(&file, &mut lines, "w0")?;
    let w1 = read_matrix(&file, &mut lines, "w1")?;
    if w0.ncols() != w1.nrows() {
        return Err(file.error(0, "w0 columns do not match w1 rows"));
    }
    Ok(ModelWeights { w0, w1 })
}

/// Tab-separated `global_id, class, values...`; unlabeled nodes have class -1.
pub fn export_embeddings(
    path: &Path,
    embeddings: &ArrayView2<f64>,
    ids: &[usize],
    labels: &[Option<usize>],
) -> Result<()> {
    if embeddings.nrows() != ids.len() || ids.len() != labels.len() {
        return Err(FedglError::validation("embedding rows, ids and labels differ in length"));
    }
    let mut out = format!("{HEADER}\n");
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        let class = labels[i].map_or(-1, |c| c as i64);
        let mut fields = vec![ids[i].to_string(), class.to_string()];
        fields.extend(row.iter().map(|&v| format_float(v)));
        let _ = writeln!(out, "{}", fields.join("\t"));
    }
    write_file(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    pub values: Array2<f64>,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = TextFile::read(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (ln, line) in file.lines() {
        let mut t = line.split('\t');
        ids.push(file.field(ln, t.next(), "node id")?);
        let class: i64 = file.field(ln, t.next(), "class")?;
        labels.push(usize::try_from(class).ok());
        let row: Vec<f64> = t.map(|tok| file.field(ln, Some(tok), "value")).collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(file.error(ln, "rows have different widths"));
        }
        values.extend(row);
    }
    let n = ids.len();
    let values = Array2::from_shape_vec((n, width.unwrap_or(0)), values)
        .map_err(|e| FedglError::validation(e.to_string()))?;
    Ok(EmbeddingTable { ids, labels, values })
}

pub const ROUNDS_FILE: &str = "rounds.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";
const ROUND_COLUMNS: [&str; 6] = [
    "round",
    "global_val_acc",
    "global_test_acc",
    "mean_local_test_acc",
    "pseudo_label_count",
    "pseudo_graph_nnz",
];

/// Writes `rounds.tsv` and `summary.txt` into `dir` (created if missing).
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedglError::io(dir, e))?;
    let mut rounds = format!("{HEADER}\n{}\n", ROUND_COLUMNS.join("\t"));
    for r in &report.rounds {
        let _ = writeln!(
            rounds,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.round,
            format_opt(r.global_val_acc),
            format_opt(r.global_test_acc),
            format_float(r.mean_local_test_acc),
            r.pseudo_label_count,
            r.pseudo_graph_nnz
        );
    }
    write_file(&dir.join(ROUNDS_FILE), &rounds)?;

    let local: Vec<String> = report.per_client_local_test_acc.iter().map(|&v| format_float(v)).collect();
    let summary = format!(
        "{HEADER}\nseed {}\nglobal_test_acc {}\nper_client_local_test_acc {}\nbest_round {}\nrounds_executed {}\n",
        report.seed,
        format_opt(report.global_test_acc),
        local.join(" "),
        report.best_round,
        report.rounds_executed
    );
    write_file(&dir.join(SUMMARY_FILE), &summary)
}

pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let file = TextFile::read(&dir.join(ROUNDS_FILE))?;
    let mut lines = file.lines();
    match lines.next() {
        Some((_, l)) if l.split('\t').eq(ROUND_COLUMNS) => {}
        Some((ln, _)) => return Err(file.error(ln, "unexpected column header")),
        None => return Err(file.error(2, "missing column header")),
    }
    let mut rounds = Vec::new();
    for (ln, line) in lines {
        let mut t = line.split('\t');
        rounds.push(RoundRecord {
            round: file.field(ln, t.next(), "round")?,
            global_val_acc: parse_opt(&file, ln, t.next(), "global_val_acc")?,
            global_test_acc: parse_opt(&file, ln, t.next(), "global_test_acc")?,
            mean_local_test_acc: file.field(ln, t.next(), "mean_local_test_acc")?,
            pseudo_label_count: file.field(ln, t.next(), "pseudo_label_count")?,
            pseudo_graph_nnz: file.field(ln, t.next(), "pseudo_graph_nnz")?,
        });
    }

    let file = TextFile::read(&dir.join(SUMMARY_FILE))?;
    let mut fields = BTreeMap::new();
    for (ln, line) in file.lines() {
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        fields.insert(key.to_string(), (ln, value.to_string()));
    }
    let get = |key: &str| {
        fields
            .get(key)
            .map(|(ln, v)| (*ln, v.as_str()))
            .ok_or_else(|| file.error(0, format!("missing `{key}`")))
    };
    let (ln, seed) = get("seed")?;
    let seed = file.field(ln, Some(seed), "seed")?;
    let (ln, acc) = get("global_test_acc")?;
    let global_test_acc = parse_opt(&file, ln, Some(acc), "global_test_acc")?;
    let (ln, local) = get("per_client_local_test_acc")?;
    let per_client_local_test_acc = local
        .split_whitespace()
        .map(|tok| file.field(ln, Some(tok), "local accuracy"))
        .collect::<Result<_>>()?;
    let (ln, best) = get("best_round")?;
    let best_round = file.field(ln, Some(best), "best_round")?;
    let (ln, executed) = get("rounds_executed")?;
    let rounds_executed = file.field(ln, Some(executed), "rounds_executed")?;
    Ok(MetricsReport {
        seed,
        rounds,
        global_test_acc,
        per_client_local_test_acc,
        best_round,
        rounds_executed,
    })
}
