//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! binary exits non-zero if any check fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedgl::client::{local_train, ClientState, LocalHyper, RoundUpload};
use fedgl::config::read_config;
use fedgl::gcn::{self, ModelWeights, Targets};
use fedgl::graph::{normalize_adjacency, project_rows, GlobalRegistry, Graph};
use fedgl::io::write_report;
use fedgl::orchestrator::{run, run_experiment, run_traced, ExperimentConfig, Mode, RunOutcome};
use fedgl::partition::partition;
use fedgl::server::{self, RowUpload};
use fedgl::sparse::CsrMatrix;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dataset(name: &str) -> PathBuf {
    root().join("data").join(name)
}

fn master(name: &str) -> Graph {
    fedgl::cli::load_master(&dataset(name), true).expect("dataset loads")
}

/// The shipped experiment config for `name`, switched to `mode`.
fn shipped_config(name: &str, mode: Mode) -> ExperimentConfig {
    let mut config = read_config(&root().join("configs").join(format!("{name}.conf"))).expect("config parses");
    config.mode = mode;
    config.seeds = SEEDS.to_vec();
    config
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_global(outcomes: &[RunOutcome]) -> f64 {
    mean(outcomes.iter().map(|o| o.report.global_test_acc.expect("global accuracy")))
}

fn mean_local(outcomes: &[RunOutcome]) -> f64 {
    mean(outcomes.iter().map(|o| mean(o.report.per_client_local_test_acc.iter().copied())))
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

// ---------------------------------------------------------------- 1

fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (CsrMatrix, CsrMatrix) {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                edges.push((i, j, 1.0));
                edges.push((j, i, 1.0));
            }
        }
    }
    let adj = CsrMatrix::from_triplets(n, n, edges).unwrap();
    let x = Array2::from_shape_simple_fn((n, d), || if rng.random_bool(0.7) { rng.random_range(-1.0..1.0) } else { 0.0 });
    (normalize_adjacency(&adj).unwrap().into_inner(), CsrMatrix::from_dense(&x.view()))
}

fn objective(adj: &CsrMatrix, x: &CsrMatrix, w: &ModelWeights, targets: &Targets) -> f64 {
    let out = gcn::predict(adj, x, w).unwrap();
    gcn::target_loss(&out, targets)
}

fn gradient_check() -> Verdict {
    let started = Instant::now();
    let (n, d, h, c, eps) = (6, 4, 3, 2, 1e-5);
    let mut worst: f64 = 0.0;
    for g in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + g);
        let (adj, x) = random_graph(&mut rng, n, d);
        let w = ModelWeights::glorot(d, h, c, &mut rng);
        // rows 0-2 labelled, rows 3-4 pseudo-labelled with α = 0.2
        let mut targets = Targets::new();
        for row in 0..3 {
            targets.push(row, rng.random_range(0..c), 1.0);
        }
        for row in 3..5 {
            targets.push(row, rng.random_range(0..c), 0.2);
        }
        let pass = gcn::forward(&adj, &x, &w, 0.0, false, &mut rng).unwrap();
        let grads = gcn::gradients(&adj, &x, &w, &pass, &targets).unwrap();

        let mut check = |analytic: f64, bump: &dyn Fn(f64) -> ModelWeights| {
            let numeric = (objective(&adj, &x, &bump(eps), &targets) - objective(&adj, &x, &bump(-eps), &targets)) / (2.0 * eps);
            let scale = analytic.abs().max(numeric.abs());
            let rel = if scale < 1e-10 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
            worst = worst.max(rel);
        };
        for idx in ndarray::indices(w.w0.dim()) {
            check(grads.w0[idx], &|e| {
                let mut v = w.clone();
                v.w0[idx] += e;
                v
            });
        }
        for idx in ndarray::indices(w.w1.dim()) {
            check(grads.w1[idx], &|e| {
                let mut v = w.clone();
                v.w1[idx] += e;
                v
            });
        }
    }
    let elapsed = started.elapsed();
    verdict(
        worst < 1e-4 && within(elapsed, 5),
        format!("max relative error {worst:.2e} over 5 graphs (< 1e-4), {:.2}s (< 5s)", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn dense_aggregate(uploads: &[(usize, ModelWeights)]) -> ModelWeights {
    let total: usize = uploads.iter().map(|u| u.0).sum();
    let mut out = ModelWeights::zeros(uploads[0].1.features(), uploads[0].1.hidden(), uploads[0].1.classes());
    for (n, w) in uploads {
        let f = *n as f64 / total as f64;
        for (o, v) in out.w0.iter_mut().zip(&w.w0) {
            *o += f * v;
        }
        for (o, v) in out.w1.iter_mut().zip(&w.w1) {
            *o += f * v;
        }
    }
    out
}

/// Σ_k (N_k / Σ N) · rows_k scattered by global id, indexed by sorted union.
fn dense_fuse(clients: &[(Vec<usize>, Array2<f64>)]) -> (Vec<usize>, Array2<f64>) {
    let total: usize = clients.iter().map(|c| c.0.len()).sum();
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let cols = clients[0].1.ncols();
    for (ids, rows) in clients {
        let f = ids.len() as f64 / total as f64;
        for (i, &id) in ids.iter().enumerate() {
            let slot = acc.entry(id).or_insert_with(|| vec![0.0; cols]);
            for j in 0..cols {
                slot[j] += f * rows[[i, j]];
            }
        }
    }
    let ids: Vec<usize> = acc.keys().copied().collect();
    let mut out = Array2::zeros((ids.len(), cols));
    for (r, v) in acc.values().enumerate() {
        for j in 0..cols {
            out[[r, j]] = v[j];
        }
    }
    (ids, out)
}

fn dense_discover(fused: &Array2<f64>, lambda: f64, is_train: &[bool]) -> Array2<f64> {
    let mut out = Array2::zeros(fused.dim());
    for i in 0..fused.nrows() {
        if is_train[i] {
            continue;
        }
        let mut best = 0;
        for j in 1..fused.ncols() {
            if fused[[i, j]] > fused[[i, best]] {
                best = j;
            }
        }
        if fused[[i, best]] > lambda {
            out[[i, best]] = 1.0;
        }
    }
    out
}

fn dense_pseudo_graph(h: &Array2<f64>, s: usize) -> Vec<Vec<(usize, f64)>> {
    let m = h.nrows();
    let mut sim = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let mut dot = 0.0;
            for k in 0..h.ncols() {
                dot += h[[i, k]] * h[[j, k]];
            }
            sim[[i, j]] = if i == j { 0.0 } else { dot.max(0.0) };
        }
    }
    (0..m)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..m).filter(|&j| sim[[i, j]] > 0.0).map(|j| (j, sim[[i, j]])).collect();
            row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            row.truncate(s);
            let sum: f64 = row.iter().map(|e| e.1).sum();
            let mut row: Vec<(usize, f64)> = row.into_iter().map(|(j, v)| (j, v / sum)).collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect()
}

fn random_clients(rng: &mut ChaCha8Rng, cols: usize, stochastic: bool) -> Vec<(Vec<usize>, Array2<f64>)> {
    let nodes = rng.random_range(1..=10);
    let k = rng.random_range(1..=4);
    (0..k)
        .map(|_| {
            let mut ids: Vec<usize> = (0..nodes).filter(|_| rng.random_bool(0.6)).collect();
            if ids.is_empty() {
                ids.push(rng.random_range(0..nodes));
            }
            let mut rows = Array2::from_shape_simple_fn((ids.len(), cols), || rng.random_range(-2.0..2.0));
            if stochastic {
                rows.mapv_inplace(f64::abs);
                for mut r in rows.rows_mut() {
                    let s = r.sum();
                    r.mapv_inplace(|v| v / s);
                }
            }
            (ids, rows)
        })
        .collect()
}

fn server_oracles() -> Verdict {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        // aggregation
        let k = rng.random_range(1..=4);
        let uploads: Vec<(usize, ModelWeights)> = (0..k)
            .map(|_| (rng.random_range(1..=10), ModelWeights::glorot(3, 2, 2, &mut rng)))
            .collect();
        let got = server::aggregate_weights(&uploads.iter().map(|(n, w)| (*n, w)).collect::<Vec<_>>()).unwrap();
        let want = dense_aggregate(&uploads);
        let err = got.w0.iter().chain(&got.w1).zip(want.w0.iter().chain(&want.w1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_err = max_err.max(err);
        if err > 1e-12 {
            failures.push(format!("aggregate case {case}"));
        }

        // fusion of predictions and embeddings
        for stochastic in [true, false] {
            let clients = random_clients(&mut rng, 3, stochastic);
            let registry = GlobalRegistry::from_clients(clients.iter().map(|c| c.0.as_slice()));
            let uploads: Vec<RowUpload> = clients
                .iter()
                .map(|(ids, rows)| RowUpload { node_count: ids.len(), rows: rows.view(), ids })
                .collect();
            let got = if stochastic {
                server::fuse_predictions(&uploads, &registry, false)
            } else {
                server::fuse_embeddings(&uploads, &registry, false)
            }
            .unwrap();
            let (ids, want) = dense_fuse(&clients);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            max_err = max_err.max(err);
            if registry.union_ids() != ids.as_slice() || err > 1e-12 {
                failures.push(format!("fuse case {case}"));
            }
        }

        // pseudo-label discovery; coarse grid values force ties and threshold hits
        let m = rng.random_range(1..=10);
        let c = rng.random_range(2..=4);
        let mut fused = Array2::from_shape_simple_fn((m, c), || rng.random_range(0..4) as f64);
        for mut r in fused.rows_mut() {
            let s = r.sum().max(1.0);
            r.mapv_inplace(|v| v / s);
        }
        let is_train: Vec<bool> = (0..m).map(|_| rng.random_bool(0.3)).collect();
        let lambda = [0.0, 0.25, 0.5, 1.0 / 3.0, 0.75][rng.random_range(0..5)];
        let got = server::discover_pseudo_labels(&fused.view(), lambda, &is_train).unwrap();
        if got != dense_discover(&fused, lambda, &is_train) {
            failures.push(format!("discover case {case}"));
        }

        // pseudo graph with tied similarities
        let h = Array2::from_shape_simple_fn((m, c), || rng.random_range(-2..=2) as f64 * 0.5);
        let s = rng.random_range(1..=m.max(1));
        let got = server::build_pseudo_graph(&h.view(), s).unwrap();
        for (i, want) in dense_pseudo_graph(&h, s).iter().enumerate() {
            let (cols, vals) = got.row(i);
            let want_cols: Vec<usize> = want.iter().map(|e| e.0).collect();
            if cols != want_cols.as_slice() {
                failures.push(format!("pseudo graph selection case {case} row {i}"));
                continue;
            }
            let err = vals.iter().zip(want).map(|(a, b)| (a - b.1).abs()).fold(0.0, f64::max);
            max_err = max_err.max(err);
            if err > 1e-12 {
                failures.push(format!("pseudo graph weights case {case} row {i}"));
            }
        }
    }
    let elapsed = started.elapsed();
    let mut detail = format!(
        "100 instances x 4 operations, max abs error {max_err:.1e} (<= 1e-12), {:.2}s (< 10s)",
        elapsed.as_secs_f64()
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; mismatches: {}", failures.join(", ")));
    }
    verdict(failures.is_empty() && within(elapsed, 10), detail)
}

// ---------------------------------------------------------------- 3

fn single_client_equivalence() -> Verdict {
    let master = master("cora");
    let mut config = ExperimentConfig::new(Mode::Federated, dataset("cora"), vec![1.0]);
    config.hyper.dropout = 0.0;
    config.hyper.local_epochs = 1;
    config.hyper.max_rounds = 50;
    config.hyper.patience = 50;
    let (clients, _) = partition(&master, &config.plan_for(0)).unwrap();
    let federated = run_traced(&config, &clients, 0).unwrap();
    config.mode = Mode::Centralized;
    let centralized = run_traced(&config, &clients, 0).unwrap();
    let same = federated.trace.len() == 50 && federated.trace == centralized.trace;
    let first_diff = federated.trace.iter().zip(&centralized.trace).position(|(a, b)| a != b);
    verdict(
        same,
        format!(
            "K=1 federated vs centralized over {} / {} epochs, first differing epoch: {}",
            federated.trace.len(),
            centralized.trace.len(),
            first_diff.map_or("none".into(), |e| (e + 1).to_string())
        ),
    )
}

// ---------------------------------------------------------------- 4

fn report_bytes(outcome: &RunOutcome, dir: &Path) -> Vec<(String, Vec<u8>)> {
    write_report(dir, &outcome.report).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn ablation_wiring() -> Verdict {
    let master = master("cora");
    let tmp = tempfile::tempdir().unwrap();
    let mut config = shipped_config("cora", Mode::Fedgl);
    config.disable_pseudo_labels = true;
    config.disable_pseudo_graph = true;
    let (clients, _) = partition(&master, &config.plan_for(0)).unwrap();
    let fedgl = run(&config, &clients, 0).unwrap();
    config.mode = Mode::Federated;
    config.disable_pseudo_labels = false;
    config.disable_pseudo_graph = false;
    let federated = run(&config, &clients, 0).unwrap();
    let a = report_bytes(&fedgl, &tmp.path().join("fedgl"));
    let b = report_bytes(&federated, &tmp.path().join("federated"));
    verdict(
        a == b && !a.is_empty(),
        format!(
            "fedgl with zeroed artifacts vs federated, seed 0: {} files, {} rounds, identical: {}",
            a.len(),
            fedgl.report.rounds_executed,
            a == b
        ),
    )
}

// ---------------------------------------------------------------- 5

fn centralized_cora() -> Verdict {
    let started = Instant::now();
    let mut config = shipped_config("cora", Mode::Centralized);
    config.plan.proportions = vec![1.0];
    let outcomes = run_experiment(&config, &master("cora")).unwrap();
    let acc = mean_global(&outcomes);
    let elapsed = started.elapsed();
    verdict(
        (0.795..=0.825).contains(&acc) && within(elapsed, 180),
        format!("mean test accuracy {acc:.4} in [0.795, 0.825], {:.1}s (< 180s)", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 6 and 7

struct Comparison {
    cora_fedgl: Vec<RunOutcome>,
    elapsed: Duration,
    lines: Vec<String>,
    pass: bool,
}

fn fedgl_vs_federated() -> Comparison {
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut cora_fedgl = Vec::new();
    for (name, margin) in [("cora", 0.01), ("citeseer", 0.03)] {
        let master = master(name);
        let federated = run_experiment(&shipped_config(name, Mode::Federated), &master).unwrap();
        let fedgl = run_experiment(&shipped_config(name, Mode::Fedgl), &master).unwrap();
        let (a, b) = (mean_global(&fedgl), mean_global(&federated));
        pass &= a - b >= margin;
        lines.push(format!("{name}: fedgl {a:.4} - federated {b:.4} = {:+.4} (>= {margin})", a - b));
        if name == "cora" {
            cora_fedgl = fedgl;
        }
    }
    let elapsed = started.elapsed();
    pass &= within(elapsed, 1800);
    Comparison { cora_fedgl, elapsed, lines, pass }
}

fn local_goal(cora_fedgl: &[RunOutcome]) -> Verdict {
    let local = run_experiment(&shipped_config("cora", Mode::Local), &master("cora")).unwrap();
    let (a, b) = (mean_local(cora_fedgl), mean_local(&local));
    verdict(a > b, format!("cora mean local accuracy: fedgl {a:.4} vs local {b:.4} (strictly greater)"))
}

// ---------------------------------------------------------------- 8

/// Round-1 uploads of a FedGL run on `graphs` and the artifacts built from them.
fn first_round(config: &ExperimentConfig, graphs: &[Graph]) -> (Vec<RoundUpload>, Array2<f64>, GlobalRegistry, Vec<bool>) {
    let registry = GlobalRegistry::from_clients(graphs.iter().map(|g| g.global_ids.as_slice()));
    let g0 = &graphs[0];
    let start = ModelWeights::glorot(g0.num_features(), config.hyper.hidden, g0.num_classes, &mut ChaCha8Rng::seed_from_u64(7));
    let hyper = LocalHyper {
        epochs: config.hyper.local_epochs,
        alpha: config.hyper.alpha,
        beta: config.hyper.beta,
        dropout: config.hyper.dropout,
        embedding_source: config.embedding_source,
    };
    let uploads: Vec<RoundUpload> = graphs
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut state = ClientState::new(k, g.clone(), start.clone(), 0.01, config.decay_for(g), 0).unwrap();
            let n = g.num_nodes();
            let zeros = Array2::zeros((n, g.num_classes));
            local_train(&mut state, &start, &zeros.view(), &CsrMatrix::zeros(n, n), &hyper, 1).unwrap()
        })
        .collect();
    let rows: Vec<RowUpload> = uploads
        .iter()
        .map(|u| RowUpload { node_count: u.node_count, rows: u.predictions.view(), ids: &u.ids })
        .collect();
    let fused = server::fuse_predictions(&rows, &registry, false).unwrap();
    let train_ids: Vec<usize> = graphs
        .iter()
        .flat_map(|g| Graph::mask_indices(&g.train_mask).into_iter().map(|r| g.global_ids[r]))
        .collect();
    let is_train = server::train_flags(&registry, &train_ids).unwrap();
    (uploads, fused, registry, is_train)
}

fn same_upload(a: &RoundUpload, b: &RoundUpload) -> bool {
    a.weights == b.weights && a.predictions == b.predictions && a.embeddings == b.embeddings && a.ids == b.ids
}

fn limits_and_monotonicity() -> Verdict {
    let master = master("cora");
    let mut config = shipped_config("cora", Mode::Fedgl);
    config.hyper.local_epochs = 30;
    let (graphs, _) = partition(&master, &config.plan_for(0)).unwrap();
    let (uploads, fused, registry, is_train) = first_round(&config, &graphs);

    let counts: Vec<usize> = (1..=9)
        .map(|i| {
            let labels = server::discover_pseudo_labels(&fused.view(), i as f64 / 10.0, &is_train).unwrap();
            server::pseudo_label_count(&labels.view())
        })
        .collect();
    let monotone = counts.windows(2).all(|w| w[0] >= w[1]) && counts[0] > 0;

    // nonzero artifacts, then one client round with α = β = 0 vs zero artifacts
    let pseudo_labels = server::discover_pseudo_labels(&fused.view(), 0.1, &is_train).unwrap();
    let rows: Vec<RowUpload> = uploads
        .iter()
        .map(|u| RowUpload { node_count: u.node_count, rows: u.embeddings.view(), ids: &u.ids })
        .collect();
    let pseudo_graph = server::build_pseudo_graph(&server::fuse_embeddings(&rows, &registry, false).unwrap().view(), 100).unwrap();
    let start = server::aggregate_weights(&uploads.iter().map(|u| (u.node_count, &u.weights)).collect::<Vec<_>>()).unwrap();
    let inert = LocalHyper {
        epochs: 10,
        alpha: 0.0,
        beta: 0.0,
        dropout: 0.5,
        embedding_source: config.embedding_source,
    };
    let mut equal = true;
    let mut ssl_rows = 0;
    for (k, g) in graphs.iter().enumerate() {
        let pos = registry.positions(&g.global_ids).unwrap();
        let labels = project_rows(&pseudo_labels.view(), &pos).unwrap();
        let slice = pseudo_graph.submatrix(&pos);
        ssl_rows += server::pseudo_label_count(&labels.view());
        let n = g.num_nodes();
        let new_state = || ClientState::new(k, g.clone(), start.clone(), 0.01, config.decay_for(g), 3).unwrap();
        let with = local_train(&mut new_state(), &start, &labels.view(), &slice, &inert, 1).unwrap();
        let zeros = Array2::zeros((n, g.num_classes));
        let without = local_train(&mut new_state(), &start, &zeros.view(), &CsrMatrix::zeros(n, n), &inert, 1).unwrap();
        equal &= same_upload(&with, &without);
    }
    verdict(
        monotone && equal && ssl_rows > 0 && pseudo_graph.nnz() > 0,
        format!(
            "pseudo-label counts over lambda 0.1..0.9: {counts:?}; alpha = beta = 0 uploads equal to federated: {equal} ({ssl_rows} pseudo-label rows, {} pseudo edges supplied)",
            pseudo_graph.nnz()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let config = root().join("configs/toy.conf");
    let mut checked = Vec::new();
    let mut pass = true;
    for mode in ["fedgl", "local"] {
        let trees: Vec<_> = (0..2)
            .map(|i| {
                let out = tmp.path().join(format!("{mode}_{i}"));
                let args = ["fedgl", "train", "--config", config.to_str().unwrap(), "--mode", mode, "--out", out.to_str().unwrap()];
                let code = pool.install(|| fedgl::cli::run(args));
                (code, tree_bytes(&out))
            })
            .collect();
        let ok = trees.iter().all(|t| t.0 == 0) && trees[0].1 == trees[1].1 && !trees[0].1.is_empty();
        pass &= ok;
        checked.push(format!("{mode}: {} files identical: {ok}", trees[0].1.len()));
    }
    verdict(pass, format!("toy train twice on a 4-thread pool; {}", checked.join("; ")))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |id: usize, name: &'static str, v: Verdict| {
        println!("criterion {id} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    report(1, "gradient check", guarded(gradient_check));
    report(2, "server oracles", guarded(server_oracles));
    report(3, "single-client equivalence", guarded(single_client_equivalence));
    report(4, "ablation wiring", guarded(ablation_wiring));
    report(5, "centralized cora", guarded(centralized_cora));
    let comparison = panic::catch_unwind(fedgl_vs_federated);
    match &comparison {
        Ok(c) => report(
            6,
            "fedgl beats federated",
            verdict(c.pass, format!("{}; {:.0}s (< 1800s)", c.lines.join("; "), c.elapsed.as_secs_f64())),
        ),
        Err(_) => report(6, "fedgl beats federated", verdict(false, "panicked".into())),
    }
    match &comparison {
        Ok(c) => report(7, "local goal", guarded(|| local_goal(&c.cora_fedgl))),
        Err(_) => report(7, "local goal", verdict(false, "no fedgl runs".into())),
    }
    report(8, "limits and monotonicity", guarded(limits_and_monotonicity));
    report(9, "cli determinism", guarded(cli_determinism));

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" (criteria {})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
