//! Round loop for FedGL and its ablations, plus the centralized and local
//! baselines, with early stopping and global/local evaluation.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::index;
use rayon::prelude::*;

use crate::client::{local_train, ClientState, EmbeddingSource, LocalHyper, RoundUpload};
use crate::error::{FedglError, Result};
use crate::gcn::{self, ModelWeights};
use crate::graph::{merge_graphs, normalize_adjacency, project_rows, GlobalRegistry, Graph};
use crate::partition::{partition, PartitionPlan};
use crate::rng::{stream_rng, Stream};
use crate::server::{self, GlobalArtifacts, RowUpload};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Centralized,
    Local,
    Federated,
    Fedgl,
    FedglNoGpg,
    FedglNoGpl,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Centralized,
        Mode::Local,
        Mode::Federated,
        Mode::Fedgl,
        Mode::FedglNoGpg,
        Mode::FedglNoGpl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Centralized => "centralized",
            Mode::Local => "local",
            Mode::Federated => "federated",
            Mode::Fedgl => "fedgl",
            Mode::FedglNoGpg => "fedgl_no_gpg",
            Mode::FedglNoGpl => "fedgl_no_gpl",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    fn uses_pseudo_labels(self) -> bool {
        matches!(self, Mode::Fedgl | Mode::FedglNoGpg)
    }

    fn uses_pseudo_graph(self) -> bool {
        matches!(self, Mode::Fedgl | Mode::FedglNoGpl)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub s: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub local_epochs: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub participation_ratio: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lambda: 0.5,
            alpha: 0.2,
            beta: 1.0,
            s: 100,
            dropout: 0.5,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            hidden: 16,
            local_epochs: 10,
            max_rounds: 300,
            patience: 30,
            participation_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dataset: std::path::PathBuf,
    pub plan: PartitionPlan,
    /// Seed for partitioning and splits; each run seed is used when unset.
    pub partition_seed: Option<u64>,
    pub hyper: Hyper,
    pub seeds: Vec<u64>,
    pub fusion_renormalize: bool,
    pub embedding_source: EmbeddingSource,
    pub disable_pseudo_labels: bool,
    pub disable_pseudo_graph: bool,
    pub normalize_features: bool,
    /// Multiply the decay coefficient by the graph's training-label count, so
    /// the summed loss sees the same relative decay as a mean loss would.
    pub decay_per_label: bool,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, dataset: impl Into<std::path::PathBuf>, proportions: Vec<f64>) -> Self {
        ExperimentConfig {
            mode,
            dataset: dataset.into(),
            plan: PartitionPlan::new(proportions, 0),
            partition_seed: None,
            hyper: Hyper::default(),
            seeds: vec![0, 1, 2, 3, 4],
            fusion_renormalize: false,
            embedding_source: EmbeddingSource::Output,
            disable_pseudo_labels: false,
            disable_pseudo_graph: false,
            normalize_features: true,
            decay_per_label: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let bad = |msg: String| Err(FedglError::validation(msg));
        if !(h.participation_ratio > 0.0 && h.participation_ratio <= 1.0) {
            return bad(format!("participation ratio {} outside (0, 1]", h.participation_ratio));
        }
        if h.max_rounds == 0 || h.patience > h.max_rounds {
            return bad(format!("need 1 <= max_rounds and patience <= max_rounds, got {} / {}", h.max_rounds, h.patience));
        }
        if !(0.0..1.0).contains(&h.lambda) {
            return bad(format!("lambda {} outside [0, 1)", h.lambda));
        }
        if !(h.alpha >= 0.0) || !(h.beta >= 0.0) {
            return bad(format!("alpha and beta must be non-negative, got {} / {}", h.alpha, h.beta));
        }
        if h.s == 0 || h.hidden == 0 || h.local_epochs == 0 {
            return bad("s, hidden and local_epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&h.dropout) {
            return bad(format!("dropout {} outside [0, 1)", h.dropout));
        }
        if !(h.learning_rate > 0.0) || !(h.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.plan.validate()
    }

    fn pseudo_labels_on(&self) -> bool {
        self.mode.uses_pseudo_labels() && !self.disable_pseudo_labels
    }

    fn pseudo_graph_on(&self) -> bool {
        self.mode.uses_pseudo_graph() && !self.disable_pseudo_graph
    }

    fn local_hyper(&self) -> LocalHyper {
        LocalHyper {
            epochs: self.hyper.local_epochs,
            alpha: self.hyper.alpha,
            beta: self.hyper.beta,
            dropout: self.hyper.dropout,
            embedding_source: self.embedding_source,
        }
    }

    /// Decay coefficient for a model trained on `graph`.
    pub fn decay_for(&self, graph: &Graph) -> f64 {
        if self.decay_per_label {
            self.hyper.weight_decay * graph.train_mask.iter().filter(|&&t| t).count() as f64
        } else {
            self.hyper.weight_decay
        }
    }

    /// The partition plan as used for run seed `seed`.
    pub fn plan_for(&self, seed: u64) -> PartitionPlan {
        PartitionPlan {
            seed: self.partition_seed.unwrap_or(seed),
            ..self.plan.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub global_val_acc: Option<f64>,
    pub global_test_acc: Option<f64>,
    pub mean_local_test_acc: f64,
    pub pseudo_label_count: usize,
    pub pseudo_graph_nnz: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub global_test_acc: Option<f64>,
    pub per_client_local_test_acc: Vec<f64>,
    pub best_round: usize,
    pub rounds_executed: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Best-validation weights (the last client's for local mode).
    pub weights: ModelWeights,
    /// Global model at the end of every executed round, when tracing.
    pub trace: Vec<ModelWeights>,
    pub wall_time: Duration,
}

/// Best-validation bookkeeping: strict improvement resets the counter.
struct EarlyStopping<T> {
    patience: usize,
    best_acc: f64,
    best_round: usize,
    best: Option<T>,
    stale: usize,
}

impl<T> EarlyStopping<T> {
    fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_acc: f64::NEG_INFINITY,
            best_round: 0,
            best: None,
            stale: 0,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, round: usize, acc: f64, snapshot: impl FnOnce() -> T) -> bool {
        if acc > self.best_acc {
            self.best_acc = acc;
            self.best_round = round;
            self.best = Some(snapshot());
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

/// The merged graph and its normalised adjacency, used for the global goal.
pub struct GlobalView {
    pub graph: Graph,
    pub adjacency: CsrMatrix,
}

impl GlobalView {
    pub fn new(clients: &[Graph]) -> Result<Self> {
        let graph = merge_graphs(clients)?;
        let adjacency = normalize_adjacency(&graph.adjacency)?.into_inner();
        Ok(GlobalView { graph, adjacency })
    }

    /// Validation and test accuracy of `weights`.
    pub fn accuracies(&self, weights: &ModelWeights) -> Result<(f64, f64)> {
        let out = gcn::predict(&self.adjacency, &self.graph.features, weights)?;
        let p = out.probabilities.view();
        Ok((
            gcn::accuracy_by_index(&p, &self.graph.labels, &self.graph.val_mask)?,
            gcn::accuracy_by_index(&p, &self.graph.labels, &self.graph.test_mask)?,
        ))
    }
}

/// Accuracy of `weights` on one client's test set, using the client's
/// current adjacency.
fn local_test_acc(client: &ClientState, weights: &ModelWeights) -> Result<f64> {
    let out = client.predict(weights)?;
    gcn::accuracy_by_index(&out.probabilities.view(), &client.graph.labels, &client.graph.test_mask)
}

fn local_test_accs(clients: &[ClientState], weights: &ModelWeights) -> Result<Vec<f64>> {
    clients.par_iter().map(|c| local_test_acc(c, weights)).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Global accuracy on the merged test set and per-client local accuracies.
pub fn evaluate_goals(
    weights: &ModelWeights,
    clients: &[ClientState],
    global: &GlobalView,
) -> Result<(f64, Vec<f64>)> {
    let (_, test) = global.accuracies(weights)?;
    Ok((test, local_test_accs(clients, weights)?))
}

fn check_clients(clients: &[Graph], mode: Mode) -> Result<()> {
    if clients.is_empty() {
        return Err(FedglError::validation("no clients"));
    }
    for (k, g) in clients.iter().enumerate() {
        if !g.test_mask.contains(&true) {
            return Err(FedglError::validation(format!("client {k} has no test nodes")));
        }
        if mode == Mode::Local && !g.val_mask.contains(&true) {
            return Err(FedglError::validation(format!("client {k} has no validation nodes")));
        }
    }
    Ok(())
}

fn initial_weights(config: &ExperimentConfig, clients: &[Graph], seed: u64) -> ModelWeights {
    let g = &clients[0];
    ModelWeights::glorot(
        g.num_features(),
        config.hyper.hidden,
        g.num_classes,
        &mut stream_rng(seed, Stream::Init, 0),
    )
}

fn client_states(config: &ExperimentConfig, clients: &[Graph], start: &ModelWeights, seed: u64) -> Result<Vec<ClientState>> {
    clients
        .iter()
        .enumerate()
        .map(|(k, g)| {
            ClientState::new(
                k,
                g.clone(),
                start.clone(),
                config.hyper.learning_rate,
                config.decay_for(g),
                seed,
            )
        })
        .collect()
}

/// `⌈ratio · K⌉` distinct clients, ascending.
pub fn sample_participants(num_clients: usize, ratio: f64, seed: u64, round: usize) -> Vec<usize> {
    let count = ((ratio * num_clients as f64 - 1e-9).ceil() as usize).clamp(1, num_clients);
    let mut picked = index::sample(&mut stream_rng(seed, Stream::Participants, round as u64), num_clients, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Runs one seed of `config` on already-partitioned clients.
pub fn run(config: &ExperimentConfig, clients: &[Graph], seed: u64) -> Result<RunOutcome> {
    run_inner(config, clients, seed, false)
}

/// Like [`run`], also recording the global model after every round.
pub fn run_traced(config: &ExperimentConfig, clients: &[Graph], seed: u64) -> Result<RunOutcome> {
    run_inner(config, clients, seed, true)
}

fn run_inner(config: &ExperimentConfig, clients: &[Graph], seed: u64, trace: bool) -> Result<RunOutcome> {
    config.validate()?;
    check_clients(clients, config.mode)?;
    let started = Instant::now();
    let (report, weights, trace) = match config.mode {
        Mode::Centralized => run_centralized(config, clients, seed, trace)?,
        Mode::Local => run_local(config, clients, seed, trace)?,
        _ => run_fedgl(config, clients, seed, trace)?,
    };
    Ok(RunOutcome {
        report,
        weights,
        trace,
        wall_time: started.elapsed(),
    })
}

/// Partitions the master for each seed and runs it.
pub fn run_experiment(config: &ExperimentConfig, master: &Graph) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    config
        .seeds
        .iter()
        .map(|&seed| {
            let (clients, _) = partition(master, &config.plan_for(seed))?;
            run(config, &clients, seed)
        })
        .collect()
}

type Trained = (MetricsReport, ModelWeights, Vec<ModelWeights>);

fn run_fedgl(config: &ExperimentConfig, graphs: &[Graph], seed: u64, trace: bool) -> Result<Trained> {
    let global = GlobalView::new(graphs)?;
    let registry = GlobalRegistry::from_clients(graphs.iter().map(|g| g.global_ids.as_slice()));
    let positions: Vec<Vec<usize>> = graphs
        .iter()
        .map(|g| registry.positions(&g.global_ids))
        .collect::<Result<_>>()?;
    let is_train = {
        let ids: Vec<usize> = graphs
            .iter()
            .flat_map(|g| Graph::mask_indices(&g.train_mask).into_iter().map(|r| g.global_ids[r]))
            .collect();
        server::train_flags(&registry, &ids)?
    };
    let start = initial_weights(config, graphs, seed);
    let mut clients = client_states(config, graphs, &start, seed)?;
    let mut artifacts = GlobalArtifacts::initial(start, &registry);
    let hyper = config.local_hyper();
    let labels_on = config.pseudo_labels_on();
    let graph_on = config.pseudo_graph_on();

    let mut stopper = EarlyStopping::new(config.hyper.patience);
    let mut rounds = Vec::new();
    let mut history = Vec::new();
    for round in 1..=config.hyper.max_rounds {
        let participants = sample_participants(clients.len(), config.hyper.participation_ratio, seed, round);
        let mut active = vec![false; clients.len()];
        for &k in &participants {
            active[k] = true;
        }
        let pseudo_label_count = artifacts.pseudo_label_count();
        let pseudo_graph_nnz = artifacts.pseudo_graph.nnz();

        let shared = &artifacts;
        let uploads: Vec<RoundUpload> = clients
            .par_iter_mut()
            .zip(&positions)
            .filter(|(c, _)| active[c.client_id])
            .map(|(c, pos)| {
                let labels = project_rows(&shared.pseudo_labels.view(), pos)?;
                let slice = shared.pseudo_graph.submatrix(pos);
                local_train(c, &shared.weights, &labels.view(), &slice, &hyper, round)
            })
            .collect::<Result<_>>()?;

        let weights = server::aggregate_weights(
            &uploads.iter().map(|u| (u.node_count, &u.weights)).collect::<Vec<_>>(),
        )?;
        let pseudo_labels = if labels_on {
            let rows: Vec<RowUpload> = uploads
                .iter()
                .map(|u| RowUpload { node_count: u.node_count, rows: u.predictions.view(), ids: &u.ids })
                .collect();
            let fused = server::fuse_predictions(&rows, &registry, config.fusion_renormalize)?;
            server::discover_pseudo_labels(&fused.view(), config.hyper.lambda, &is_train)?
        } else {
            Array2::zeros(artifacts.pseudo_labels.dim())
        };
        let pseudo_graph = if graph_on {
            let rows: Vec<RowUpload> = uploads
                .iter()
                .map(|u| RowUpload { node_count: u.node_count, rows: u.embeddings.view(), ids: &u.ids })
                .collect();
            let fused = server::fuse_embeddings(&rows, &registry, config.fusion_renormalize)?;
            server::build_pseudo_graph(&fused.view(), config.hyper.s)?
        } else {
            CsrMatrix::zeros(registry.union_size(), registry.union_size())
        };
        artifacts = GlobalArtifacts {
            weights,
            pseudo_labels,
            pseudo_graph,
            round,
        };

        let (val, test) = global.accuracies(&artifacts.weights)?;
        let local = local_test_accs(&clients, &artifacts.weights)?;
        rounds.push(RoundRecord {
            round,
            global_val_acc: Some(val),
            global_test_acc: Some(test),
            mean_local_test_acc: mean(&local),
            pseudo_label_count,
            pseudo_graph_nnz,
        });
        if trace {
            history.push(artifacts.weights.clone());
        }
        if stopper.observe(round, val, || (artifacts.weights.clone(), test, local)) {
            break;
        }
    }
    let (weights, test, local) = stopper.best.expect("at least one round runs");
    let report = MetricsReport {
        seed,
        rounds_executed: rounds.len(),
        rounds,
        global_test_acc: Some(test),
        per_client_local_test_acc: local,
        best_round: stopper.best_round,
    };
    Ok((report, weights, history))
}

/// Trains one model on one graph in rounds of `local_epochs` epochs with
/// early stopping on `val_acc`, calling `record` after every round.
fn train_alone(
    config: &ExperimentConfig,
    state: &mut ClientState,
    mut val_acc: impl FnMut(&ClientState) -> Result<f64>,
    mut record: impl FnMut(usize, &ClientState) -> Result<()>,
) -> Result<(ModelWeights, usize, usize)> {
    let n = state.node_count();
    let classes = state.graph.num_classes;
    let zeros = Array2::zeros((n, classes));
    let empty = CsrMatrix::zeros(n, n);
    let hyper = LocalHyper {
        alpha: 0.0,
        beta: 0.0,
        ..config.local_hyper()
    };
    let mut stopper = EarlyStopping::new(config.hyper.patience);
    let mut executed = 0;
    for round in 1..=config.hyper.max_rounds {
        let start = state.weights.clone();
        local_train(state, &start, &zeros.view(), &empty, &hyper, round)?;
        executed = round;
        record(round, state)?;
        let acc = val_acc(state)?;
        if stopper.observe(round, acc, || state.weights.clone()) {
            break;
        }
    }
    Ok((stopper.best.expect("at least one round runs"), stopper.best_round, executed))
}

fn run_centralized(config: &ExperimentConfig, graphs: &[Graph], seed: u64, trace: bool) -> Result<Trained> {
    let global = GlobalView::new(graphs)?;
    let start = initial_weights(config, graphs, seed);
    let mut state = ClientState::new(
        0,
        global.graph.clone(),
        start.clone(),
        config.hyper.learning_rate,
        config.decay_for(&global.graph),
        seed,
    )?;
    let locals = client_states(config, graphs, &start, seed)?;
    let mut rounds = Vec::new();
    let mut history = Vec::new();
    let (weights, best_round, executed) = train_alone(
        config,
        &mut state,
        |s| global.accuracies(&s.weights).map(|(v, _)| v),
        |round, s| {
            let (val, test) = global.accuracies(&s.weights)?;
            rounds.push(RoundRecord {
                round,
                global_val_acc: Some(val),
                global_test_acc: Some(test),
                mean_local_test_acc: mean(&local_test_accs(&locals, &s.weights)?),
                pseudo_label_count: 0,
                pseudo_graph_nnz: 0,
            });
            if trace {
                history.push(s.weights.clone());
            }
            Ok(())
        },
    )?;
    let (test, local) = evaluate_goals(&weights, &locals, &global)?;
    let report = MetricsReport {
        seed,
        rounds,
        global_test_acc: Some(test),
        per_client_local_test_acc: local,
        best_round,
        rounds_executed: executed,
    };
    Ok((report, weights, history))
}

struct LocalRun {
    weights: ModelWeights,
    best_round: usize,
    executed: usize,
    /// Test accuracy of the current weights after each round.
    test_by_round: Vec<f64>,
    best_test: f64,
}

fn run_local(config: &ExperimentConfig, graphs: &[Graph], seed: u64, trace: bool) -> Result<Trained> {
    let start = initial_weights(config, graphs, seed);
    let states = client_states(config, graphs, &start, seed)?;
    let runs: Vec<LocalRun> = states
        .into_par_iter()
        .map(|mut state| {
            let mut test_by_round = Vec::new();
            let val = |s: &ClientState| {
                let out = s.predict(&s.weights)?;
                gcn::accuracy_by_index(&out.probabilities.view(), &s.graph.labels, &s.graph.val_mask)
            };
            let (weights, best_round, executed) = train_alone(config, &mut state, val, |_, s| {
                test_by_round.push(local_test_acc(s, &s.weights)?);
                Ok(())
            })?;
            let best_test = local_test_acc(&state, &weights)?;
            Ok(LocalRun {
                weights,
                best_round,
                executed,
                test_by_round,
                best_test,
            })
        })
        .collect::<Result<_>>()?;

    let executed = runs.iter().map(|r| r.executed).max().unwrap_or(0);
    let rounds = (1..=executed)
        .map(|round| {
            // a client that already stopped contributes its restored model
            let accs: Vec<f64> = runs
                .iter()
                .map(|r| r.test_by_round.get(round - 1).copied().unwrap_or(r.best_test))
                .collect();
            RoundRecord {
                round,
                global_val_acc: None,
                global_test_acc: None,
                mean_local_test_acc: mean(&accs),
                pseudo_label_count: 0,
                pseudo_graph_nnz: 0,
            }
        })
        .collect();
    let report = MetricsReport {
        seed,
        rounds,
        global_test_acc: None,
        per_client_local_test_acc: runs.iter().map(|r| r.best_test).collect(),
        best_round: runs.iter().map(|r| r.best_round).max().unwrap_or(0),
        rounds_executed: executed,
    };
    let history = if trace { runs.iter().map(|r| r.weights.clone()).collect() } else { Vec::new() };
    let weights = runs.into_iter().last().expect("at least one client").weights;
    Ok((report, weights, history))
}
