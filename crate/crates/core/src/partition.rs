//! Building the federated dataset: splits on the master graph, then per-client
//! node samples with natural or controlled overlap.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{FedglError, Result};
use crate::graph::{GlobalRegistry, Graph};
use crate::rng::{stream_rng, Stream};

/// Training labels per class for the fixed split when a dataset ships none.
pub const FIXED_LABELS_PER_CLASS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// The dataset's canonical split, or a seeded 20-per-class selection.
    Fixed,
    Random { labels_per_class: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub proportions: Vec<f64>,
    pub overlap_ratio: Option<f64>,
    pub split_mode: SplitMode,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(proportions: Vec<f64>, seed: u64) -> Self {
        PartitionPlan {
            proportions,
            overlap_ratio: None,
            split_mode: SplitMode::Fixed,
            val_size: 500,
            test_size: 1000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.proportions.is_empty() {
            return Err(FedglError::validation("partition needs at least one client"));
        }
        if let Some(p) = self.proportions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(FedglError::validation(format!("sampling proportion {p} outside (0, 1]")));
        }
        if let Some(rho) = self.overlap_ratio {
            if !(0.0..1.0).contains(&rho) {
                return Err(FedglError::validation(format!("overlap ratio {rho} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn apply(self, graph: &mut Graph) {
        graph.train_mask = self.train;
        graph.val_mask = self.val;
        graph.test_mask = self.test;
    }
}

fn node_budget(proportion: f64, n: usize) -> usize {
    // tolerate products like 0.7 * 10 = 6.999...
    (proportion * n as f64 + 1e-9).floor() as usize
}

/// Train/val/test masks for `graph`. Fixed mode returns the graph's own
/// split when it has one.
pub fn make_splits(
    graph: &Graph,
    mode: SplitMode,
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<SplitMasks> {
    let per_class = match mode {
        SplitMode::Fixed if graph.has_split() => {
            return Ok(SplitMasks {
                train: graph.train_mask.clone(),
                val: graph.val_mask.clone(),
                test: graph.test_mask.clone(),
            })
        }
        SplitMode::Fixed => FIXED_LABELS_PER_CLASS,
        SplitMode::Random { labels_per_class } => labels_per_class,
    };
    let n = graph.num_nodes();
    let mut labeled: Vec<usize> = (0..n).filter(|&i| graph.labels[i].is_some()).collect();
    let mut rng = stream_rng(seed, Stream::Split, 0);
    labeled.shuffle(&mut rng);

    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    let mut taken = vec![0usize; graph.num_classes];
    let mut rest = Vec::with_capacity(labeled.len());
    for i in labeled {
        let class = graph.labels[i].expect("filtered to labeled nodes");
        if taken[class] < per_class {
            taken[class] += 1;
            masks.train[i] = true;
        } else {
            rest.push(i);
        }
    }
    if let Some(class) = taken.iter().position(|&t| t < per_class) {
        return Err(FedglError::validation(format!(
            "class {class} has only {} labeled nodes, {per_class} required",
            taken[class]
        )));
    }
    if rest.len() < val_size + test_size {
        return Err(FedglError::validation(format!(
            "{} labeled nodes left for {val_size} validation and {test_size} test nodes",
            rest.len()
        )));
    }
    for &i in &rest[..val_size] {
        masks.val[i] = true;
    }
    for &i in &rest[val_size..val_size + test_size] {
        masks.test[i] = true;
    }
    Ok(masks)
}

/// Master graph with the plan's split applied.
pub fn prepare_master(master: &Graph, plan: &PartitionPlan) -> Result<Graph> {
    let masks = make_splits(master, plan.split_mode, plan.val_size, plan.test_size, plan.seed)?;
    let mut graph = master.clone();
    masks.apply(&mut graph);
    Ok(graph)
}

/// Induced subgraph on `⌊proportion · N⌋` uniformly sampled nodes, rows in
/// ascending order.
pub fn sample_client<R: Rng + ?Sized>(master: &Graph, proportion: f64, rng: &mut R) -> Result<Graph> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(FedglError::validation(format!(
            "sampling proportion {proportion} outside (0, 1]"
        )));
    }
    let n = master.num_nodes();
    let count = node_budget(proportion, n);
    if count == 0 {
        return Err(FedglError::validation(format!(
            "proportion {proportion} of {n} nodes samples no node"
        )));
    }
    let mut rows = index::sample(rng, n, count).into_vec();
    rows.sort_unstable();
    Ok(master.induced_subgraph(&rows))
}

/// Client rows under controlled overlap: client `k` takes a prefix of
/// `round(ρ · n_k)` nodes from one shared pool and the rest from its own
/// exclusive pool.
fn overlapping_rows(n: usize, proportions: &[f64], rho: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let budgets: Vec<usize> = proportions.iter().map(|&p| node_budget(p, n)).collect();
    if let Some(k) = budgets.iter().position(|&b| b == 0) {
        return Err(FedglError::validation(format!("client {k} samples no node")));
    }
    let shared: Vec<usize> = budgets.iter().map(|&b| (rho * b as f64).round() as usize).collect();
    let pool = shared.iter().copied().max().unwrap_or(0);
    let exclusive: usize = budgets.iter().zip(&shared).map(|(b, s)| b - s).sum();
    if pool + exclusive > n {
        return Err(FedglError::validation(format!(
            "overlap {rho} needs {} distinct nodes, master has {n}",
            pool + exclusive
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Sample, 0));
    let mut next = pool;
    Ok(budgets
        .iter()
        .zip(&shared)
        .map(|(&b, &s)| {
            let mut rows = order[..s].to_vec();
            rows.extend_from_slice(&order[next..next + b - s]);
            next += b - s;
            rows.sort_unstable();
            rows
        })
        .collect())
}

/// Splits the master per the plan, then samples one subgraph per client.
/// Clients inherit the master's split membership.
pub fn partition(master: &Graph, plan: &PartitionPlan) -> Result<(Vec<Graph>, GlobalRegistry)> {
    plan.validate()?;
    let master = prepare_master(master, plan)?;
    let clients = match plan.overlap_ratio {
        None => plan
            .proportions
            .iter()
            .enumerate()
            .map(|(k, &p)| sample_client(&master, p, &mut stream_rng(plan.seed, Stream::Sample, k as u64 + 1)))
            .collect::<Result<Vec<_>>>()?,
        Some(rho) => overlapping_rows(master.num_nodes(), &plan.proportions, rho, plan.seed)?
            .iter()
            .map(|rows| master.induced_subgraph(rows))
            .collect(),
    };
    let registry = GlobalRegistry::from_clients(clients.iter().map(|g| g.global_ids.as_slice()));
    Ok((clients, registry))
}

/// Mean over client pairs of `|V_i ∩ V_j| / min(N_i, N_j)`.
pub fn mean_pairwise_overlap(clients: &[Graph]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..clients.len() {
        for j in i + 1..clients.len() {
            let (a, b) = (&clients[i].global_ids, &clients[j].global_ids);
            let shared = a.iter().filter(|id| b.binary_search(id).is_ok()).count();
            total += shared as f64 / a.len().min(b.len()) as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
