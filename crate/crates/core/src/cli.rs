//! Command-line interface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::client::EmbeddingSource;
use crate::config::{apply_setting, config_to_string, read_config};
use crate::error::{FedglError, Result};
use crate::gcn;
use crate::graph::{normalize_adjacency, Graph};
use crate::io::{self, HEADER};
use crate::orchestrator::{self, ExperimentConfig, GlobalView, Mode, RunOutcome};
use crate::partition::{self, make_splits, PartitionPlan, SplitMode};

#[derive(Debug, Parser)]
#[command(name = "fedgl", version, about = "Federated graph learning with global self-supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Output,
    Hidden,
}

impl From<SourceArg> for EmbeddingSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Output => EmbeddingSource::Output,
            SourceArg::Hidden => EmbeddingSource::Hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GridParam {
    Lambda,
    Alpha,
    Beta,
    S,
    Participation,
    Overlap,
}

impl GridParam {
    fn key(self) -> &'static str {
        match self {
            GridParam::Lambda => "lambda",
            GridParam::Alpha => "alpha",
            GridParam::Beta => "beta",
            GridParam::S => "s",
            GridParam::Participation => "participation_ratio",
            GridParam::Overlap => "overlap_ratio",
        }
    }

    fn label(self) -> &'static str {
        match self {
            GridParam::Participation => "participation",
            GridParam::Overlap => "overlap",
            other => other.key(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample client subgraphs from a dataset and write a manifest.
    Partition {
        /// Take the dataset and partition plan from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated sampling proportion per client.
        #[arg(long, value_delimiter = ',')]
        proportions: Vec<f64>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        labels_per_class: Option<usize>,
        #[arg(long)]
        val_size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and write one report per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Use a frozen partition instead of sampling one per seed.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of saved weights on a dataset.
    Evaluate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Seed for the fallback split when the dataset ships none.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        raw_features: bool,
    },
    /// Write per-node embeddings of saved weights.
    ExportEmbeddings {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "output")]
        source: SourceArg,
        #[arg(long)]
        raw_features: bool,
    },
    /// Sweep one parameter, one report directory per value.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: GridParam,
        /// `a..b` (step 0.1), `a..b:step`, or a comma-separated list.
        #[arg(long)]
        values: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the CLI on `args` (including the program name); returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Partition {
            config,
            dataset,
            proportions,
            overlap,
            split,
            labels_per_class,
            val_size,
            test_size,
            seed,
            out,
        } => {
            let (mut plan, config_dataset, normalize) = match config {
                Some(path) => {
                    let c = read_config(&path)?;
                    (c.plan.clone(), Some(c.dataset), c.normalize_features)
                }
                None => (PartitionPlan::new(vec![], seed), None, true),
            };
            plan.seed = seed;
            if !proportions.is_empty() {
                plan.proportions = proportions;
            }
            if overlap.is_some() {
                plan.overlap_ratio = overlap;
            }
            match (split, labels_per_class) {
                (Some(SplitArg::Fixed), _) => plan.split_mode = SplitMode::Fixed,
                (Some(SplitArg::Random), n) => {
                    plan.split_mode = SplitMode::Random { labels_per_class: n.unwrap_or(20) }
                }
                (None, Some(n)) => plan.split_mode = SplitMode::Random { labels_per_class: n },
                (None, None) => {}
            }
            plan.val_size = val_size.unwrap_or(plan.val_size);
            plan.test_size = test_size.unwrap_or(plan.test_size);
            let dataset = dataset
                .or(config_dataset)
                .ok_or_else(|| FedglError::validation("--dataset or --config is required"))?;
            let master = load_master(&dataset, normalize)?;
            let (clients, registry) = partition::partition(&master, &plan)?;
            io::write_manifest(&out, &clients)?;
            println!(
                "{} clients, {} distinct nodes, {} node slots",
                clients.len(),
                registry.union_size(),
                registry.total_multiplicity()
            );
            Ok(())
        }
        Command::Train {
            config,
            mode,
            seed,
            dataset,
            manifest,
            out,
        } => {
            let mut config = read_config(&config)?;
            if let Some(mode) = mode {
                config.mode =
                    Mode::parse(&mode).ok_or_else(|| FedglError::validation(format!("unknown mode `{mode}`")))?;
            }
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            if let Some(dataset) = dataset {
                config.dataset = dataset;
            }
            config.validate()?;
            train(&config, manifest.as_deref(), &out)
        }
        Command::Evaluate {
            weights,
            dataset,
            manifest,
            split_seed,
            raw_features,
        } => {
            let weights = io::read_weights(&weights)?;
            let master = load_master(&dataset, !raw_features)?;
            let clients = match manifest {
                Some(path) => io::read_manifest(&path, &master)?,
                None => {
                    let mut g = master.clone();
                    make_splits(&master, SplitMode::Fixed, 500, 1000, split_seed)?.apply(&mut g);
                    vec![g]
                }
            };
            let global = GlobalView::new(&clients)?;
            let (val, test) = global.accuracies(&weights)?;
            println!("global_val_acc {}", io::format_float(val));
            println!("global_test_acc {}", io::format_float(test));
            for (k, g) in clients.iter().enumerate() {
                let adj = normalize_adjacency(&g.adjacency)?;
                let out = gcn::predict(adj.matrix(), &g.features, &weights)?;
                let acc = gcn::accuracy_by_index(&out.probabilities.view(), &g.labels, &g.test_mask)?;
                println!("client {k} local_test_acc {}", io::format_float(acc));
            }
            Ok(())
        }
        Command::ExportEmbeddings {
            weights,
            dataset,
            out,
            source,
            raw_features,
        } => {
            let weights = io::read_weights(&weights)?;
            let master = load_master(&dataset, !raw_features)?;
            let adj = normalize_adjacency(&master.adjacency)?;
            let output = gcn::predict(adj.matrix(), &master.features, &weights)?;
            let values = match EmbeddingSource::from(source) {
                EmbeddingSource::Output => output.embeddings,
                EmbeddingSource::Hidden => output.hidden,
            };
            io::export_embeddings(&out, &values.view(), &master.global_ids, &master.labels)
        }
        Command::Grid {
            config,
            param,
            values,
            seed,
            out,
        } => {
            let mut base = read_config(&config)?;
            if let Some(seed) = seed {
                base.seeds = vec![seed];
            }
            for value in grid_values(&values)? {
                let mut cell = base.clone();
                apply_setting(&mut cell, param.key(), &value).map_err(FedglError::Validation)?;
                cell.validate()?;
                let dir = out.join(format!("{}={value}", param.label()));
                train(&cell, None, &dir)?;
            }
            Ok(())
        }
    }
}

/// Loads a bundle, row-normalising features when asked.
pub fn load_master(dataset: &Path, normalize_features: bool) -> Result<Graph> {
    let mut graph = io::load_dataset(dataset)?.graph;
    if normalize_features {
        graph.row_normalize_features();
    }
    Ok(graph)
}

/// Expands `a..b`, `a..b:step` or `v1,v2,...` into value strings.
pub fn grid_values(spec: &str) -> Result<Vec<String>> {
    let bad = || FedglError::validation(format!("invalid value list `{spec}`"));
    let Some((start, rest)) = spec.split_once("..") else {
        return Ok(spec.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect());
    };
    let (end, step) = match rest.split_once(':') {
        Some((end, step)) => (end, step.trim().parse::<f64>().map_err(|_| bad())?),
        None => (rest, 0.1),
    };
    let start: f64 = start.trim().parse().map_err(|_| bad())?;
    let end: f64 = end.trim().parse().map_err(|_| bad())?;
    if !(step > 0.0) || end < start {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| {
            let v = ((start + i as f64 * step) * 1e9).round() / 1e9;
            v.to_string()
        })
        .collect())
}

fn train(config: &ExperimentConfig, manifest: Option<&Path>, out: &Path) -> Result<()> {
    let master = load_master(&config.dataset, config.normalize_features)?;
    let frozen = manifest.map(|m| io::read_manifest(m, &master)).transpose()?;
    fs::create_dir_all(out).map_err(|e| FedglError::io(out, e))?;
    fs::write(out.join("config.txt"), config_to_string(config)).map_err(|e| FedglError::io(out, e))?;
    let mut outcomes = Vec::new();
    for &seed in &config.seeds {
        let clients = match &frozen {
            Some(clients) => clients.clone(),
            None => partition::partition(&master, &config.plan_for(seed))?.0,
        };
        let outcome = orchestrator::run(config, &clients, seed)?;
        let dir = out.join(format!("seed_{seed}"));
        io::write_report(&dir, &outcome.report)?;
        io::write_weights(&dir.join("weights.txt"), &outcome.weights)?;
        eprintln!(
            "{} seed {seed}: {} rounds, best {}, global test {}, {:.1}s",
            config.mode.name(),
            outcome.report.rounds_executed,
            outcome.report.best_round,
            outcome.report.global_test_acc.map_or("n/a".into(), |a| format!("{a:.4}")),
            outcome.wall_time.as_secs_f64()
        );
        outcomes.push(outcome);
    }
    write_experiment_summary(&out.join(io::SUMMARY_FILE), config, &outcomes)
}

fn write_experiment_summary(path: &Path, config: &ExperimentConfig, outcomes: &[RunOutcome]) -> Result<()> {
    let n = outcomes.len() as f64;
    let global: Option<Vec<f64>> = outcomes.iter().map(|o| o.report.global_test_acc).collect();
    let local: f64 = outcomes
        .iter()
        .map(|o| {
            let accs = &o.report.per_client_local_test_acc;
            accs.iter().sum::<f64>() / accs.len() as f64
        })
        .sum::<f64>()
        / n;
    let seeds: Vec<String> = config.seeds.iter().map(u64::to_string).collect();
    let mut text = format!("{HEADER}\nmode {}\nseeds {}\n", config.mode.name(), seeds.join(" "));
    let _ = writeln!(
        text,
        "mean_global_test_acc {}",
        global.map_or("none".into(), |g| io::format_float(g.iter().sum::<f64>() / n))
    );
    let _ = writeln!(text, "mean_local_test_acc {}", io::format_float(local));
    fs::write(path, text).map_err(|e| FedglError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_value_ranges() {
        let v = grid_values("0.1..0.9").unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], "0.1");
        assert_eq!(v[2], "0.3");
        assert_eq!(v[8], "0.9");
        assert_eq!(grid_values("0..1").unwrap().len(), 11);
        assert_eq!(grid_values("5,10,30").unwrap(), vec!["5", "10", "30"]);
        assert_eq!(grid_values("0.05..0.15:0.05").unwrap(), vec!["0.05", "0.1", "0.15"]);
        assert!(grid_values("1..0").is_err());
    }

    #[test]
    fn unknown_subcommand_fails() {
        assert_ne!(run(["fedgl", "fly"]), 0);
        assert_ne!(run(["fedgl", "train", "--bogus"]), 0);
    }
}
