//! Experiment configuration files: `key = value` lines after the format
//! header, `#` starts a comment. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::client::EmbeddingSource;
use crate::error::{FedglError, Result};
use crate::io::{TextFile, HEADER};
use crate::orchestrator::{ExperimentConfig, Mode};
use crate::partition::SplitMode;

fn parse_list<T: FromStr>(value: &str) -> Option<Vec<T>> {
    value.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_source(value: &str) -> Option<EmbeddingSource> {
    match value {
        "output" => Some(EmbeddingSource::Output),
        "hidden" => Some(EmbeddingSource::Hidden),
        _ => None,
    }
}

fn source_name(source: EmbeddingSource) -> &'static str {
    match source {
        EmbeddingSource::Output => "output",
        EmbeddingSource::Hidden => "hidden",
    }
}

/// Applies one `key = value` setting. Used by config files and by the
/// command line's overrides and grid sweeps.
pub fn apply_setting(config: &mut ExperimentConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
        value.parse().map_err(|_| format!("invalid number `{value}`"))
    }
    match key {
        "mode" => config.mode = Mode::parse(value).ok_or_else(|| format!("unknown mode `{value}`"))?,
        "dataset" => config.dataset = value.into(),
        "proportions" => {
            config.plan.proportions = parse_list(value).ok_or_else(|| format!("invalid list `{value}`"))?
        }
        "overlap_ratio" => {
            config.plan.overlap_ratio = match value {
                "none" => None,
                v => Some(num(v)?),
            }
        }
        "split" => {
            config.plan.split_mode = match value {
                "fixed" => SplitMode::Fixed,
                "random" => SplitMode::Random { labels_per_class: 20 },
                _ => return Err(format!("unknown split `{value}`")),
            }
        }
        "labels_per_class" => match &mut config.plan.split_mode {
            SplitMode::Random { labels_per_class } => *labels_per_class = num(value)?,
            SplitMode::Fixed => return Err("labels_per_class requires `split = random` before it".into()),
        },
        "val_size" => config.plan.val_size = num(value)?,
        "test_size" => config.plan.test_size = num(value)?,
        "partition_seed" => {
            config.partition_seed = match value {
                "none" => None,
                v => Some(num(v)?),
            }
        }
        "seeds" => config.seeds = parse_list(value).ok_or_else(|| format!("invalid seed list `{value}`"))?,
        "lambda" => config.hyper.lambda = num(value)?,
        "alpha" => config.hyper.alpha = num(value)?,
        "beta" => config.hyper.beta = num(value)?,
        "s" => config.hyper.s = num(value)?,
        "dropout" => config.hyper.dropout = num(value)?,
        "learning_rate" => config.hyper.learning_rate = num(value)?,
        "weight_decay" => config.hyper.weight_decay = num(value)?,
        "hidden" => config.hyper.hidden = num(value)?,
        "local_epochs" => config.hyper.local_epochs = num(value)?,
        "max_rounds" => config.hyper.max_rounds = num(value)?,
        "patience" => config.hyper.patience = num(value)?,
        "participation_ratio" => config.hyper.participation_ratio = num(value)?,
        "fusion_renormalize" => {
            config.fusion_renormalize = parse_bool(value).ok_or_else(|| format!("invalid flag `{value}`"))?
        }
        "embedding_source" => {
            config.embedding_source = parse_source(value).ok_or_else(|| format!("unknown embedding source `{value}`"))?
        }
        "disable_pseudo_labels" => {
            config.disable_pseudo_labels = parse_bool(value).ok_or_else(|| format!("invalid flag `{value}`"))?
        }
        "disable_pseudo_graph" => {
            config.disable_pseudo_graph = parse_bool(value).ok_or_else(|| format!("invalid flag `{value}`"))?
        }
        "normalize_features" => {
            config.normalize_features = parse_bool(value).ok_or_else(|| format!("invalid flag `{value}`"))?
        }
        "decay_per_label" => {
            config.decay_per_label = parse_bool(value).ok_or_else(|| format!("invalid flag `{value}`"))?
        }
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

/// Parses config text. A relative `dataset` path is resolved against `base`.
pub fn parse_config(path: &Path, text: &str, base: &Path) -> Result<ExperimentConfig> {
    let file = TextFile::parse(path, text)?;
    let mut config = ExperimentConfig::new(Mode::Fedgl, "", vec![]);
    let mut seen = std::collections::BTreeSet::new();
    for (ln, line) in file.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| file.error(ln, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(file.error(ln, format!("duplicate key `{key}`")));
        }
        apply_setting(&mut config, key, value).map_err(|m| file.error(ln, m))?;
    }
    if !seen.contains("dataset") || !seen.contains("proportions") {
        return Err(file.error(0, "`dataset` and `proportions` are required"));
    }
    if config.dataset.is_relative() {
        config.dataset = base.join(&config.dataset);
    }
    config.validate()?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| FedglError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(path, &text, base)
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

/// Every setting of `config`, in a form [`parse_config`] reads back.
pub fn config_to_string(config: &ExperimentConfig) -> String {
    let h = &config.hyper;
    let mut out = format!("{HEADER}\n");
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("mode", config.mode.name().into());
    put("dataset", config.dataset.display().to_string());
    put("proportions", join(&config.plan.proportions));
    put("overlap_ratio", config.plan.overlap_ratio.map_or("none".into(), |r| r.to_string()));
    match config.plan.split_mode {
        SplitMode::Fixed => put("split", "fixed".into()),
        SplitMode::Random { labels_per_class } => {
            put("split", "random".into());
            put("labels_per_class", labels_per_class.to_string());
        }
    }
    put("val_size", config.plan.val_size.to_string());
    put("test_size", config.plan.test_size.to_string());
    put("partition_seed", config.partition_seed.map_or("none".into(), |s| s.to_string()));
    put("seeds", join(&config.seeds));
    put("lambda", h.lambda.to_string());
    put("alpha", h.alpha.to_string());
    put("beta", h.beta.to_string());
    put("s", h.s.to_string());
    put("dropout", h.dropout.to_string());
    put("learning_rate", h.learning_rate.to_string());
    put("weight_decay", h.weight_decay.to_string());
    put("hidden", h.hidden.to_string());
    put("local_epochs", h.local_epochs.to_string());
    put("max_rounds", h.max_rounds.to_string());
    put("patience", h.patience.to_string());
    put("participation_ratio", h.participation_ratio.to_string());
    put("fusion_renormalize", config.fusion_renormalize.to_string());
    put("embedding_source", source_name(config.embedding_source).into());
    put("disable_pseudo_labels", config.disable_pseudo_labels.to_string());
    put("disable_pseudo_graph", config.disable_pseudo_graph.to_string());
    put("normalize_features", config.normalize_features.to_string());
    put("decay_per_label", config.decay_per_label.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(Path::new("test.conf"), &format!("{HEADER}\n{text}"), Path::new("/base"))
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse("dataset = data/cora\nproportions = 0.3, 0.4\n").unwrap();
        assert_eq!(c.dataset, Path::new("/base/data/cora"));
        assert_eq!(c.plan.proportions, vec![0.3, 0.4]);
        assert_eq!(c.hyper.local_epochs, 10);
        assert_eq!(c.hyper.patience, 30);
        assert_eq!(c.mode, Mode::Fedgl);
    }

    #[test]
    fn comments_and_overrides() {
        let c = parse(
            "# toy\nmode = federated # baseline\ndataset = /abs\nproportions = 1\nlambda = 0.7\nsplit = random\nlabels_per_class = 5\nembedding_source = hidden\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Federated);
        assert_eq!(c.dataset, Path::new("/abs"));
        assert_eq!(c.hyper.lambda, 0.7);
        assert_eq!(c.plan.split_mode, SplitMode::Random { labels_per_class: 5 });
        assert_eq!(c.embedding_source, EmbeddingSource::Hidden);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let err = parse("dataset = x\nproportions = 1\nlamda = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `lamda`") && err.contains(":4"), "{err}");
        let err = parse("dataset = x\ndataset = y\nproportions = 1\n").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(parse("dataset = x\nproportions = 1\nmode = fedavg\n").is_err());
        assert!(parse("dataset = x\n").is_err());
        assert!(parse("dataset = x\nproportions = 1\nparticipation_ratio = 0\n").is_err());
    }

    #[test]
    fn written_config_reads_back() {
        let mut c = parse("dataset = /d\nproportions = 0.3, 0.4\nsplit = random\nlabels_per_class = 5\n").unwrap();
        c.partition_seed = Some(9);
        c.plan.overlap_ratio = Some(0.15);
        c.hyper.alpha = 0.1 + 0.2;
        c.disable_pseudo_graph = true;
        let text = config_to_string(&c);
        let back = parse_config(Path::new("x"), &text, Path::new("/other")).unwrap();
        assert_eq!(back, c);
    }
}
