//! Experiment description: flat `key = value` lines with dotted section
//! names. `#` starts a comment. Example:
//!
//! ```text
//! seed = 7
//! participants = 4
//! valset_fraction = 0.2
//! output_dir = results
//!
//! model.kind = logistic
//!
//! data.source = blobs
//! data.classes = 4
//! data.dim = 6
//! data.per_class = 150
//! data.separation = 3.0
//!
//! partition.kind = imbalanced
//! partition.major_classes = 0
//! partition.major_prob = 0.7
//!
//! train.rounds = 30
//! train.eta = 0.01
//!
//! strategies = fedavg, shapfed
//! strategy.shapfed.mu = 0.9
//! ```
//!
//! `train.*` keys set defaults for every strategy; `strategy.<name>.*` keys
//! override them. A strategy's kind defaults to its name when the name is a
//! known kind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{self, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::federation::{Behavior, Experiment, StrategyConfig, StrategyKind};
use crate::model::{ModelKind, ModelSpec};
use crate::rng::{self, stream};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelChoice {
    Logistic,
    Mlp { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedStrategy {
    pub name: String,
    pub config: StrategyConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub participants: usize,
    pub valset_fraction: f64,
    pub output_dir: PathBuf,
    pub model: ModelChoice,
    pub data: DataSource,
    pub partition: PartitionSpec,
    /// Participants that send Gaussian noise instead of training.
    pub byzantine: Vec<usize>,
    pub noise_std: f64,
    pub strategies: Vec<NamedStrategy>,
}

struct Entry {
    value: String,
    line: usize,
}

/// Raw key/value table that remembers which keys were read.
struct Table {
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::config_at(line, format!("expected 'key = value', found '{content}'"))
            })?;
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
            {
                return Err(Error::config_at(line, format!("invalid key '{key}'")));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(Error::config_at(
                    line,
                    format!("duplicate key '{key}' (first set on line {})", prev.line),
                ));
            }
        }
        Ok(Self {
            entries,
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, key: &str) -> Option<(&str, usize)> {
        let e = self.entries.get(key)?;
        self.used.insert(key.to_string());
        Some((e.value.as_str(), e.line))
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<(T, usize)>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(|x| Some((x, line)))
                .map_err(|_| Error::config_at(line, format!("cannot parse '{v}' for key '{key}'"))),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<(T, usize)> {
        self.get(key)?
            .ok_or_else(|| Error::config(format!("missing required key '{key}'")))
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<(T, Option<usize>)> {
        Ok(match self.get(key)? {
            Some((v, l)) => (v, Some(l)),
            None => (default, None),
        })
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<(Vec<T>, usize)>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        let v = v.to_string();
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::config_at(line, format!("cannot parse list item '{s}' in '{key}'")))
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Some((items, line)))
    }

    fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    fn reject_unused(&self) -> Result<()> {
        // Report the earliest stray line.
        let stray = self
            .entries
            .iter()
            .filter(|(k, _)| !self.used.contains(*k))
            .min_by_key(|(_, e)| e.line);
        match stray {
            Some((k, e)) => Err(Error::config_at(e.line, format!("unknown key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn at(line: Option<usize>, msg: impl Into<String>) -> Error {
    match line {
        Some(l) => Error::config_at(l, msg),
        None => Error::config(msg),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative paths are resolved against the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::parse(text)?;

        let (seed, _) = t.or("seed", 0u64)?;
        let (participants, pl) = t.require::<usize>("participants")?;
        if participants == 0 {
            return Err(Error::config_at(pl, "participants must be at least 1"));
        }
        let (valset_fraction, vl) = t.or("valset_fraction", 0.2f64)?;
        if !(valset_fraction > 0.0 && valset_fraction < 1.0) {
            return Err(at(vl, "valset_fraction must lie in (0, 1)"));
        }
        let (output_dir, _) = t.or("output_dir", "results".to_string())?;

        let model = match t.or("model.kind", "logistic".to_string())? {
            (k, _) if k == "logistic" => ModelChoice::Logistic,
            (k, _) if k == "mlp" => {
                let (hidden, hl) = t.or("model.hidden", 16usize)?;
                if hidden == 0 {
                    return Err(at(hl, "model.hidden must be at least 1"));
                }
                ModelChoice::Mlp { hidden }
            }
            (k, l) => return Err(at(l, format!("unknown model kind '{k}'"))),
        };

        let data = match t.or("data.source", "blobs".to_string())? {
            (s, _) if s == "blobs" => {
                let (classes, cl) = t.require::<usize>("data.classes")?;
                let (dim, dl) = t.or("data.dim", classes.max(2))?;
                let (per_class, ppl) = t.or("data.per_class", 100usize)?;
                let (separation, sl) = t.or("data.separation", 3.0f64)?;
                if classes < 2 {
                    return Err(Error::config_at(cl, "data.classes must be at least 2"));
                }
                if dim < 2 {
                    return Err(at(dl, "data.dim must be at least 2"));
                }
                if per_class == 0 {
                    return Err(at(ppl, "data.per_class must be at least 1"));
                }
                if !(separation > 0.0 && separation.is_finite()) {
                    return Err(at(sl, "data.separation must be positive"));
                }
                DataSource::Blobs {
                    classes,
                    dim,
                    per_class,
                    separation,
                }
            }
            (s, _) if s == "csv" => {
                let (path, _) = t.require::<String>("data.path")?;
                let (label_column, _) = t.or("data.label_column", "label".to_string())?;
                DataSource::Csv {
                    path: PathBuf::from(path),
                    label_column,
                }
            }
            (s, l) => return Err(at(l, format!("unknown data source '{s}'"))),
        };

        let partition = parse_partition(&mut t, participants)?;

        let (byzantine, bl) = match t.list::<usize>("byzantine.participants")? {
            Some((v, l)) => (v, Some(l)),
            None => (Vec::new(), None),
        };
        if let Some(&bad) = byzantine.iter().find(|&&i| i >= participants) {
            return Err(at(bl, format!("byzantine participant {bad} out of range")));
        }
        let (noise_std, nl) = t.or("byzantine.noise_std", 0.1f64)?;
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(at(nl, "byzantine.noise_std must be non-negative"));
        }

        let strategies = parse_strategies(&mut t)?;
        t.reject_unused()?;

        Ok(Self {
            seed,
            participants,
            valset_fraction,
            output_dir: PathBuf::from(output_dir),
            model,
            data,
            partition,
            byzantine,
            noise_std,
            strategies,
        })
    }

    /// Loads or generates the data set described by the config.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Blobs {
                classes,
                dim,
                per_class,
                separation,
            } => data::gen_blobs(*classes, *dim, *per_class, *separation, self.seed),
            DataSource::Csv { path, label_column } => data::load_csv(path, label_column),
        }
    }

    pub fn model_spec(&self, data: &Dataset) -> Result<ModelSpec> {
        let kind = match self.model {
            ModelChoice::Logistic => ModelKind::Logistic,
            ModelChoice::Mlp { hidden } => ModelKind::Mlp { hidden },
        };
        ModelSpec::new(kind, data.dim(), data.num_classes())
            .map_err(|e| Error::config(format!("data does not fit a classifier: {e}")))
    }

    /// Training pool and validation set; the latter is carved out per class
    /// before partitioning.
    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset)> {
        data::stratified_split(
            data,
            self.valset_fraction,
            rng::derive(self.seed, &[stream::SPLIT]),
        )
    }

    pub fn partition_seed(&self) -> u64 {
        rng::derive(self.seed, &[stream::PARTITION])
    }

    pub fn build_experiment(&self, workers: usize) -> Result<Experiment> {
        let data = self.load_dataset()?;
        let spec = self.model_spec(&data)?;
        let (train, valset) = self.split(&data)?;
        let shards = data::partition(&train, &self.partition, self.participants, self.partition_seed())?;
        let mut behaviors = vec![Behavior::Honest; self.participants];
        for &i in &self.byzantine {
            behaviors[i] = Behavior::GaussianNoise { std: self.noise_std };
        }
        let exp = Experiment {
            spec,
            shards,
            valset,
            behaviors,
            seed: self.seed,
            workers,
        };
        exp.validate()?;
        Ok(exp)
    }
}

fn parse_partition(t: &mut Table, n: usize) -> Result<PartitionSpec> {
    let (kind, kl) = t.or("partition.kind", "equal".to_string())?;
    Ok(match kind.as_str() {
        "equal" => PartitionSpec::Equal,
        "imbalanced" => {
            let major_classes = t
                .list::<usize>("partition.major_classes")?
                .map_or_else(|| vec![0], |(v, _)| v);
            let (major_prob, ml) = t.or("partition.major_prob", 0.7f64)?;
            if !(major_prob > 0.0 && major_prob < 1.0) {
                return Err(at(ml, "partition.major_prob must lie in (0, 1)"));
            }
            if n < 2 {
                return Err(at(kl, "imbalanced partitioning needs at least 2 participants"));
            }
            PartitionSpec::Imbalanced {
                major_classes,
                major_prob,
            }
        }
        "label_skew" => {
            let (exclusive_class, _) = t.or("partition.exclusive_class", 0usize)?;
            let (owner, ol) = t.or("partition.owner", 0usize)?;
            if owner >= n {
                return Err(at(ol, format!("partition.owner {owner} out of range")));
            }
            PartitionSpec::LabelSkewExclusive {
                exclusive_class,
                owner,
            }
        }
        "class_probability" => {
            // partition.class.<j> = fractions of class j over participants
            let mut columns: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for key in t.keys_with_prefix("partition.class.") {
                let (cols, line) = t.list::<f64>(&key)?.expect("key exists");
                let j: usize = key["partition.class.".len()..]
                    .parse()
                    .map_err(|_| Error::config_at(line, format!("bad class index in '{key}'")))?;
                if cols.len() != n {
                    return Err(Error::config_at(
                        line,
                        format!("'{key}' lists {} fractions for {n} participants", cols.len()),
                    ));
                }
                let total: f64 = cols.iter().sum();
                if (total - 1.0).abs() > 1e-9 || cols.iter().any(|&c| c < 0.0) {
                    return Err(Error::config_at(
                        line,
                        format!("fractions in '{key}' must be non-negative and sum to 1 (sum {total})"),
                    ));
                }
                columns.insert(j, cols);
            }
            let m = columns.len();
            if m == 0 || columns.keys().copied().ne(0..m) {
                return Err(at(
                    kl,
                    "class_probability needs partition.class.0 .. partition.class.<M-1>",
                ));
            }
            let probs = (0..n).map(|i| (0..m).map(|j| columns[&j][i]).collect()).collect();
            PartitionSpec::ClassProbabilityMatrix { probs }
        }
        other => return Err(at(kl, format!("unknown partition kind '{other}'"))),
    })
}

fn parse_strategies(t: &mut Table) -> Result<Vec<NamedStrategy>> {
    let (names, nl) = t
        .list::<String>("strategies")?
        .ok_or_else(|| Error::config("missing required key 'strategies'"))?;
    if names.is_empty() {
        return Err(Error::config_at(nl, "at least one strategy is required"));
    }
    let (mu, _) = t.or("train.mu", 0.9f64)?;
    let (eta, _) = t.or("train.eta", 0.01f64)?;
    let (local_epochs, _) = t.or("train.local_epochs", 1usize)?;
    let (batch_size, _) = t.or("train.batch_size", 32usize)?;
    let (rounds, _) = t.or("train.rounds", 50usize)?;

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for name in names {
        if !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::config_at(
                nl,
                format!("strategy name '{name}' may only use [A-Za-z0-9_-]"),
            ));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::config_at(nl, format!("strategy '{name}' listed twice")));
        }
        let key = |k: &str| format!("strategy.{name}.{k}");
        let kind = match t.get::<String>(&key("kind"))? {
            Some((k, l)) => StrategyKind::parse(&k)
                .ok_or_else(|| Error::config_at(l, format!("unknown strategy kind '{k}'")))?,
            None => StrategyKind::parse(&name).ok_or_else(|| {
                Error::config_at(
                    nl,
                    format!("strategy '{name}' needs a strategy.{name}.kind entry"),
                )
            })?,
        };
        let (mu, _) = t.or(&key("mu"), mu)?;
        let (eta, _) = t.or(&key("eta"), eta)?;
        let (local_epochs, _) = t.or(&key("local_epochs"), local_epochs)?;
        let (batch_size, _) = t.or(&key("batch_size"), batch_size)?;
        let (rounds, _) = t.or(&key("rounds"), rounds)?;
        let (force_uniform, _) = t.or(&key("force_uniform"), false)?;
        let config = StrategyConfig {
            kind,
            mu,
            eta,
            local_epochs,
            batch_size,
            rounds,
            force_uniform,
        };
        config.validate().map_err(|e| match e {
            Error::Config { message, .. } => Error::config_at(nl, format!("strategy '{name}': {message}")),
            other => other,
        })?;
        out.push(NamedStrategy { name, config });
    }
    for k in t.keys_with_prefix("strategy.") {
        let name = k["strategy.".len()..].split('.').next().unwrap_or("");
        if !seen.contains(name) {
            let line = t.entries[&k].line;
            return Err(Error::config_at(
                line,
                format!("'{k}' refers to strategy '{name}' not listed in 'strategies'"),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "participants = 2\ndata.classes = 2\nstrategies = fedavg\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.participants, 2);
        assert_eq!(c.partition, PartitionSpec::Equal);
        assert_eq!(c.strategies.len(), 1);
        let s = &c.strategies[0].config;
        assert_eq!(s.kind, StrategyKind::FedAvgUniform);
        assert_eq!((s.eta, s.mu, s.local_epochs, s.rounds), (0.01, 0.9, 1, 50));
    }

    #[test]
    fn overrides_and_partitions() {
        let text = "
            seed = 9
            participants = 5   # five sites
            model.kind = mlp
            model.hidden = 8
            data.classes = 2
            partition.kind = class_probability
            partition.class.0 = 0.4, 0.3, 0.2, 0.1, 0.0
            partition.class.1 = 0.0, 0.1, 0.2, 0.3, 0.4
            byzantine.participants = 4
            byzantine.noise_std = 0.5
            train.rounds = 7
            strategies = base, shapfed
            strategy.base.kind = fedavg_sized
            strategy.shapfed.mu = 0.5
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model, ModelChoice::Mlp { hidden: 8 });
        match &c.partition {
            PartitionSpec::ClassProbabilityMatrix { probs } => {
                assert_eq!(probs[0], vec![0.4, 0.0]);
                assert_eq!(probs[4], vec![0.0, 0.4]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.byzantine, vec![4]);
        assert_eq!(c.strategies[0].config.kind, StrategyKind::FedAvgSizeWeighted);
        assert_eq!(c.strategies[1].config.mu, 0.5);
        assert_eq!(c.strategies[1].config.rounds, 7);
    }

    fn err_line(text: &str) -> Option<usize> {
        match ExperimentConfig::parse(text).unwrap_err() {
            Error::Config { line, .. } => line,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_are_line_anchored() {
        assert_eq!(err_line(&format!("{MINIMAL}bogus.key = 1\n")), Some(4));
        assert_eq!(err_line("participants = two\n"), Some(1));
        assert_eq!(err_line("participants = 2\nparticipants = 3\n"), Some(2));
        assert_eq!(err_line("participants = 2\njust words\n"), Some(2));
        assert_eq!(err_line(&format!("{MINIMAL}valset_fraction = 1.5\n")), Some(4));
        assert_eq!(err_line(&format!("{MINIMAL}strategy.other.mu = 0.1\n")), Some(4));
        assert_eq!(
            err_line("participants = 2\ndata.classes = 2\nstrategies = mystery\n"),
            Some(3)
        );
        assert_eq!(err_line("data.classes = 2\nstrategies = fedavg\n"), None);
        assert_eq!(
            err_line("participants = 2\ndata.classes = 2\ntrain.mu = 1.0\nstrategies = shapfed\n"),
            Some(4)
        );
        assert_eq!(
            err_line("participants = 3\ndata.classes = 2\npartition.kind = class_probability\npartition.class.0 = 0.5,0.5\npartition.class.1 = 0.2,0.3,0.5\nstrategies = fedavg\n"),
            Some(4)
        );
    }

    #[test]
    fn builds_experiment_from_blobs() {
        let text = "participants = 3\ndata.classes = 3\ndata.per_class = 40\nbyzantine.participants = 1\nstrategies = shapfed\n";
        let c = ExperimentConfig::parse(text).unwrap();
        let exp = c.build_experiment(1).unwrap();
        assert_eq!(exp.shards.len(), 3);
        assert_eq!(exp.behaviors[1], Behavior::GaussianNoise { std: 0.1 });
        let total: usize = exp.shards.iter().map(Dataset::len).sum();
        assert_eq!(total + exp.valset.len(), 120);
    }
}
