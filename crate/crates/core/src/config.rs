//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every key has a default, so an
//! empty file is a valid configuration (synthetic data, `hcl` loss).
//! [`RunConfig::to_text`] emits every key in a fixed order, which is what run
//! directories store to make a run replayable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::SelectionRule;
use crate::data::{SynthConfig, DEFAULT_SPLIT_RATIOS};
use crate::error::{Error, Result};
use crate::losses::BaseLoss;
use crate::metrics::RankScope;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synth(SynthConfig),
    /// Directory holding `features.csv`, `labels.txt` and `hierarchy.txt`.
    Native(PathBuf),
    Arff(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: Option<String>,
    pub data: DataSource,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub normalize: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: None,
            data: DataSource::Synth(SynthConfig::default()),
            split_ratios: DEFAULT_SPLIT_RATIOS,
            split_seed: 0,
            normalize: true,
            train: TrainConfig::default(),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "name",
    "data.source",
    "data.path",
    "synth.levels",
    "synth.branching",
    "synth.examples_per_leaf",
    "synth.feature_dim",
    "synth.separation",
    "synth.noise",
    "synth.seed",
    "split.ratios",
    "split.seed",
    "normalize",
    "hidden_width",
    "hidden_layers",
    "dropout",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "optimizer",
    "loss",
    "base_loss",
    "focal_gamma",
    "scope",
    "decision_threshold",
    "selection",
    "thresh",
    "normalize_class_losses",
    "rank",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        // data.path may precede data.source; resolve after the loop.
        let mut source: Option<String> = None;
        let mut path: Option<PathBuf> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data.source" => source = Some(value.to_string()),
                "data.path" => path = Some(PathBuf::from(value)),
                _ => cfg.set(key, value)?,
            }
        }
        if let Some(s) = source {
            cfg.set_source(&s, path)?;
        } else if let Some(p) = path {
            cfg.set_source("native", Some(p))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::data(path, e.to_string()))?;
        // Relative dataset paths are resolved against the config's directory.
        if let Some(dir) = path.parent() {
            match &mut cfg.data {
                DataSource::Native(p) | DataSource::Arff(p) if p.is_relative() => {
                    *p = dir.join(&*p);
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    fn set_source(&mut self, source: &str, path: Option<PathBuf>) -> Result<()> {
        let need_path = |p: Option<PathBuf>| {
            p.ok_or_else(|| {
                Error::InvalidArgument(format!("data.source = {source} needs data.path"))
            })
        };
        self.data = match source {
            "synth" => match &self.data {
                DataSource::Synth(s) => DataSource::Synth(s.clone()),
                _ => DataSource::Synth(SynthConfig::default()),
            },
            "native" => DataSource::Native(need_path(path)?),
            "arff" => DataSource::Arff(need_path(path)?),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown data.source `{other}` (expected synth, native or arff)"
                )))
            }
        };
        Ok(())
    }

    fn synth_mut(&mut self) -> &mut SynthConfig {
        if !matches!(self.data, DataSource::Synth(_)) {
            self.data = DataSource::Synth(SynthConfig::default());
        }
        match &mut self.data {
            DataSource::Synth(s) => s,
            _ => unreachable!(),
        }
    }

    /// Applies one setting; used for file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "name" => self.name = Some(value.to_string()),
            "data.source" => self.set_source(value, self.data_path())?,
            "data.path" => {
                let p = PathBuf::from(value);
                match &mut self.data {
                    DataSource::Native(old) | DataSource::Arff(old) => *old = p,
                    DataSource::Synth(_) => self.data = DataSource::Native(p),
                }
            }
            "synth.levels" => self.synth_mut().levels = parse_num(key, value)?,
            "synth.branching" => self.synth_mut().branching = parse_num(key, value)?,
            "synth.examples_per_leaf" => {
                self.synth_mut().examples_per_leaf = parse_num(key, value)?
            }
            "synth.feature_dim" => self.synth_mut().feature_dim = parse_num(key, value)?,
            "synth.separation" => self.synth_mut().cluster_separation = parse_num(key, value)?,
            "synth.noise" => self.synth_mut().label_noise = parse_num(key, value)?,
            "synth.seed" => self.synth_mut().seed = parse_num(key, value)?,
            "split.ratios" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse_num(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.split_ratios = parts.try_into().map_err(|_| {
                    Error::InvalidArgument(format!("`{key}`: expected three ratios"))
                })?;
            }
            "split.seed" => self.split_seed = parse_num(key, value)?,
            "normalize" => self.normalize = parse_bool(key, value)?,
            "hidden_width" => t.hidden_width = parse_num(key, value)?,
            "hidden_layers" => t.hidden_layers = parse_num(key, value)?,
            "dropout" => t.dropout_rate = parse_num(key, value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "optimizer" => t.optimizer = value.parse()?,
            "loss" => t.loss_mode = value.parse()?,
            "base_loss" => {
                t.base_loss = match value {
                    "bce" => BaseLoss::Bce,
                    "focal" => BaseLoss::Focal {
                        gamma: t.focal_gamma,
                    },
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown base_loss `{other}` (expected bce or focal)"
                        )))
                    }
                }
            }
            "focal_gamma" => {
                t.focal_gamma = parse_num(key, value)?;
                if let BaseLoss::Focal { gamma } = &mut t.base_loss {
                    *gamma = t.focal_gamma;
                }
            }
            "scope" => t.transform_scope = value.parse()?,
            "decision_threshold" => t.decision_threshold = parse_num(key, value)?,
            "selection" => {
                t.selection_rule = match value {
                    "optimal-prefix" => SelectionRule::OptimalPrefix,
                    "paper-threshold" => SelectionRule::PaperThreshold {
                        thresh: match t.selection_rule {
                            SelectionRule::PaperThreshold { thresh } => thresh,
                            _ => None,
                        },
                    },
                    other => return Err(Error::InvalidArgument(format!(
                        "unknown selection `{other}` (expected optimal-prefix or paper-threshold)"
                    ))),
                }
            }
            "thresh" => {
                let v: f64 = parse_num(key, value)?;
                t.selection_rule = SelectionRule::PaperThreshold { thresh: Some(v) };
            }
            "normalize_class_losses" => t.normalize_class_losses = parse_bool(key, value)?,
            "rank" => {
                t.rank_scope = match value {
                    "all" => RankScope::AllClasses,
                    "leaves" => RankScope::LeavesOnly,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown rank `{other}` (expected all or leaves)"
                        )))
                    }
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key `{other}`; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn data_path(&self) -> Option<PathBuf> {
        match &self.data {
            DataSource::Native(p) | DataSource::Arff(p) => Some(p.clone()),
            DataSource::Synth(_) => None,
        }
    }

    /// Parses `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("override `{o}` is not key=value"))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.data {
            DataSource::Synth(_) => "synthetic".into(),
            DataSource::Native(p) | DataSource::Arff(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
        }
    }

    /// Fully resolved configuration; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
        if let Some(n) = &self.name {
            put("name", n.clone());
        }
        match &self.data {
            DataSource::Synth(s) => {
                put("data.source", "synth".into());
                put("synth.levels", s.levels.to_string());
                put("synth.branching", s.branching.to_string());
                put("synth.examples_per_leaf", s.examples_per_leaf.to_string());
                put("synth.feature_dim", s.feature_dim.to_string());
                put("synth.separation", format!("{:?}", s.cluster_separation));
                put("synth.noise", format!("{:?}", s.label_noise));
                put("synth.seed", s.seed.to_string());
            }
            DataSource::Native(p) => {
                put("data.source", "native".into());
                put("data.path", p.display().to_string());
            }
            DataSource::Arff(p) => {
                put("data.source", "arff".into());
                put("data.path", p.display().to_string());
            }
        }
        let r = self.split_ratios;
        put("split.ratios", format!("{:?},{:?},{:?}", r[0], r[1], r[2]));
        put("split.seed", self.split_seed.to_string());
        put("normalize", self.normalize.to_string());
        put("hidden_width", t.hidden_width.to_string());
        put("hidden_layers", t.hidden_layers.to_string());
        put("dropout", format!("{:?}", t.dropout_rate));
        put("learning_rate", format!("{:?}", t.learning_rate));
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("seed", t.seed.to_string());
        put("optimizer", t.optimizer.to_string());
        put("loss", t.loss_mode.to_string());
        put("focal_gamma", format!("{:?}", t.focal_gamma));
        put(
            "base_loss",
            match t.base_loss {
                BaseLoss::Bce => "bce".into(),
                BaseLoss::Focal { .. } => "focal".into(),
            },
        );
        put("scope", t.transform_scope.to_string());
        put("decision_threshold", format!("{:?}", t.decision_threshold));
        match t.selection_rule {
            SelectionRule::OptimalPrefix => put("selection", "optimal-prefix".into()),
            SelectionRule::PaperThreshold { thresh } => {
                put("selection", "paper-threshold".into());
                if let Some(v) = thresh {
                    put("thresh", format!("{v:?}"));
                }
            }
        }
        put(
            "normalize_class_losses",
            t.normalize_class_losses.to_string(),
        );
        put(
            "rank",
            match t.rank_scope {
                RankScope::AllClasses => "all".into(),
                RankScope::LeavesOnly => "leaves".into(),
            },
        );
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
