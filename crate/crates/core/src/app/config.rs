//! Flat TOML run configuration. Resolution order: built-in defaults, then
//! the config file, then `RESNLS_<KEY>` environment variables, then
//! command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{ExecutionPrice, StrategyConfig};
use crate::error::{Error, Result};
use crate::models::{Architecture, ModelSpec};
use crate::series::DateRange;
use crate::synthetic;
use crate::training::TrainConfig;

pub const ENV_PREFIX: &str = "RESNLS_";

/// Label used when no data files are configured and the built-in synthetic
/// series stands in.
pub const SYNTHETIC_INSTRUMENT: &str = "SYNTH";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Seeds both parameter init and batch shuffling.
    pub seed: u64,

    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,

    pub arch: Architecture,
    pub window_n: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub lstm_hidden: usize,
    pub dropout_keep: f64,
    pub bn_after_each_conv: bool,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub threshold: f64,
    pub initial_cash: f64,
    pub execution_price: ExecutionPrice,

    pub sweep_windows: Vec<usize>,

    /// Instrument label → `date,open,high,low,close` file. Empty means the
    /// built-in synthetic series.
    pub data: BTreeMap<String, PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (train, test) = synthetic::default_ranges();
        let spec = ModelSpec::default();
        let tc = TrainConfig::default();
        let sc = StrategyConfig::default();
        Self {
            out_dir: PathBuf::from("runs"),
            seed: 0,
            train_start: train.start,
            train_end: train.end,
            test_start: test.start,
            test_end: test.end,
            arch: spec.architecture,
            window_n: spec.window_n,
            conv_filters: spec.conv_filters,
            kernel_size: spec.kernel_size,
            lstm_hidden: spec.lstm_hidden,
            dropout_keep: spec.dropout_keep,
            bn_after_each_conv: spec.bn_after_each_conv,
            learning_rate: tc.learning_rate,
            batch_size: tc.batch_size,
            epochs: tc.epochs,
            weight_decay: tc.weight_decay,
            adam_beta1: tc.adam_beta1,
            adam_beta2: tc.adam_beta2,
            adam_eps: tc.adam_eps,
            threshold: sc.threshold,
            initial_cash: sc.initial_cash,
            execution_price: sc.execution_price,
            sweep_windows: vec![3, 5, 10, 20, 40, 60],
            data: BTreeMap::new(),
        }
    }
}

/// Parses a single override value the way it would appear on the right of
/// `key = ` in the file; bare words fall back to strings.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn to_table(cfg: &RunConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("config serializes")
}

fn from_table(table: toml::Table) -> Result<RunConfig> {
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))
}

impl RunConfig {
    pub fn keys() -> Vec<String> {
        to_table(&Self::default()).keys().cloned().collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; keys are the file's key names.
    pub fn with_overrides<'a>(self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let known = Self::keys();
        let mut table = to_table(&self);
        for (key, raw) in pairs {
            if !known.iter().any(|k| k == key) {
                return Err(Error::config(key, "unknown key"));
            }
            table.insert(key.to_string(), parse_value(raw));
            from_table(table.clone()).map_err(|e| match e {
                Error::Config { reason, .. } => Error::config(key, reason),
                other => other,
            })?;
        }
        from_table(table)
    }

    /// Applies every `RESNLS_<KEY>` variable found by `lookup`.
    pub fn with_env(self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let found: Vec<(String, String)> = Self::keys()
            .into_iter()
            .filter_map(|k| lookup(&format!("{ENV_PREFIX}{}", k.to_uppercase())).map(|v| (k, v)))
            .collect();
        self.with_overrides(found.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn train_range(&self) -> Result<DateRange> {
        DateRange::new(self.train_start, self.train_end)
    }

    pub fn test_range(&self) -> Result<DateRange> {
        DateRange::new(self.test_start, self.test_end)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            architecture: self.arch,
            window_n: self.window_n,
            conv_filters: self.conv_filters,
            kernel_size: self.kernel_size,
            lstm_hidden: self.lstm_hidden,
            dropout_keep: self.dropout_keep,
            bn_after_each_conv: self.bn_after_each_conv,
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            shuffle_seed: self.seed,
        }
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            threshold: self.threshold,
            initial_cash: self.initial_cash,
            execution_price: self.execution_price,
        }
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        let (train, test) = (self.train_range()?, self.test_range()?);
        if train.end >= test.start {
            return Err(Error::config(
                "test_start",
                format!("train {train} must end before test {test} begins"),
            ));
        }
        for (name, path) in &self.data {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(Error::config("data", format!("bad instrument label `{name}`")));
            }
            if !path.is_file() {
                return Err(Error::config("data", format!("{name}: no such file {}", path.display())));
            }
        }
        self.model_spec().validate()?;
        self.train_config().validate()?;
        self.strategy_config().validate()?;
        if self.sweep_windows.is_empty() || self.sweep_windows.contains(&0) {
            return Err(Error::config("sweep_windows", "needs at least one positive window length"));
        }
        Ok(())
    }
}
