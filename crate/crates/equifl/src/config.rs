//! Experiment configuration: one TOML file of record plus CLI overrides.

use std::path::{Path, PathBuf};

use equifl_core::rng::{self, derive_seed};
use equifl_core::{Activation, AdamConfig, FedConfig, Mode, NetConfig, PartitionSpec, PenaltyKind};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV path; relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: DatasetSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub num_clients: usize,
    /// Per-client Dirichlet concentrations. When absent every client gets
    /// `alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub min_client_records: usize,
    /// Fixed partition seed shared by every run; by default each run seed
    /// draws its own partition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_alpha() -> f64 {
    1.0
}

impl PartitionConfig {
    pub fn alphas(&self) -> Vec<f64> {
        self.alphas
            .clone()
            .unwrap_or_else(|| vec![self.alpha; self.num_clients])
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("partition.num_clients must be at least 1".into()));
        }
        if let Some(a) = &self.alphas {
            if a.len() != self.num_clients {
                return Err(Error::Config(format!(
                    "partition.alphas has {} entries but num_clients is {}",
                    a.len(),
                    self.num_clients
                )));
            }
        }
        PartitionSpec::new(self.alphas(), 0).validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            hidden: default_hidden(),
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub mu: f64,
    pub penalty: PenaltyKind,
    pub participation: f64,
    pub mode: Mode,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub reset_optimizer: bool,
    pub evaluate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let f = FedConfig::default();
        TrainConfig {
            rounds: f.num_rounds,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            mu: f.mu,
            penalty: f.penalty,
            participation: f.participation,
            mode: f.mode,
            learning_rate: f.optimizer.learning_rate,
            beta1: f.optimizer.beta1,
            beta2: f.optimizer.beta2,
            epsilon: f.optimizer.epsilon,
            reset_optimizer: f.reset_optimizer,
            evaluate_every: f.evaluate_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub mu: Option<f64>,
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub evaluate_every: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `path`, making relative data and output paths relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(d) = &o.out_dir {
            self.output_dir = d.clone();
        }
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
        if let Some(mu) = o.mu {
            self.train.mu = mu;
        }
        if let Some(n) = o.clients {
            self.set_num_clients(n);
        }
        if let Some(r) = o.rounds {
            self.train.rounds = r;
        }
        if let Some(e) = o.evaluate_every {
            self.train.evaluate_every = e;
        }
    }

    /// Changes the client count. Explicit alphas of another length are
    /// replaced by the symmetric `partition.alpha`.
    pub fn set_num_clients(&mut self, n: usize) {
        if self.partition.alphas.as_ref().is_some_and(|a| a.len() != n) {
            log::info!(
                "{n} clients requested; using symmetric alpha {} instead of the configured alphas",
                self.partition.alpha
            );
            self.partition.alphas = None;
        }
        self.partition.num_clients = n;
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate_static(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.data.schema.validate()?;
        self.partition.validate()?;
        if self.net.hidden.contains(&0) {
            return Err(Error::Config("net.hidden sizes must be positive".into()));
        }
        self.fed_config(0).validate()?;
        Ok(())
    }

    /// Full validation, including that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.validate_static()?;
        if !self.data.path.is_file() {
            return Err(Error::Config(format!(
                "data file {} does not exist",
                self.data.path.display()
            )));
        }
        Ok(())
    }

    pub fn fed_config(&self, seed: u64) -> FedConfig {
        let t = &self.train;
        FedConfig {
            num_rounds: t.rounds,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            mu: t.mu,
            penalty: t.penalty,
            participation: t.participation,
            mode: t.mode,
            optimizer: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            reset_optimizer: t.reset_optimizer,
            seed,
            evaluate_every: t.evaluate_every,
        }
    }

    pub fn net_config(&self, input_dim: usize, seed: u64) -> NetConfig {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend(&self.net.hidden);
        layer_dims.push(1);
        NetConfig {
            layer_dims,
            hidden_activation: self.net.activation,
            seed,
        }
    }

    pub fn partition_seed(&self, run_seed: u64) -> u64 {
        self.partition.seed.unwrap_or(run_seed)
    }

    pub fn partition_spec(&self, run_seed: u64) -> PartitionSpec {
        PartitionSpec {
            client_alphas: self.partition.alphas(),
            seed: self.partition_seed(run_seed),
            min_client_records: self.partition.min_client_records,
        }
    }

    pub fn split_seed(&self, run_seed: u64) -> u64 {
        derive_seed(run_seed, &[rng::tag::SPLIT])
    }
}
