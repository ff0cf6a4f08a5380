//! Seeded runs, sweeps and the rayon client executor.

use std::str::FromStr;

use equifl_core::data::{Partition, SplitRows};
use equifl_core::{
    build_clients, run_experiment, ClientExecutor, ClientState, ExperimentOutcome, MetricsReport, Record,
};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{load_csv, preprocess, Encoder, RawTable};
use crate::error::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EQUIFL_THREADS";

/// Trains roster clients on a dedicated rayon pool.
#[derive(Debug)]
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("equifl-worker-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    /// Sized by `EQUIFL_THREADS`, else by the machine.
    pub fn from_env() -> Result<Self> {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))
            })?,
            Err(_) => 0,
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ClientExecutor for RayonExecutor {
    fn map(
        &self,
        jobs: &[&ClientState],
        work: &(dyn Fn(&ClientState) -> equifl_core::Result<ClientState> + Sync),
    ) -> Vec<equifl_core::Result<ClientState>> {
        // collect() on an indexed parallel iterator keeps job order.
        self.pool.install(|| jobs.par_iter().map(|c| work(c)).collect())
    }
}

/// The encoded dataset shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub table: RawTable,
    pub records: Vec<Record>,
    pub encoder: Encoder,
}

impl PreparedData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let table = load_csv(&cfg.data.path, &cfg.data.schema)?;
        let (records, encoder) = preprocess(&table, &cfg.data.schema)?;
        info!(
            "{}: {} rows ({} dropped), {} features",
            table.path.display(),
            records.len(),
            table.dropped,
            encoder.dim()
        );
        Ok(PreparedData {
            table,
            records,
            encoder,
        })
    }

    /// File row of each record index.
    pub fn source_rows(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&i| self.table.rows[i].source_row).collect()
    }
}

/// Everything one seeded run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    /// The config with `seeds` narrowed to this run's seed.
    pub config: ExperimentConfig,
    pub partition: Partition,
    pub splits: Vec<SplitRows>,
    pub outcome: ExperimentOutcome,
}

impl RunOutput {
    pub fn final_report(&self) -> &MetricsReport {
        self.outcome
            .history
            .last()
            .expect("run_experiment always records the final round")
    }
}

/// Config narrowed to a single seed.
pub fn for_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.seeds = vec![seed];
    c
}

/// Partitions, splits and builds client datasets for `seed`.
pub fn prepare_clients(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<(Vec<equifl_core::ClientDataset>, Partition)> {
    let spec = cfg.partition_spec(seed);
    let (clients, partition) = build_clients(&data.records, &spec, cfg.split_seed(seed))?;
    for w in &partition.warnings {
        log::warn!("seed {seed}: {w}");
    }
    Ok((clients, partition))
}

pub fn run_seed<E: ClientExecutor + ?Sized>(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
    exec: &E,
) -> Result<RunOutput> {
    let (clients, partition) = prepare_clients(cfg, data, seed)?;
    let splits = clients.iter().map(|c| c.rows.clone()).collect();
    let net = cfg.net_config(data.encoder.dim(), seed);
    let fed = cfg.fed_config(seed);
    let outcome = run_experiment(&fed, &net, clients, exec)?;
    Ok(RunOutput {
        seed,
        config: for_seed(cfg, seed),
        partition,
        splits,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Mu,
    NumClients,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Mu => "mu",
            SweepParam::NumClients => "num_clients",
        }
    }

    /// Checks `value` and writes it into `cfg`.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Mu => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::Config(format!(
                        "mu must be finite and non-negative, got {value}"
                    )));
                }
                cfg.train.mu = value;
            }
            SweepParam::NumClients => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::Config(format!(
                        "num_clients must be a positive integer, got {value}"
                    )));
                }
                cfg.set_num_clients(value as usize);
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepParam::Mu),
            "num_clients" => Ok(SweepParam::NumClients),
            other => Err(Error::Config(format!(
                "unknown sweep parameter `{other}` (expected `mu` or `num_clients`)"
            ))),
        }
    }
}

/// Parses a comma-separated list of numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("sweep value `{}` is not a number", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Config("no sweep values given".into()));
    }
    Ok(values)
}

/// Median and spread of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

impl SeedSummary {
    pub fn of(values: &[f64]) -> SeedSummary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        SeedSummary {
            median: median(values),
            mean,
            std: var.sqrt(),
        }
    }
}

/// Middle value, or the mean of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Final-round metrics of every seed for one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    pub seeds: Vec<u64>,
    /// Local (per-client averaged) metrics.
    pub accuracy: SeedSummary,
    pub delta_dp: SeedSummary,
    pub delta_eo: SeedSummary,
    /// Aggregated model on the pooled test data.
    pub global_accuracy: SeedSummary,
    pub global_delta_dp: SeedSummary,
    pub global_delta_eo: SeedSummary,
    /// Cross-client standard deviation of accuracy and ΔDP.
    pub client_accuracy_std: SeedSummary,
    pub client_delta_dp_std: SeedSummary,
    pub finals: Vec<MetricsReport>,
}

impl SweepRow {
    pub fn from_finals(
        parameter: SweepParam,
        value: f64,
        seeds: Vec<u64>,
        finals: Vec<MetricsReport>,
    ) -> Self {
        let pick =
            |f: &dyn Fn(&MetricsReport) -> f64| SeedSummary::of(&finals.iter().map(f).collect::<Vec<_>>());
        SweepRow {
            parameter,
            value,
            seeds,
            accuracy: pick(&|r| r.local.accuracy),
            delta_dp: pick(&|r| r.local.delta_dp),
            delta_eo: pick(&|r| r.local.delta_eo),
            global_accuracy: pick(&|r| r.global.accuracy),
            global_delta_dp: pick(&|r| r.global.delta_dp),
            global_delta_eo: pick(&|r| r.global.delta_eo),
            client_accuracy_std: pick(&|r| r.stats.accuracy.std),
            client_delta_dp_std: pick(&|r| r.stats.delta_dp.std),
            finals,
        }
    }
}

/// The per-value configs of a sweep, all validated before anything runs.
pub fn sweep_configs(
    param: SweepParam,
    values: &[f64],
    base: &ExperimentConfig,
) -> Result<Vec<ExperimentConfig>> {
    if values.is_empty() {
        return Err(Error::Config("no sweep values given".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            param.apply(&mut cfg, v)?;
            cfg.validate_static()?;
            Ok(cfg)
        })
        .collect()
}

/// One full run per value per seed. `on_run` sees every finished run.
pub fn sweep<E: ClientExecutor + ?Sized>(
    param: SweepParam,
    values: &[f64],
    base: &ExperimentConfig,
    data: &PreparedData,
    exec: &E,
    on_run: &mut dyn FnMut(f64, &RunOutput),
) -> Result<Vec<SweepRow>> {
    let configs = sweep_configs(param, values, base)?;
    let total = values.len() * base.seeds.len();
    let mut done = 0;
    let mut rows = Vec::with_capacity(values.len());
    for (cfg, &value) in configs.iter().zip(values) {
        let mut finals = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let out = run_seed(cfg, data, seed, exec)?;
            done += 1;
            let f = out.final_report();
            info!(
                "[{done}/{total}] {param}={value} seed={seed}: accuracy {:.4}, ΔDP {:.4}, ΔEO {:.4}",
                f.local.accuracy, f.local.delta_dp, f.local.delta_eo
            );
            finals.push(f.clone());
            on_run(value, &out);
        }
        rows.push(SweepRow::from_finals(param, value, cfg.seeds.clone(), finals));
    }
    Ok(rows)
}
