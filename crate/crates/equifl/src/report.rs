//! Run reports (JSON and per-client CSV) and sweep tables.

use std::path::Path;

use equifl_core::{eval::DECISION_THRESHOLD, MetricsReport, Mode};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{RunOutput, SweepRow};

pub const REPORT_FORMAT: &str = "equifl-report";

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Measurement conventions stated in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub decision_threshold: f64,
    pub std: String,
    pub local_average: String,
    pub delta_dp: String,
    pub delta_eo: String,
    pub deployed_model: String,
    pub global: String,
    pub global_personalized: String,
    pub architecture: String,
}

impl Conventions {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Conventions {
            decision_threshold: DECISION_THRESHOLD,
            std: "population (divides by the number of clients)".into(),
            local_average: "unweighted mean over clients with a nonempty test split".into(),
            delta_dp: "max pairwise gap in positive-prediction rate across sensitive groups".into(),
            delta_eo: "max pairwise gap in true-positive rate across groups with at least one positive".into(),
            deployed_model: "equifl: the client's own parameters; fedavg: the aggregated model".into(),
            global: "aggregated model applied as-is to the pooled client test splits".into(),
            global_personalized: "each client's deployed model on its own test split, pooled".into(),
            architecture: format!(
                "hidden layers {:?} ({:?}), sigmoid head; sizes, activation and optimizer settings are defaults chosen by this tool",
                cfg.net.hidden, cfg.net.activation
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: String,
    /// `baseline` for fedavg without penalty, else the mode name.
    pub label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub conventions: Conventions,
    pub rows_used: usize,
    pub rows_dropped: usize,
    pub features: Vec<String>,
    pub partition_attempts: usize,
    pub partition_warnings: Vec<String>,
    pub history: Vec<MetricsReport>,
}

pub fn run_label(mode: Mode, mu: f64) -> &'static str {
    match mode {
        Mode::FedAvg if mu == 0.0 => "baseline",
        Mode::FedAvg => "fedavg",
        Mode::EquiFl => "equifl",
    }
}

impl RunReport {
    pub fn new(run: &RunOutput, data: &crate::experiment::PreparedData) -> Self {
        let cfg = &run.config;
        RunReport {
            format: REPORT_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            label: run_label(cfg.train.mode, cfg.train.mu).into(),
            seed: run.seed,
            config: cfg.clone(),
            conventions: Conventions::new(cfg),
            rows_used: data.records.len(),
            rows_dropped: data.table.dropped,
            features: data.encoder.feature_names(),
            partition_attempts: run.partition.attempts,
            partition_warnings: run.partition.warnings.clone(),
            history: run.outcome.history.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// `# ` line carrying the seed and the resolved config as compact JSON.
pub fn provenance_line(what: &str, seed: Option<u64>, cfg: &ExperimentConfig) -> String {
    let config = serde_json::to_string(cfg).expect("config serializes");
    match seed {
        Some(s) => format!(
            "# equifl {} {what} seed={s} config={config}\n",
            env!("CARGO_PKG_VERSION")
        ),
        None => format!("# equifl {} {what} config={config}\n", env!("CARGO_PKG_VERSION")),
    }
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).expect("writing to memory");
        fill(&mut w).expect("writing to memory");
        w.flush().expect("writing to memory");
    }
    buf
}

/// One row per client per evaluated round.
pub fn metrics_csv(seed: u64, cfg: &ExperimentConfig, history: &[MetricsReport]) -> Vec<u8> {
    let mut out = provenance_line("metrics", Some(seed), cfg).into_bytes();
    let body = csv_bytes(
        &[
            "round",
            "mode",
            "mu",
            "client",
            "test_size",
            "accuracy",
            "delta_dp",
            "delta_eo",
        ],
        |w| {
            for r in history {
                for c in &r.local.clients {
                    w.write_record([
                        r.round.to_string(),
                        r.mode.to_string(),
                        r.mu.to_string(),
                        c.client.to_string(),
                        c.test_size.to_string(),
                        c.accuracy.to_string(),
                        c.delta_dp.to_string(),
                        c.delta_eo.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    );
    out.extend(body);
    out
}

pub const SWEEP_COLUMNS: [&str; 22] = [
    "parameter",
    "value",
    "seeds",
    "accuracy",
    "delta_dp",
    "delta_eo",
    "accuracy_mean",
    "accuracy_std",
    "delta_dp_mean",
    "delta_dp_std",
    "delta_eo_mean",
    "delta_eo_std",
    "global_accuracy",
    "global_delta_dp",
    "global_delta_eo",
    "global_accuracy_mean",
    "global_accuracy_std",
    "global_delta_dp_mean",
    "global_delta_dp_std",
    "client_accuracy_std",
    "client_delta_dp_std",
    "mode",
];

/// Medians over seeds in the unsuffixed columns.
pub fn sweep_csv(base: &ExperimentConfig, rows: &[SweepRow]) -> Vec<u8> {
    let mut out = provenance_line("sweep", None, base).into_bytes();
    let body = csv_bytes(&SWEEP_COLUMNS, |w| {
        for r in rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            let mode = r.finals.first().map_or(base.train.mode, |f| f.mode);
            w.write_record([
                r.parameter.to_string(),
                r.value.to_string(),
                seeds.join(" "),
                r.accuracy.median.to_string(),
                r.delta_dp.median.to_string(),
                r.delta_eo.median.to_string(),
                r.accuracy.mean.to_string(),
                r.accuracy.std.to_string(),
                r.delta_dp.mean.to_string(),
                r.delta_dp.std.to_string(),
                r.delta_eo.mean.to_string(),
                r.delta_eo.std.to_string(),
                r.global_accuracy.median.to_string(),
                r.global_delta_dp.median.to_string(),
                r.global_delta_eo.median.to_string(),
                r.global_accuracy.mean.to_string(),
                r.global_accuracy.std.to_string(),
                r.global_delta_dp.mean.to_string(),
                r.global_delta_dp.std.to_string(),
                r.client_accuracy_std.median.to_string(),
                r.client_delta_dp_std.median.to_string(),
                mode.to_string(),
            ])?;
        }
        Ok(())
    });
    out.extend(body);
    out
}

/// Files written for one run, under `dir`.
pub fn write_run(dir: &Path, run: &RunOutput, data: &crate::experiment::PreparedData) -> Result<()> {
    let report = RunReport::new(run, data);
    write_file(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_file(
        &dir.join("metrics.csv"),
        &metrics_csv(run.seed, &run.config, &run.outcome.history),
    )?;
    let manifest =
        crate::manifest::PartitionManifest::build(&run.config, run.seed, data, &run.partition, &run.splits);
    manifest.write(&dir.join("partition.json"))?;
    crate::checkpoint::from_run(run, &data.encoder).write(dir)?;
    Ok(())
}

/// Human-readable one-liner for a final report.
pub fn summary_line(r: &MetricsReport) -> String {
    format!(
        "round {} {} mu={}: local acc {:.4} ΔDP {:.4} ΔEO {:.4} | global acc {:.4} ΔDP {:.4} ΔEO {:.4} | client acc std {:.4}",
        r.round,
        r.mode,
        r.mu,
        r.local.accuracy,
        r.local.delta_dp,
        r.local.delta_eo,
        r.global.accuracy,
        r.global.delta_dp,
        r.global.delta_eo,
        r.stats.accuracy.std
    )
}
