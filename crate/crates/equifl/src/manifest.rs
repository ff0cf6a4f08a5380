//! Partition manifests: which file rows each client holds, per split.

use std::path::Path;

use equifl_core::data::{Partition, SplitRows};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::PreparedData;

pub const MANIFEST_FORMAT: &str = "equifl-partition";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub id: usize,
    pub alpha: f64,
    pub counts: SplitCounts,
    /// Records per sensitive value, in `values` order.
    pub group_counts: Vec<usize>,
    /// Share of the client's records holding each sensitive value.
    pub group_proportions: Vec<f64>,
    /// Dirichlet fraction of each value's records given to this client.
    pub drawn_fractions: Vec<f64>,
    /// 0-based data rows of the source file (header excluded).
    pub rows: SplitRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub partition_seed: u64,
    pub split_seed: u64,
    pub config: ExperimentConfig,
    pub rows_used: usize,
    pub rows_dropped: usize,
    /// Sensitive values present in the data, by name.
    pub values: Vec<String>,
    pub attempts: usize,
    pub warnings: Vec<String>,
    pub clients: Vec<ClientEntry>,
}

impl PartitionManifest {
    pub fn build(
        cfg: &ExperimentConfig,
        seed: u64,
        data: &PreparedData,
        partition: &Partition,
        splits: &[SplitRows],
    ) -> Self {
        let alphas = cfg.partition.alphas();
        let names = &cfg.data.schema.sensitive_values;
        let clients = splits
            .iter()
            .enumerate()
            .map(|(id, split)| {
                let members = &partition.clients[id];
                let group_counts: Vec<usize> = partition
                    .values
                    .iter()
                    .map(|&v| {
                        members
                            .iter()
                            .filter(|&&r| data.records[r].sensitive == v)
                            .count()
                    })
                    .collect();
                let total = members.len();
                ClientEntry {
                    id,
                    alpha: alphas[id],
                    counts: SplitCounts {
                        train: split.train.len(),
                        validation: split.validation.len(),
                        test: split.test.len(),
                        total,
                    },
                    group_proportions: group_counts
                        .iter()
                        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                        .collect(),
                    group_counts,
                    drawn_fractions: partition.proportions.iter().map(|p| p[id]).collect(),
                    rows: SplitRows {
                        train: data.source_rows(&split.train),
                        validation: data.source_rows(&split.validation),
                        test: data.source_rows(&split.test),
                    },
                }
            })
            .collect();
        PartitionManifest {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            partition_seed: cfg.partition_seed(seed),
            split_seed: cfg.split_seed(seed),
            config: crate::experiment::for_seed(cfg, seed),
            rows_used: data.records.len(),
            rows_dropped: data.table.dropped,
            values: partition.values.iter().map(|&v| names[v].clone()).collect(),
            attempts: partition.attempts,
            warnings: partition.warnings.clone(),
            clients,
        }
    }

    /// Pretty JSON with a trailing newline. Identical inputs give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::report::write_file(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: PartitionManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected format `{MANIFEST_FORMAT}`, found `{}`", m.format),
            });
        }
        Ok(m)
    }

    /// One line per client with its sensitive-value mix.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "seed {} (partition seed {}): {} clients over {} rows\n",
            self.seed,
            self.partition_seed,
            self.clients.len(),
            self.rows_used
        );
        for c in &self.clients {
            let mix: Vec<String> = self
                .values
                .iter()
                .zip(&c.group_proportions)
                .map(|(v, p)| format!("{v} {p:.3}"))
                .collect();
            out.push_str(&format!(
                "  client {:>3}  alpha {:<6} n={:<6} train/val/test {}/{}/{}  {}\n",
                c.id,
                c.alpha,
                c.counts.total,
                c.counts.train,
                c.counts.validation,
                c.counts.test,
                mix.join(", ")
            ));
        }
        out
    }
}
