//! Local, global and cross-client metrics.
//!
//! Every fairness number here goes through [`crate::fairness`]; decisions are
//! hard predictions `p > 0.5`.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::fairness::{delta_dp, delta_eo};
use crate::fedsim::Mode;
use crate::nn::forward;
use crate::params::ModelParams;

pub const DECISION_THRESHOLD: f64 = 0.5;

/// Accuracy and disparity of one model on one dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupMetrics {
    pub test_size: usize,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClientMetrics {
    pub client: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
}

/// Per-client metrics and their unweighted means.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalSummary {
    pub clients: Vec<ClientMetrics>,
    /// Clients with an empty test split, left out of the averages.
    pub absent: Vec<usize>,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation (divides by the number of clients).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat> {
        if values.is_empty() {
            return Err(Error::Input("statistics need at least one value".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Stat {
            mean,
            std: libm::sqrt(var),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            values: values.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistributionStats {
    pub accuracy: Stat,
    pub delta_dp: Stat,
}

/// Everything measured at one evaluation point of a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub round: usize,
    pub mode: Mode,
    pub mu: f64,
    pub local: LocalSummary,
    /// The aggregated model applied as-is to the pooled test data.
    pub global: GroupMetrics,
    /// Each client's deployed model on its own test rows, pooled.
    pub global_personalized: GroupMetrics,
    pub stats: DistributionStats,
}

pub fn predict(params: &ModelParams, data: &Dataset) -> Result<Vec<bool>> {
    Ok(forward(params, &data.features)?
        .into_iter()
        .map(|p| p > DECISION_THRESHOLD)
        .collect())
}

pub fn metrics_from_predictions(
    predictions: &[bool],
    labels: &[bool],
    sensitive: &[usize],
) -> Result<GroupMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("labels", predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty set".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(GroupMetrics {
        test_size: predictions.len(),
        accuracy: correct as f64 / predictions.len() as f64,
        delta_dp: delta_dp(predictions, sensitive)?,
        delta_eo: delta_eo(predictions, labels, sensitive)?,
    })
}

pub fn evaluate_model(params: &ModelParams, data: &Dataset) -> Result<GroupMetrics> {
    let preds = predict(params, data)?;
    metrics_from_predictions(&preds, &data.labels, &data.sensitive)
}

/// Each client's model on that client's test split.
pub fn evaluate_local(clients: &[&ClientDataset], models: &[&ModelParams]) -> Result<LocalSummary> {
    if clients.len() != models.len() {
        return Err(Error::dim("client models", clients.len(), models.len()));
    }
    let mut per_client = Vec::with_capacity(clients.len());
    let mut absent = Vec::new();
    for (c, m) in clients.iter().zip(models) {
        if c.test.is_empty() {
            absent.push(c.id);
            continue;
        }
        let g = evaluate_model(m, &c.test)?;
        per_client.push(ClientMetrics {
            client: c.id,
            test_size: g.test_size,
            accuracy: g.accuracy,
            delta_dp: g.delta_dp,
            delta_eo: g.delta_eo,
        });
    }
    if per_client.is_empty() {
        return Err(Error::Input("no client has test data".into()));
    }
    let n = per_client.len() as f64;
    let mean = |f: fn(&ClientMetrics) -> f64| per_client.iter().map(f).sum::<f64>() / n;
    Ok(LocalSummary {
        accuracy: mean(|c| c.accuracy),
        delta_dp: mean(|c| c.delta_dp),
        delta_eo: mean(|c| c.delta_eo),
        clients: per_client,
        absent,
    })
}

fn pooled_test(clients: &[&ClientDataset]) -> Result<Dataset> {
    let dim = clients
        .first()
        .map(|c| c.test.dim())
        .ok_or_else(|| Error::Input("no clients to pool".into()))?;
    let pool = Dataset::concat(dim, clients.iter().map(|c| &c.test))?;
    if pool.is_empty() {
        return Err(Error::Input("the pooled test set is empty".into()));
    }
    Ok(pool)
}

/// One model on the concatenation of every client's test split.
pub fn evaluate_global(global: &ModelParams, clients: &[&ClientDataset]) -> Result<GroupMetrics> {
    evaluate_model(global, &pooled_test(clients)?)
}

/// Per-client models on their own test rows, with predictions pooled before
/// the metrics are taken.
pub fn evaluate_pooled(clients: &[&ClientDataset], models: &[&ModelParams]) -> Result<GroupMetrics> {
    if clients.len() != models.len() {
        return Err(Error::dim("client models", clients.len(), models.len()));
    }
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    for (c, m) in clients.iter().zip(models) {
        if c.test.is_empty() {
            continue;
        }
        preds.extend(predict(m, &c.test)?);
        labels.extend_from_slice(&c.test.labels);
        sensitive.extend_from_slice(&c.test.sensitive);
    }
    metrics_from_predictions(&preds, &labels, &sensitive)
}

/// Spread of accuracy and ΔDP across clients.
pub fn performance_fairness_stats(per_client: &[ClientMetrics]) -> Result<DistributionStats> {
    let acc: Vec<f64> = per_client.iter().map(|c| c.accuracy).collect();
    let dp: Vec<f64> = per_client.iter().map(|c| c.delta_dp).collect();
    Ok(DistributionStats {
        accuracy: Stat::of(&acc)?,
        delta_dp: Stat::of(&dp)?,
    })
}

impl MetricsReport {
    /// `deployed` holds the model each client actually uses for prediction.
    pub fn build(
        round: usize,
        mode: Mode,
        mu: f64,
        clients: &[&ClientDataset],
        deployed: &[&ModelParams],
        global: &ModelParams,
    ) -> Result<MetricsReport> {
        let local = evaluate_local(clients, deployed)?;
        let stats = performance_fairness_stats(&local.clients)?;
        Ok(MetricsReport {
            round,
            mode,
            mu,
            global: evaluate_global(global, clients)?,
            global_personalized: evaluate_pooled(clients, deployed)?,
            stats,
            local,
        })
    }

    /// Checks that the stored averages recompute from the per-client rows.
    pub fn check_consistency(&self) -> Result<()> {
        let n = self.local.clients.len() as f64;
        let acc = self.local.clients.iter().map(|c| c.accuracy).sum::<f64>() / n;
        if acc != self.local.accuracy {
            return Err(Error::Numeric(format!(
                "local accuracy {} does not match per-client mean {acc}",
                self.local.accuracy
            )));
        }
        let pooled: usize = self.local.clients.iter().map(|c| c.test_size).sum();
        if pooled != self.global.test_size {
            return Err(Error::Numeric(format!(
                "pooled test size {} differs from client total {pooled}",
                self.global.test_size
            )));
        }
        Ok(())
    }
}
