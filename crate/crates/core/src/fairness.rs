//! Group-fairness metrics on hard decisions and the differentiable
//! demographic-parity surrogate used in the local objective.
//!
//! Groups are identified by arbitrary `usize` indices; only groups that
//! actually occur in the input take part in a comparison.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Fairness penalty added to the local loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PenaltyKind {
    #[default]
    SoftDp,
    None,
}

/// Per-group confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupOutcomes {
    pub total: usize,
    pub predicted_positive: usize,
    pub actual_positive: usize,
    pub true_positive: usize,
}

impl GroupOutcomes {
    /// Counts per group. `labels` may be empty when only ΔDP is needed.
    pub fn tally(
        predictions: &[bool],
        labels: &[bool],
        sensitive: &[usize],
    ) -> Result<BTreeMap<usize, GroupOutcomes>> {
        if predictions.len() != sensitive.len() {
            return Err(Error::dim(
                "sensitive attribute",
                predictions.len(),
                sensitive.len(),
            ));
        }
        if !labels.is_empty() && labels.len() != predictions.len() {
            return Err(Error::dim("labels", predictions.len(), labels.len()));
        }
        if predictions.is_empty() {
            return Err(Error::Input("fairness metrics need at least one row".into()));
        }
        let mut out: BTreeMap<usize, GroupOutcomes> = BTreeMap::new();
        for (i, (&pred, &group)) in predictions.iter().zip(sensitive).enumerate() {
            let g = out.entry(group).or_default();
            g.total += 1;
            g.predicted_positive += usize::from(pred);
            if let Some(&label) = labels.get(i) {
                if label {
                    g.actual_positive += 1;
                    g.true_positive += usize::from(pred);
                }
            }
        }
        Ok(out)
    }

    pub fn positive_rate(&self) -> f64 {
        self.predicted_positive as f64 / self.total as f64
    }

    /// `None` when the group has no actual positives.
    pub fn true_positive_rate(&self) -> Option<f64> {
        (self.actual_positive > 0).then(|| self.true_positive as f64 / self.actual_positive as f64)
    }
}

fn max_pairwise_gap(rates: &[f64]) -> f64 {
    let mut best = 0.0;
    for (i, a) in rates.iter().enumerate() {
        for b in &rates[i + 1..] {
            let gap = libm::fabs(a - b);
            if gap > best {
                best = gap;
            }
        }
    }
    best
}

/// Largest gap in positive-prediction rate between any two present groups.
pub fn delta_dp(predictions: &[bool], sensitive: &[usize]) -> Result<f64> {
    let groups = GroupOutcomes::tally(predictions, &[], sensitive)?;
    let rates: Vec<f64> = groups.values().map(GroupOutcomes::positive_rate).collect();
    Ok(max_pairwise_gap(&rates))
}

/// Largest gap in true-positive rate between any two groups that have at
/// least one actual positive. Groups without positives are skipped.
pub fn delta_eo(predictions: &[bool], labels: &[bool], sensitive: &[usize]) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::dim("labels", predictions.len(), labels.len()));
    }
    let groups = GroupOutcomes::tally(predictions, labels, sensitive)?;
    let rates: Vec<f64> = groups
        .values()
        .filter_map(GroupOutcomes::true_positive_rate)
        .collect();
    Ok(max_pairwise_gap(&rates))
}

/// Soft demographic-parity gap over predicted probabilities.
///
/// Returns the largest absolute difference between group-mean probabilities
/// and its subgradient with respect to each probability. The selected pair is
/// the first maximizing pair in ascending group order; when the gap is zero
/// the gradient is zero.
pub fn soft_dp_penalty(probabilities: &[f64], sensitive: &[usize]) -> Result<(f64, Vec<f64>)> {
    if probabilities.len() != sensitive.len() {
        return Err(Error::dim(
            "sensitive attribute",
            probabilities.len(),
            sensitive.len(),
        ));
    }
    let mut grad = vec![0.0; probabilities.len()];
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&p, &g) in probabilities.iter().zip(sensitive) {
        let e = sums.entry(g).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    }
    let groups: Vec<(usize, f64, usize)> = sums.into_iter().map(|(g, (s, n))| (g, s / n as f64, n)).collect();

    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let gap = libm::fabs(groups[i].1 - groups[j].1);
            if best.map_or(true, |(_, _, b)| gap > b) {
                best = Some((i, j, gap));
            }
        }
    }
    let Some((i, j, gap)) = best else {
        return Ok((0.0, grad));
    };
    if gap == 0.0 {
        return Ok((0.0, grad));
    }
    let (high, low) = if groups[i].1 > groups[j].1 {
        (groups[i], groups[j])
    } else {
        (groups[j], groups[i])
    };
    let up = 1.0 / high.2 as f64;
    let down = 1.0 / low.2 as f64;
    for (gr, &g) in grad.iter_mut().zip(sensitive) {
        if g == high.0 {
            *gr = up;
        } else if g == low.0 {
            *gr = -down;
        }
    }
    Ok((gap, grad))
}
