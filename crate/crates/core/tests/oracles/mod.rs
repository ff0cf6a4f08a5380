//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the code paths it checks: the loss is evaluated
//! with naive per-row loops, metrics by explicit pair enumeration, and the
//! FedAvg loop is written without the round engine.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use equifl_core::rng;
use equifl_core::{AdamConfig, AdamState, Batch, ClientDataset, ModelParams, PenaltyKind};
use rand::seq::SliceRandom;

fn naive_logit(params: &ModelParams, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut next = vec![0.0; layer.out_dim];
        for (j, out) in next.iter_mut().enumerate() {
            let mut z = layer.bias[j];
            for k in 0..layer.in_dim {
                z += layer.weights[j * layer.in_dim + k] * a[k];
            }
            *out = if l < last && z < 0.0 { 0.0 } else { z };
        }
        a = next;
    }
    a[0]
}

/// Mean BCE plus `mu` times the max gap of group-mean probabilities.
pub fn naive_loss(params: &ModelParams, batch: &Batch, mu: f64) -> f64 {
    let n = batch.len();
    let mut probs = Vec::with_capacity(n);
    let mut bce = 0.0;
    for i in 0..n {
        let p = 1.0 / (1.0 + (-naive_logit(params, batch.features.row(i))).exp());
        let y = batch.labels[i];
        bce -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        probs.push(p);
    }
    bce /= n as f64;
    let groups: BTreeSet<usize> = batch.sensitive.iter().copied().collect();
    let means: Vec<f64> = groups
        .iter()
        .map(|g| {
            let members: Vec<f64> = (0..n)
                .filter(|&i| batch.sensitive[i] == *g)
                .map(|i| probs[i])
                .collect();
            members.iter().sum::<f64>() / members.len() as f64
        })
        .collect();
    let mut gap: f64 = 0.0;
    for a in &means {
        for b in &means {
            gap = gap.max((a - b).abs());
        }
    }
    bce + mu * gap
}

/// Central finite differences of [`naive_loss`] over every parameter.
pub fn finite_difference_grad(params: &ModelParams, batch: &Batch, mu: f64, h: f64) -> Vec<f64> {
    let total = params.num_parameters();
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.values_mut().nth(idx).unwrap() += h;
        *minus.values_mut().nth(idx).unwrap() -= h;
        out.push((naive_loss(&plus, batch, mu) - naive_loss(&minus, batch, mu)) / (2.0 * h));
    }
    out
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn present_groups(sensitive: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = sensitive.iter().copied().collect();
    set.into_iter().collect()
}

/// ΔDP by enumerating every ordered pair of present groups.
pub fn brute_delta_dp(preds: &[bool], sensitive: &[usize]) -> f64 {
    let rate = |g: usize| {
        let rows: Vec<usize> = (0..preds.len()).filter(|&i| sensitive[i] == g).collect();
        rows.iter().filter(|&&i| preds[i]).count() as f64 / rows.len() as f64
    };
    let groups = present_groups(sensitive);
    let mut best: f64 = 0.0;
    for &s in &groups {
        for &t in &groups {
            if s != t {
                best = best.max((rate(s) - rate(t)).abs());
            }
        }
    }
    best
}

/// ΔEO by pair enumeration over groups that have at least one positive label.
pub fn brute_delta_eo(preds: &[bool], labels: &[bool], sensitive: &[usize]) -> f64 {
    let tpr = |g: usize| -> Option<f64> {
        let rows: Vec<usize> = (0..preds.len())
            .filter(|&i| sensitive[i] == g && labels[i])
            .collect();
        if rows.is_empty() {
            None
        } else {
            Some(rows.iter().filter(|&&i| preds[i]).count() as f64 / rows.len() as f64)
        }
    };
    let groups = present_groups(sensitive);
    let mut best: f64 = 0.0;
    for &s in &groups {
        for &t in &groups {
            if let (true, Some(a), Some(b)) = (s != t, tpr(s), tpr(t)) {
                best = best.max((a - b).abs());
            }
        }
    }
    best
}

/// Plain FedAvg with full participation, written against the nn-core API
/// only. Uses the engine's documented seed derivation so batch order matches.
/// Returns the global model after each round.
#[allow(clippy::too_many_arguments)]
pub fn reference_fedavg(
    init: &ModelParams,
    clients: &[ClientDataset],
    rounds: usize,
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    seed: u64,
) -> Vec<ModelParams> {
    let mut global = init.clone();
    let mut optimizers: Vec<AdamState> = clients.iter().map(|_| AdamState::new(init, adam)).collect();
    let mut streams: Vec<_> = clients
        .iter()
        .map(|c| rng::derived_stream(seed, &[rng::tag::CLIENT, c.id as u64]))
        .collect();
    let mut trajectory = Vec::new();
    for _ in 0..rounds {
        let mut updated = Vec::new();
        for (i, c) in clients.iter().enumerate() {
            let mut w = global.clone();
            for _ in 0..epochs {
                let mut order: Vec<usize> = (0..c.train.len()).collect();
                order.shuffle(&mut streams[i]);
                for rows in order.chunks(batch_size) {
                    let batch = c.train.batch(rows);
                    let (_, g) = equifl_core::loss_and_grad(&w, &batch, 0.0, PenaltyKind::None).unwrap();
                    optimizers[i].apply(&mut w, &g).unwrap();
                }
            }
            updated.push(w);
        }
        let total: usize = clients.iter().map(|c| c.train.len()).sum();
        let mut next = global.zeros_like();
        for (w, c) in updated.iter().zip(clients) {
            let share = c.train.len() as f64 / total as f64;
            for (o, v) in next.values_mut().zip(w.values()) {
                *o += share * v;
            }
        }
        global = next;
        trajectory.push(global.clone());
    }
    trajectory
}
