//! Forward pass, loss and exact gradients for the MLP classifier.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fairness::{soft_dp_penalty, PenaltyKind};
use crate::params::{LayerParams, ModelParams};
use crate::tensor::{axpy, dot, Matrix};

/// A mini-batch of `(x, s, y)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub sensitive: Vec<usize>,
    /// 0.0 or 1.0.
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn new(features: Matrix, sensitive: Vec<usize>, labels: Vec<f64>) -> Result<Self> {
        if sensitive.len() != features.rows() {
            return Err(Error::dim("batch sensitive", features.rows(), sensitive.len()));
        }
        if labels.len() != features.rows() {
            return Err(Error::dim("batch labels", features.rows(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Input(format!("label {bad} is not 0 or 1")));
        }
        Ok(Batch {
            features,
            sensitive,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-libm::fabs(z)))
}

fn affine(layer: &LayerParams, input: &Matrix, relu: bool) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), layer.out_dim);
    for i in 0..input.rows() {
        let x = input.row(i);
        let o = out.row_mut(i);
        for (j, oj) in o.iter_mut().enumerate() {
            let z = dot(layer.weight_row(j), x) + layer.bias[j];
            *oj = if relu { z.max(0.0) } else { z };
        }
    }
    out
}

fn check_input(params: &ModelParams, features: &Matrix) -> Result<()> {
    if features.cols() != params.input_dim() {
        return Err(Error::dim("input features", params.input_dim(), features.cols()));
    }
    Ok(())
}

/// Output logits, one per row.
pub fn logits(params: &ModelParams, features: &Matrix) -> Result<Vec<f64>> {
    check_input(params, features)?;
    let last = params.num_layers() - 1;
    let mut act = affine(&params.layers[0], features, last > 0);
    for (l, layer) in params.layers.iter().enumerate().skip(1) {
        act = affine(layer, &act, l < last);
    }
    Ok(act.into_vec())
}

/// Predicted probability of the positive class for each row.
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<Vec<f64>> {
    Ok(logits(params, features)?.into_iter().map(sigmoid).collect())
}

/// Mean binary cross-entropy plus `mu` times the fairness penalty, and the
/// gradient of that scalar with respect to every weight and bias.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &Batch,
    mu: f64,
    penalty: PenaltyKind,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Input("cannot evaluate the loss on an empty batch".into()));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!(
            "mu must be finite and non-negative, got {mu}"
        )));
    }
    check_input(params, &batch.features)?;
    let n = batch.len();
    let last = params.num_layers() - 1;

    // acts[l] is the input to layer l; acts[last + 1] holds the logits.
    let mut acts: Vec<Matrix> = Vec::with_capacity(params.num_layers() + 1);
    acts.push(batch.features.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let next = affine(layer, &acts[l], l < last);
        acts.push(next);
    }
    let z = acts[last + 1].as_slice();
    let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();

    let inv_n = 1.0 / n as f64;
    let bce: f64 = z
        .iter()
        .zip(&batch.labels)
        .map(|(&zi, &y)| softplus(zi) - y * zi)
        .sum::<f64>()
        * inv_n;

    let mut delta: Vec<f64> = probs
        .iter()
        .zip(&batch.labels)
        .map(|(&p, &y)| (p - y) * inv_n)
        .collect();

    let mut loss = bce;
    if penalty == PenaltyKind::SoftDp && mu > 0.0 {
        let (value, dpen) = soft_dp_penalty(&probs, &batch.sensitive)?;
        loss += mu * value;
        for ((d, &g), &p) in delta.iter_mut().zip(&dpen).zip(&probs) {
            *d += mu * g * p * (1.0 - p);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }

    let mut grads = params.zeros_like();
    let mut delta = Matrix::from_vec(n, 1, core::mem::take(&mut delta))?;
    for l in (0..=last).rev() {
        let layer = &params.layers[l];
        let input = &acts[l];
        let g = &mut grads.layers[l];
        for i in 0..n {
            let d = delta.row(i);
            let x = input.row(i);
            for (j, &dj) in d.iter().enumerate() {
                if dj != 0.0 {
                    axpy(dj, x, &mut g.weights[j * layer.in_dim..(j + 1) * layer.in_dim]);
                    g.bias[j] += dj;
                }
            }
        }
        if l == 0 {
            break;
        }
        // Back through the weights and the ReLU that produced `input`.
        let mut prev = Matrix::zeros(n, layer.in_dim);
        for i in 0..n {
            let d = delta.row(i);
            let p = prev.row_mut(i);
            for (j, &dj) in d.iter().enumerate() {
                if dj != 0.0 {
                    axpy(dj, layer.weight_row(j), p);
                }
            }
            for (pk, &ak) in p.iter_mut().zip(input.row(i)) {
                if ak <= 0.0 {
                    *pk = 0.0;
                }
            }
        }
        delta = prev;
    }

    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((loss, grads))
}

/// Convenience for tests and diagnostics: the loss alone.
pub fn loss(params: &ModelParams, batch: &Batch, mu: f64, penalty: PenaltyKind) -> Result<f64> {
    let probs = forward(params, &batch.features)?;
    let z = logits(params, &batch.features)?;
    let n = batch.len() as f64;
    let bce: f64 = z
        .iter()
        .zip(&batch.labels)
        .map(|(&zi, &y)| softplus(zi) - y * zi)
        .sum::<f64>()
        / n;
    let pen = match penalty {
        PenaltyKind::SoftDp if mu > 0.0 => mu * soft_dp_penalty(&probs, &batch.sensitive)?.0,
        _ => 0.0,
    };
    Ok(bce + pen)
}
