//! l2-regularized logistic regression split by feature blocks.
//!
//! Per-sample loss is `log(1 + exp(-y * theta))` with the linear predictor
//! `theta = sum over parties of w_l . x_l`; the regularizer is
//! `lambda / 2 * ||w||^2`, applied once per batch.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::partition::{check_consistent, Dataset, PartyShard};
use crate::{Error, Result};

/// A linear predictor and, optionally, the per-party parts it was summed
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub theta: f64,
    pub components: Option<Vec<f64>>,
}

impl LinearPredictor {
    pub fn from_components(components: Vec<f64>) -> Self {
        LinearPredictor {
            theta: components.iter().sum(),
            components: Some(components),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedLoss {
    lambda: f64,
}

impl RegularizedLoss {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "regularization weight must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(RegularizedLoss { lambda })
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn objective(&self, shards: &[PartyShard]) -> Result<f64> {
        full_objective(shards, self.lambda)
    }
}

/// `w_l . (x_i)_l`, the part of the predictor one party computes locally.
pub fn theta_component(w_block: &[f64], x_row_block: &[f64]) -> Result<f64> {
    if w_block.len() != x_row_block.len() {
        return Err(Error::DimensionMismatch {
            expected: w_block.len(),
            got: x_row_block.len(),
        });
    }
    Ok(linalg::dot(w_block, x_row_block))
}

#[inline]
fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

/// Derivative of the logistic loss in `theta`: `-y / (1 + exp(y * theta))`.
pub fn loss_derivative(theta: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    Ok(loss_derivative_unchecked(theta, y))
}

#[inline]
pub(crate) fn loss_derivative_unchecked(theta: f64, y: f64) -> f64 {
    let z = y * theta;
    if z >= 0.0 {
        let e = libm::exp(-z);
        -y * e / (1.0 + e)
    } else {
        -y / (1.0 + libm::exp(z))
    }
}

/// `log(1 + exp(-y * theta))` without overflow.
pub fn logistic_loss(theta: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    Ok(logistic_loss_unchecked(theta, y))
}

#[inline]
pub(crate) fn logistic_loss_unchecked(theta: f64, y: f64) -> f64 {
    let z = y * theta;
    if z > 0.0 {
        libm::log1p(libm::exp(-z))
    } else {
        -z + libm::log1p(libm::exp(z))
    }
}

/// Mini-batch block gradient at the party's block `w_block`:
/// `(1/b) sum_i H(theta_i, y_i) (x_i)_l + lambda * w_block`.
///
/// `theta_batch[k]` must be the full (aggregated) predictor of sample
/// `batch[k]`.
pub fn block_gradient(
    shard: &PartyShard,
    w_block: &[f64],
    batch: &[usize],
    theta_batch: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; shard.dim()];
    block_gradient_into(shard, w_block, batch, theta_batch, lambda, &mut out)?;
    Ok(out)
}

pub fn block_gradient_into(
    shard: &PartyShard,
    w_block: &[f64],
    batch: &[usize],
    theta_batch: &[f64],
    lambda: f64,
    out: &mut [f64],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if theta_batch.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: theta_batch.len(),
        });
    }
    if w_block.len() != shard.dim() || out.len() != shard.dim() {
        return Err(Error::DimensionMismatch {
            expected: shard.dim(),
            got: w_block.len().min(out.len()),
        });
    }
    let n = shard.n();
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv_b = 1.0 / batch.len() as f64;
    for (&i, &theta) in batch.iter().zip(theta_batch) {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        let y = shard.labels[i];
        check_label(y)?;
        shard
            .features
            .row_axpy(i, inv_b * loss_derivative_unchecked(theta, y), out);
    }
    linalg::axpy(lambda, w_block, out);
    Ok(())
}

/// Full block gradient over every sample; `all_theta` holds all `n`
/// predictors.
pub fn full_block_gradient(shard: &PartyShard, all_theta: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if all_theta.len() != shard.n() {
        return Err(Error::DimensionMismatch {
            expected: shard.n(),
            got: all_theta.len(),
        });
    }
    let batch: Vec<usize> = (0..shard.n()).collect();
    block_gradient(shard, &shard.w_block, &batch, all_theta, lambda)
}

/// Every sample's predictor assembled from all shards' current blocks.
pub fn predictors(shards: &[PartyShard]) -> Result<Vec<f64>> {
    let n = check_consistent(shards)?;
    let mut theta = vec![0.0; n];
    for s in shards {
        for (i, t) in theta.iter_mut().enumerate() {
            *t += s.features.row_dot(i, &s.w_block);
        }
    }
    Ok(theta)
}

/// Objective value from the shards' current blocks.
pub fn full_objective(shards: &[PartyShard], lambda: f64) -> Result<f64> {
    let theta = predictors(shards)?;
    let labels = &shards[0].labels;
    let mut loss = 0.0;
    for (&t, &y) in theta.iter().zip(labels) {
        loss += logistic_loss(t, y)?;
    }
    let reg: f64 = shards.iter().map(|s| linalg::norm_sq(&s.w_block)).sum();
    Ok(loss / theta.len() as f64 + 0.5 * lambda * reg)
}

/// Objective of the unsplit problem at a full weight vector.
pub fn centralized_objective(dataset: &Dataset, w: &[f64], lambda: f64) -> Result<f64> {
    if w.len() != dataset.d() {
        return Err(Error::DimensionMismatch {
            expected: dataset.d(),
            got: w.len(),
        });
    }
    let mut loss = 0.0;
    for (i, &y) in dataset.labels.iter().enumerate() {
        loss += logistic_loss(dataset.features.row_dot(i, w), y)?;
    }
    Ok(loss / dataset.n() as f64 + 0.5 * lambda * linalg::norm_sq(w))
}

/// Gradient of the unsplit problem.
pub fn centralized_gradient(dataset: &Dataset, w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if w.len() != dataset.d() {
        return Err(Error::DimensionMismatch {
            expected: dataset.d(),
            got: w.len(),
        });
    }
    let n = dataset.n() as f64;
    let mut g = vec![0.0; w.len()];
    for (i, &y) in dataset.labels.iter().enumerate() {
        let h = loss_derivative(dataset.features.row_dot(i, w), y)?;
        dataset.features.row_axpy(i, h / n, &mut g);
    }
    linalg::axpy(lambda, w, &mut g);
    Ok(g)
}
