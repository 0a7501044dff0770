//! Soft-target binary cross-entropy over `T` tasks.
//!
//! The batch loss is the weighted sum over tasks of the per-task mean BCE,
//! with task weights summing to one (uniform `1/T`, or inverse frequency).

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoothing::{fw_weights, TaskFrequencies};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce_soft(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    #[serde(default)]
    pub weighting: Weighting,
}

impl LossSpec {
    /// Resolves per-task weights. Frequency weighting needs the training
    /// frequencies; uniform weighting ignores them.
    pub fn weights(&self, task_count: usize, freqs: Option<&TaskFrequencies>) -> Result<TaskWeights> {
        match self.weighting {
            Weighting::Uniform => Ok(TaskWeights::uniform(task_count)),
            Weighting::Frequency => {
                let freqs = freqs.ok_or(Error::MissingFrequencies)?;
                if freqs.task_count() != task_count {
                    return Err(Error::LengthMismatch {
                        what: "task frequencies",
                        expected: task_count,
                        got: freqs.task_count(),
                    });
                }
                TaskWeights::new(fw_weights(freqs))
            }
        }
    }
}

/// Nonnegative per-task loss weights that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights(Vec<f64>);

impl TaskWeights {
    pub fn uniform(task_count: usize) -> Self {
        Self(vec![1.0 / task_count as f64; task_count])
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("task weights must be nonnegative and sum to 1: {weights:?}")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_shapes(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, weights: &TaskWeights) -> Result<()> {
    if logits.dim() != targets.dim() {
        return Err(Error::ShapeMismatch {
            what: "targets",
            expected: logits.dim(),
            got: targets.dim(),
        });
    }
    if weights.0.len() != logits.ncols() {
        return Err(Error::LengthMismatch {
            what: "task weights",
            expected: logits.ncols(),
            got: weights.0.len(),
        });
    }
    if logits.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

pub fn batch_loss(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, weights: &TaskWeights) -> Result<f64> {
    check_shapes(logits, targets, weights)?;
    let batch = logits.nrows() as f64;
    let loss = weights
        .0
        .iter()
        .enumerate()
        .map(|(task, w)| {
            let per_task: f64 = logits
                .column(task)
                .iter()
                .zip(targets.column(task))
                .map(|(&z, &y)| bce_soft(sigmoid(z), y))
                .sum();
            w * per_task / batch
        })
        .sum();
    Ok(loss)
}

/// Gradient of [`batch_loss`] with respect to the logits.
pub fn batch_loss_grad(
    logits: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    weights: &TaskWeights,
) -> Result<Array2<f64>> {
    check_shapes(logits, targets, weights)?;
    let batch = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    for ((b, t), g) in grad.indexed_iter_mut() {
        *g = weights.0[t] * (sigmoid(logits[[b, t]]) - targets[[b, t]]) / batch;
    }
    Ok(grad)
}
