//! Label transformations for imbalanced multi-task binary targets.
//!
//! Three smoothing families are provided, all deterministic maps from hard
//! labels to soft targets:
//!
//! - vanilla: `y -> (1 - alpha) y + alpha / 2` for every task;
//! - two-sided: separate positive/negative coefficients per task,
//!   `y -> y (1 - l_pos / 2) + (1 - y) l_neg / 2`;
//! - Robin Hood (RHLS): the two-sided form with coefficients chosen from the
//!   task's training frequency so that only the majority class is softened.
//!   `beta = 0` leaves the labels untouched and `beta = 1` moves each task's
//!   expected target to exactly one half.
//!
//! Inputs are hard, so the maps are evaluated through their per-class values
//! (`1 - c/2` for positives, `c/2` for negatives). That keeps an untouched
//! class at exactly 0 or 1 and makes the two-sided map with equal coefficients
//! bit-identical to the vanilla one.
//!
//! The inverse-frequency task weights used by frequency-weighted BCE live here
//! too since they share the clamped [`TaskFrequencies`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelKind, LabelMatrix};

/// Lower clamp applied to empirical frequencies (upper clamp is `1 - FREQ_EPS`).
pub const FREQ_EPS: f64 = 1e-6;

/// Per-task empirical positive frequencies, clamped to `[FREQ_EPS, 1 - FREQ_EPS]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFrequencies(Vec<f64>);

impl TaskFrequencies {
    /// Wraps raw frequencies, clamping each into `[FREQ_EPS, 1 - FREQ_EPS]`.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if raw.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!("frequencies must lie in [0, 1]: {raw:?}")));
        }
        Ok(Self(raw.into_iter().map(clamp_frequency).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn task_count(&self) -> usize {
        self.0.len()
    }
}

fn clamp_frequency(f: f64) -> f64 {
    f.clamp(FREQ_EPS, 1.0 - FREQ_EPS)
}

/// Fraction of positives per task. Only ever call this on training rows.
pub fn compute_frequencies(labels: &LabelMatrix) -> Result<TaskFrequencies> {
    labels.require_hard()?;
    if labels.rows() == 0 || labels.tasks() == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = labels.rows() as f64;
    let raw = (0..labels.tasks())
        .map(|t| labels.column(t).iter().filter(|&&v| v == 1.0).count() as f64 / n)
        .collect();
    TaskFrequencies::new(raw)
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::CoefficientOutOfRange { name, value })
    }
}

pub fn vanilla_smooth(labels: &LabelMatrix, alpha: f64) -> Result<LabelMatrix> {
    labels.require_hard()?;
    check_unit("alpha", alpha)?;
    // hard labels: (1 - a) y + a/2 is 1 - a/2 for positives and a/2 for negatives
    let values = labels
        .values()
        .mapv(|y| if y == 1.0 { 1.0 - alpha / 2.0 } else { alpha / 2.0 });
    labels.with_values(values, LabelKind::Soft)
}

pub fn two_sided_smooth(labels: &LabelMatrix, plus: &[f64], minus: &[f64]) -> Result<LabelMatrix> {
    labels.require_hard()?;
    let tasks = labels.tasks();
    for (what, side) in [("lambda_plus", plus), ("lambda_minus", minus)] {
        if side.len() != tasks {
            return Err(Error::LengthMismatch {
                what,
                expected: tasks,
                got: side.len(),
            });
        }
    }
    for (&p, &m) in plus.iter().zip(minus) {
        check_unit("lambda_plus", p)?;
        check_unit("lambda_minus", m)?;
    }
    let mut values = labels.values().clone();
    for mut row in values.rows_mut() {
        for (task, y) in row.iter_mut().enumerate() {
            *y = if *y == 1.0 { 1.0 - plus[task] / 2.0 } else { minus[task] / 2.0 };
        }
    }
    labels.with_values(values, LabelKind::Soft)
}

/// Positive/negative smoothing coefficients for each task.
#[derive(Debug, Clone, PartialEq)]
pub struct SideCoefficients {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

/// Robin Hood coefficients: only the majority side of each task gets a
/// nonzero coefficient.
pub fn rhls_lambdas(freqs: &TaskFrequencies, beta: f64) -> Result<SideCoefficients> {
    check_unit("beta", beta)?;
    let (plus, minus) = freqs
        .as_slice()
        .iter()
        .map(|&f| {
            let minus = beta * ((1.0 - 2.0 * f) / (1.0 - f)).max(0.0);
            let plus = beta * ((2.0 * f - 1.0) / f).max(0.0);
            (plus, minus)
        })
        .unzip();
    Ok(SideCoefficients { plus, minus })
}

pub fn rhls_smooth(labels: &LabelMatrix, freqs: &TaskFrequencies, beta: f64) -> Result<LabelMatrix> {
    if freqs.task_count() != labels.tasks() {
        return Err(Error::LengthMismatch {
            what: "task frequencies",
            expected: labels.tasks(),
            got: freqs.task_count(),
        });
    }
    let sides = rhls_lambdas(freqs, beta)?;
    two_sided_smooth(labels, &sides.plus, &sides.minus)
}

/// Inverse-frequency task weights normalised to sum to one.
pub fn fw_weights(freqs: &TaskFrequencies) -> Vec<f64> {
    let inv: Vec<f64> = freqs.as_slice().iter().map(|f| 1.0 / f).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|w| w / total).collect()
}

/// Which label transformation to apply to the training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmoothingSpec {
    None,
    Vanilla { alpha: f64 },
    TwoSided { plus: Vec<f64>, minus: Vec<f64> },
    Rhls { beta: f64 },
}

impl SmoothingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SmoothingSpec::None => Ok(()),
            SmoothingSpec::Vanilla { alpha } => check_unit("alpha", *alpha),
            SmoothingSpec::TwoSided { plus, minus } => {
                plus.iter().try_for_each(|&v| check_unit("lambda_plus", v))?;
                minus.iter().try_for_each(|&v| check_unit("lambda_minus", v))
            }
            SmoothingSpec::Rhls { beta } => check_unit("beta", *beta),
        }
    }

    /// Turns hard training labels into the targets the loss sees.
    /// `freqs` must come from the same training rows; RHLS fails without it.
    pub fn apply(&self, labels: &LabelMatrix, freqs: Option<&TaskFrequencies>) -> Result<LabelMatrix> {
        match self {
            SmoothingSpec::None => {
                labels.require_hard()?;
                labels.with_values(labels.values().clone(), LabelKind::Soft)
            }
            SmoothingSpec::Vanilla { alpha } => vanilla_smooth(labels, *alpha),
            SmoothingSpec::TwoSided { plus, minus } => two_sided_smooth(labels, plus, minus),
            SmoothingSpec::Rhls { beta } => {
                let freqs = freqs.ok_or(Error::MissingFrequencies)?;
                rhls_smooth(labels, freqs, *beta)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SmoothingSpec::None => "none".to_string(),
            SmoothingSpec::Vanilla { alpha } => format!("vanilla(alpha={alpha})"),
            SmoothingSpec::TwoSided { .. } => "two_sided".to_string(),
            SmoothingSpec::Rhls { beta } => format!("rhls(beta={beta})"),
        }
    }
}
