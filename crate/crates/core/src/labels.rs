//! Multi-task label matrices.
//!
//! A [`LabelMatrix`] holds `N` rows (frames) by `T` columns (tasks), either
//! hard `{0, 1}` annotations or soft targets in `[0, 1]`, together with the
//! subject each row belongs to.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Hard,
    Soft,
}

impl LabelKind {
    fn name(self) -> &'static str {
        match self {
            LabelKind::Hard => "hard",
            LabelKind::Soft => "soft",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    values: Array2<f64>,
    kind: LabelKind,
    subject_ids: Vec<String>,
}

impl LabelMatrix {
    /// Builds a hard label matrix; every entry must be exactly 0 or 1.
    pub fn hard(values: Array2<f64>, subject_ids: Vec<String>) -> Result<Self> {
        Self::new(values, LabelKind::Hard, subject_ids)
    }

    /// Builds a soft label matrix; every entry must lie in `[0, 1]`.
    pub fn soft(values: Array2<f64>, subject_ids: Vec<String>) -> Result<Self> {
        Self::new(values, LabelKind::Soft, subject_ids)
    }

    pub fn new(values: Array2<f64>, kind: LabelKind, subject_ids: Vec<String>) -> Result<Self> {
        if subject_ids.len() != values.nrows() {
            return Err(Error::LengthMismatch {
                what: "subject ids",
                expected: values.nrows(),
                got: subject_ids.len(),
            });
        }
        for ((row, task), &value) in values.indexed_iter() {
            let ok = match kind {
                LabelKind::Hard => value == 0.0 || value == 1.0,
                LabelKind::Soft => (0.0..=1.0).contains(&value),
            };
            if !ok {
                return Err(Error::InvalidLabel {
                    row,
                    task,
                    value,
                    kind: kind.name(),
                });
            }
        }
        Ok(Self {
            values,
            kind,
            subject_ids,
        })
    }

    /// Hard labels with every row attributed to one anonymous subject.
    pub fn hard_anonymous(values: Array2<f64>) -> Result<Self> {
        let ids = vec![String::from("0"); values.nrows()];
        Self::hard(values, ids)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn is_hard(&self) -> bool {
        self.kind == LabelKind::Hard
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn tasks(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, task: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.column(task)
    }

    /// Per-task mean over rows. Empty matrices yield an empty vector.
    pub fn column_means(&self) -> Vec<f64> {
        if self.rows() == 0 {
            return Vec::new();
        }
        self.values
            .mean_axis(Axis(0))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }

    /// Row subset, in the order given.
    pub fn select(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix {
            values: self.values.select(Axis(0), rows),
            kind: self.kind,
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
        }
    }

    pub(crate) fn require_hard(&self) -> Result<()> {
        if self.is_hard() {
            return Ok(());
        }
        // report the first non-binary entry, or (0, 0) when a soft matrix happens to be binary
        let (row, task, value) = self
            .values
            .indexed_iter()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
            .map(|((r, t), &v)| (r, t, v))
            .unwrap_or((0, 0, self.values.first().copied().unwrap_or(f64::NAN)));
        Err(Error::InvalidLabel {
            row,
            task,
            value,
            kind: "hard",
        })
    }

    /// Same values and subjects under a new kind; validated.
    pub(crate) fn with_values(&self, values: Array2<f64>, kind: LabelKind) -> Result<Self> {
        Self::new(values, kind, self.subject_ids.clone())
    }
}
