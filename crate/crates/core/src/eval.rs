//! F1 scores, prediction histograms and repeat aggregation.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1 with `p >= threshold` as the positive decision.
/// Any 0/0 is taken as 0.
pub fn f1(predictions: &[f64], labels: &[f64], threshold: f64) -> Result<BinaryScores> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p >= threshold, y == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(BinaryScores {
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    })
}

pub fn mean_f1(per_task: &[f64]) -> f64 {
    per_task.iter().sum::<f64>() / per_task.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub per_task: Vec<BinaryScores>,
    pub mean_f1: f64,
}

/// Column-wise scores of a `N x T` prediction matrix.
pub fn task_scores(predictions: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>, threshold: f64) -> Result<TaskScores> {
    if predictions.dim() != labels.dim() {
        return Err(Error::ShapeMismatch {
            what: "labels",
            expected: predictions.dim(),
            got: labels.dim(),
        });
    }
    let per_task = (0..predictions.ncols())
        .map(|t| {
            f1(
                &predictions.column(t).to_vec(),
                &labels.column(t).to_vec(),
                threshold,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let f1s: Vec<f64> = per_task.iter().map(|s| s.f1).collect();
    Ok(TaskScores {
        mean_f1: mean_f1(&f1s),
        per_task,
    })
}

/// Counts over `HISTOGRAM_BINS` equal bins on `[0, 1]`, split by ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredHistogram {
    pub positive: Vec<u64>,
    pub negative: Vec<u64>,
}

impl Default for PredHistogram {
    fn default() -> Self {
        Self {
            positive: vec![0; HISTOGRAM_BINS],
            negative: vec![0; HISTOGRAM_BINS],
        }
    }
}

impl PredHistogram {
    pub fn merge(&mut self, other: &PredHistogram) {
        for (a, b) in self.positive.iter_mut().zip(&other.positive) {
            *a += b;
        }
        for (a, b) in self.negative.iter_mut().zip(&other.negative) {
            *a += b;
        }
    }

    pub fn bin_edges(bin: usize) -> (f64, f64) {
        (bin as f64 / HISTOGRAM_BINS as f64, (bin + 1) as f64 / HISTOGRAM_BINS as f64)
    }
}

/// Bin index for `p` in `[0, 1]`: `[lo, hi)` bins, last bin closed on the right.
pub fn bin_index(p: f64) -> usize {
    let n = HISTOGRAM_BINS;
    let mut bin = ((p * n as f64).floor().max(0.0) as usize).min(n - 1);
    // make the float edge i/n the authority, not the rounded product
    if bin > 0 && p < PredHistogram::bin_edges(bin).0 {
        bin -= 1;
    } else if bin + 1 < n && p >= PredHistogram::bin_edges(bin).1 {
        bin += 1;
    }
    bin
}

pub fn histogram(predictions: &[f64], labels: &[f64]) -> Result<PredHistogram> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    let mut hist = PredHistogram::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("prediction {p} is outside [0, 1]")));
        }
        let bin = bin_index(p);
        if y == 1.0 {
            hist.positive[bin] += 1;
        } else {
            hist.negative[bin] += 1;
        }
    }
    Ok(hist)
}

/// Per-task histograms of a `N x T` prediction matrix.
pub fn task_histograms(predictions: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> Result<Vec<PredHistogram>> {
    (0..predictions.ncols())
        .map(|t| histogram(&predictions.column(t).to_vec(), &labels.column(t).to_vec()))
        .collect()
}

/// Sample mean and standard deviation (denominator `R - 1`, zero at `R = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate(runs: &[f64]) -> Result<AggregateReport> {
    if runs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let r = runs.len() as f64;
    // shift by the first run so constant inputs give an exact mean and zero spread
    let pivot = runs[0];
    let mean = pivot + runs.iter().map(|x| x - pivot).sum::<f64>() / r;
    let std = if runs.len() < 2 {
        0.0
    } else {
        (runs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    };
    Ok(AggregateReport {
        mean,
        std,
        runs: runs.len(),
    })
}

impl std::fmt::Display for AggregateReport {
    /// Percent scale with one decimal, e.g. `63.0 ± 1.9`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn f1_examples() {
        // TP=2, FP=1, FN=1
        let p = [0.9, 0.8, 0.7, 0.1, 0.2];
        let y = [1.0, 1.0, 0.0, 1.0, 0.0];
        let s = f1(&p, &y, 0.5).unwrap();
        assert!(close(s.precision, 2.0 / 3.0) && close(s.recall, 2.0 / 3.0) && close(s.f1, 2.0 / 3.0));

        let s = f1(&[1.0, 0.0], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(s.f1, 1.0);

        let s = f1(&[0.1, 0.2], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        assert!(f1(&[], &[], 0.5).is_err());
        assert!(f1(&[0.1], &[], 0.5).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(f1(&[0.5], &[1.0], 0.5).unwrap().f1, 1.0);
    }

    #[test]
    fn f1_matches_exhaustive_confusion_oracle() {
        for pred_bits in 0u32..256 {
            for label_bits in 0u32..256 {
                let p: Vec<f64> = (0..8).map(|i| ((pred_bits >> i) & 1) as f64).collect();
                let y: Vec<f64> = (0..8).map(|i| ((label_bits >> i) & 1) as f64).collect();
                let tp = (pred_bits & label_bits).count_ones() as f64;
                let fp = (pred_bits & !label_bits & 0xff).count_ones() as f64;
                let fn_ = (!pred_bits & label_bits & 0xff).count_ones() as f64;
                let expected = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
                let got = f1(&p, &y, 0.5).unwrap().f1;
                assert!(close(got, expected), "{pred_bits:08b} {label_bits:08b}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn mean_f1_examples() {
        assert_eq!(mean_f1(&[1.0, 0.0]), 0.5);
        assert_eq!(mean_f1(&[0.42]), 0.42);
        assert!(close(mean_f1(&[0.6, 0.6, 0.9]), 0.7));
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0; 5], &[0.0; 5]).unwrap();
        assert_eq!(h.negative[0], 5);
        assert_eq!(h.negative.iter().sum::<u64>(), 5);
        assert_eq!(h.positive.iter().sum::<u64>(), 0);

        let h = histogram(&[1.0], &[1.0]).unwrap();
        assert_eq!(h.positive[HISTOGRAM_BINS - 1], 1);
        assert!(histogram(&[1.1], &[1.0]).is_err());
    }

    fn brute_force_bins(predictions: &[f64], labels: &[f64]) -> PredHistogram {
        let mut h = PredHistogram::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            for bin in 0..HISTOGRAM_BINS {
                let lo = bin as f64 / HISTOGRAM_BINS as f64;
                let hi = (bin + 1) as f64 / HISTOGRAM_BINS as f64;
                let last = bin == HISTOGRAM_BINS - 1;
                if p >= lo && (p < hi || (last && p <= hi)) {
                    if y == 1.0 {
                        h.positive[bin] += 1;
                    } else {
                        h.negative[bin] += 1;
                    }
                    break;
                }
            }
        }
        h
    }

    #[test]
    fn histogram_matches_brute_force_including_edges() {
        let mut p: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect();
        p.extend((0..200).map(|i| (i as f64 * 0.6180339887).fract()));
        p.extend([0.15, 0.35, 0.45, 0.05, 0.7, 0.95]);
        let y: Vec<f64> = (0..p.len()).map(|i| (i % 3 == 0) as u8 as f64).collect();
        assert_eq!(histogram(&p, &y).unwrap(), brute_force_bins(&p, &y));
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.63]).unwrap();
        assert_eq!((a.mean, a.std), (0.63, 0.0));
        let a = aggregate(&[0.6, 0.7]).unwrap();
        assert!(close(a.mean, 0.65));
        assert!((a.std - 0.0707).abs() < 1e-4);
        assert_eq!(aggregate(&[0.4; 6]).unwrap().std, 0.0);
        assert!(aggregate(&[]).is_err());
        assert_eq!(aggregate(&[0.63, 0.65]).unwrap().to_string(), "64.0 ± 1.4");
    }

    proptest! {
        #[test]
        fn histogram_conserves_class_totals(
            data in proptest::collection::vec((0.0f64..=1.0, proptest::bool::ANY), 0..200)
        ) {
            let p: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<f64> = data.iter().map(|d| d.1 as u8 as f64).collect();
            let h = histogram(&p, &y).unwrap();
            let pos = y.iter().filter(|&&v| v == 1.0).count() as u64;
            prop_assert_eq!(h.positive.iter().sum::<u64>(), pos);
            prop_assert_eq!(h.negative.iter().sum::<u64>(), y.len() as u64 - pos);
            prop_assert_eq!(h, brute_force_bins(&p, &y));
        }

        #[test]
        fn mean_f1_is_permutation_invariant(mut v in proptest::collection::vec(0.0f64..=1.0, 1..10), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let before = mean_f1(&v);
            v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((mean_f1(&v) - before).abs() < 1e-12);
        }

        #[test]
        fn aggregate_translation(v in proptest::collection::vec(-1.0f64..1.0, 1..10), c in -5.0f64..5.0) {
            let a = aggregate(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = aggregate(&shifted).unwrap();
            prop_assert!((b.mean - (a.mean + c)).abs() < 1e-9);
            prop_assert!((b.std - a.std).abs() < 1e-9);
        }
    }
}
