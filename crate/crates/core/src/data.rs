//! Datasets: synthetic generation, CSV ingestion, intensity binarisation and
//! subject-exclusive fold plans.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::LabelMatrix;

/// Intensities strictly above this are positive.
pub const INTENSITY_THRESHOLD: i64 = 2;
pub const MAX_INTENSITY: i64 = 5;

/// Default per-task positive rates: heavily skewed, most tasks at or below 0.15.
pub const DEFAULT_FREQUENCIES: [f64; 8] = [0.05, 0.07, 0.1, 0.12, 0.15, 0.2, 0.3, 0.45];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub frames_per_subject: usize,
    pub input_dim: usize,
    pub task_count: usize,
    /// Expected positive rate of each task in the observed (noisy) labels.
    pub frequencies: Vec<f64>,
    /// Probability that a clean positive is observed as negative.
    pub fn_rate: f64,
    /// Probability that a clean negative is observed as positive.
    pub fp_rate: f64,
    /// Share of each task direction drawn from a direction common to all tasks.
    pub task_correlation: f64,
    pub latent_dim: usize,
    /// Std of the per-subject latent offset.
    pub subject_scale: f64,
    /// Std of a per-subject appearance shift that carries no label information.
    pub identity_scale: f64,
    /// Std of the per-frame score noise that makes labels ambiguous given the latent.
    pub ambiguity: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 27,
            frames_per_subject: 740,
            input_dim: 32,
            task_count: 8,
            frequencies: DEFAULT_FREQUENCIES.to_vec(),
            fn_rate: 0.1,
            fp_rate: 0.01,
            task_correlation: 0.3,
            latent_dim: 8,
            subject_scale: 0.5,
            identity_scale: 0.5,
            ambiguity: 0.5,
            feature_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.frames_per_subject == 0 {
            return Err(Error::Config("synthetic dataset needs at least one subject and one frame".into()));
        }
        if self.input_dim == 0 || self.task_count == 0 || self.latent_dim == 0 {
            return Err(Error::Config("input_dim, task_count and latent_dim must be positive".into()));
        }
        if self.frequencies.len() != self.task_count {
            return Err(Error::LengthMismatch {
                what: "target frequencies",
                expected: self.task_count,
                got: self.frequencies.len(),
            });
        }
        if let Some((task, &f)) = self.frequencies.iter().enumerate().find(|(_, f)| !(**f > 0.0 && **f < 1.0)) {
            return Err(Error::InfeasibleFrequency { task, frequency: f });
        }
        for (name, rate) in [("fn_rate", self.fn_rate), ("fp_rate", self.fp_rate)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {rate}")));
            }
        }
        if self.fn_rate + self.fp_rate >= 1.0 {
            return Err(Error::Config("fn_rate + fp_rate must be below 1".into()));
        }
        for task in 0..self.task_count {
            let clean = self.clean_frequency(task);
            if !(clean > 0.0 && clean < 1.0) {
                return Err(Error::InfeasibleFrequency {
                    task,
                    frequency: self.frequencies[task],
                });
            }
        }
        if !(0.0..=1.0).contains(&self.task_correlation) {
            return Err(Error::Config("task_correlation must lie in [0, 1]".into()));
        }
        let scales = [self.subject_scale, self.identity_scale, self.ambiguity, self.feature_noise];
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise scales must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Clean positive rate whose noisy observation has the target rate:
    /// `f = c (1 - fn) + (1 - c) fp`.
    pub fn clean_frequency(&self, task: usize) -> f64 {
        (self.frequencies[task] - self.fp_rate) / (1.0 - self.fn_rate - self.fp_rate)
    }
}

/// Features with clean and observed (possibly noisy) hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub clean_labels: LabelMatrix,
    pub observed_labels: LabelMatrix,
}

impl Dataset {
    pub fn new(features: Array2<f64>, clean_labels: LabelMatrix, observed_labels: LabelMatrix) -> Result<Self> {
        clean_labels.require_hard()?;
        observed_labels.require_hard()?;
        let n = features.nrows();
        for (what, m) in [("clean labels", &clean_labels), ("observed labels", &observed_labels)] {
            if m.rows() != n {
                return Err(Error::LengthMismatch {
                    what,
                    expected: n,
                    got: m.rows(),
                });
            }
        }
        if clean_labels.subject_ids() != observed_labels.subject_ids() || clean_labels.tasks() != observed_labels.tasks() {
            return Err(Error::Config("clean and observed labels disagree on subjects or tasks".into()));
        }
        Ok(Self {
            features,
            clean_labels,
            observed_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn task_count(&self) -> usize {
        self.observed_labels.tasks()
    }

    pub fn subject_ids(&self) -> &[String] {
        self.observed_labels.subject_ids()
    }

    /// Distinct subjects in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        self.subject_ids()
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Row indices (ascending) belonging to any of `subjects`.
    pub fn rows_for(&self, subjects: &[String]) -> Vec<usize> {
        let wanted: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
        self.subject_ids()
            .iter()
            .enumerate()
            .filter(|(_, s)| wanted.contains(s.as_str()))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            clean_labels: self.clean_labels.select(rows),
            observed_labels: self.observed_labels.select(rows),
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Generates a subject-structured multi-task dataset with label noise.
///
/// Each frame has a latent `h = subject_offset + frame_latent`. Task `i` is
/// clean-positive when `w_i . h + ambiguity * e` is among the top
/// `round(c_i * N)` scores of that task, where `c_i` is the clean rate that
/// label noise turns into the target rate `f_i`. Features are a fixed linear mixture of `h`
/// plus a per-subject appearance shift and isotropic noise. Observed labels
/// flip clean entries independently with the configured rates.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.latent_dim;
    let (dx, t) = (config.input_dim, config.task_count);

    let mixing = Array2::from_shape_fn((k, dx), |_| standard_normal(&mut rng) / (k as f64).sqrt());
    let identity_mixing = Array2::from_shape_fn((k, dx), |_| standard_normal(&mut rng) / (k as f64).sqrt());

    let shared = unit_vector(&mut rng, k);
    let rho = config.task_correlation;
    let directions: Vec<Vec<f64>> = (0..t)
        .map(|_| {
            let own = unit_vector(&mut rng, k);
            let w: Vec<f64> = shared
                .iter()
                .zip(&own)
                .map(|(s, o)| rho.sqrt() * s + (1.0 - rho).sqrt() * o)
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let n = config.subjects * config.frames_per_subject;
    let mut latents = Array2::zeros((n, k));
    let mut identities = Array2::zeros((n, k));
    let mut subject_ids = Vec::with_capacity(n);
    let width = config.subjects.to_string().len().max(2);
    for s in 0..config.subjects {
        let offset: Vec<f64> = (0..k).map(|_| config.subject_scale * standard_normal(&mut rng)).collect();
        let identity: Vec<f64> = (0..k).map(|_| config.identity_scale * standard_normal(&mut rng)).collect();
        let id = format!("s{s:0width$}");
        for f in 0..config.frames_per_subject {
            let row = s * config.frames_per_subject + f;
            for j in 0..k {
                latents[[row, j]] = offset[j] + standard_normal(&mut rng);
                identities[[row, j]] = identity[j];
            }
            subject_ids.push(id.clone());
        }
    }

    let mut scores = Array2::<f64>::zeros((n, t));
    for row in 0..n {
        let h = latents.row(row);
        for task in 0..t {
            scores[[row, task]] = h.iter().zip(&directions[task]).map(|(a, b)| a * b).sum::<f64>()
                + config.ambiguity * standard_normal(&mut rng);
        }
    }
    // threshold each task at the empirical score quantile matching its target frequency
    let mut clean = Array2::zeros((n, t));
    for (task, &f) in config.frequencies.iter().enumerate() {
        let positives = (config.clean_frequency(task) * n as f64).round() as usize;
        if positives == 0 || positives == n {
            return Err(Error::InfeasibleFrequency { task, frequency: f });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[[b, task]].total_cmp(&scores[[a, task]]));
        for &row in &order[..positives] {
            clean[[row, task]] = 1.0;
        }
    }

    let mut features = latents.dot(&mixing) + identities.dot(&identity_mixing);
    features.mapv_inplace(|v| v + config.feature_noise * standard_normal(&mut rng));

    let mut observed = clean.clone();
    for y in observed.iter_mut() {
        let u: f64 = rng.random();
        if *y == 1.0 && u < config.fn_rate {
            *y = 0.0;
        } else if *y == 0.0 && u < config.fp_rate {
            *y = 1.0;
        }
    }

    Dataset::new(
        features,
        LabelMatrix::hard(clean, subject_ids.clone())?,
        LabelMatrix::hard(observed, subject_ids)?,
    )
}

/// Maps 0..=5 intensities to hard labels (positive iff intensity > 2).
pub fn binarize_intensity(intensities: &Array2<i64>, subject_ids: Vec<String>) -> Result<LabelMatrix> {
    let mut labels = Array2::zeros(intensities.dim());
    for ((row, column), &value) in intensities.indexed_iter() {
        if !(0..=MAX_INTENSITY).contains(&value) {
            return Err(Error::IntensityOutOfRange { row, column, value });
        }
        labels[[row, column]] = if value > INTENSITY_THRESHOLD { 1.0 } else { 0.0 };
    }
    LabelMatrix::hard(labels, subject_ids)
}

/// A train/held-out division of subjects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub held_out: Vec<String>,
}

/// Disjoint subject folds covering every subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// One split per fold: train on the other folds, hold this one out.
    pub fn outer_splits(&self) -> Vec<Split> {
        (0..self.k())
            .map(|i| Split {
                train: self
                    .folds
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .flat_map(|(_, f)| f.iter().cloned())
                    .collect(),
                held_out: self.folds[i].clone(),
            })
            .collect()
    }

    /// Every inner `(train, validation)` split: `v` per outer training set.
    /// Returns `(outer fold index, split)` pairs, `k * v` in total.
    pub fn nested_runs(&self, v: usize, seed: u64) -> Result<Vec<(usize, Split)>> {
        let mut runs = Vec::new();
        for (outer, split) in self.outer_splits().into_iter().enumerate() {
            for inner in nested_validation_plan(&split.train, v, seed.wrapping_add(outer as u64))? {
                runs.push((outer, inner));
            }
        }
        Ok(runs)
    }

    /// Content hash, used to show that compared methods saw the same folds.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for fold in &self.folds {
            for s in fold {
                hasher.update(s.as_bytes());
                hasher.update([0u8]);
            }
            hasher.update([0xffu8]);
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// Seeded shuffle of the distinct subjects followed by round-robin assignment.
pub fn make_folds(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut subjects: Vec<String> = subject_ids
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if k == 0 || subjects.len() < k {
        return Err(Error::TooFewSubjects(subjects.len(), k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in subjects.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    for fold in &mut folds {
        fold.sort();
    }
    Ok(FoldPlan { folds })
}

/// `v`-fold subject-exclusive validation splits inside one training set.
pub fn nested_validation_plan(train_subjects: &[String], v: usize, seed: u64) -> Result<Vec<Split>> {
    if v < 2 {
        return Err(Error::Config(format!(
            "nested validation needs at least 2 folds so that training and validation are both non-empty, got {v}"
        )));
    }
    Ok(make_folds(train_subjects, v, seed)?.outer_splits())
}

/// How the label columns of a CSV file are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFormat {
    #[default]
    Binary,
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default)]
    pub labels: LabelFormat,
}

pub const SUBJECT_COLUMN: &str = "subject";

/// Writes `subject,f0..,t0..` with the observed labels.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec![SUBJECT_COLUMN.to_string()];
    header.extend((0..dataset.input_dim()).map(|j| format!("f{j}")));
    header.extend((0..dataset.task_count()).map(|t| format!("t{t}")));
    out.write_record(&header)?;
    let labels = dataset.observed_labels.values();
    for (row, subject) in dataset.subject_ids().iter().enumerate() {
        let mut record = vec![subject.clone()];
        record.extend(dataset.features.row(row).iter().map(|v| v.to_string()));
        record.extend(labels.row(row).iter().map(|&v| (v as u8).to_string()));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

fn indexed_columns(header: &csv::StringRecord, prefix: char) -> Result<Vec<usize>> {
    let mut found = BTreeMap::new();
    for (pos, name) in header.iter().enumerate() {
        if let Some(idx) = name.strip_prefix(prefix).and_then(|rest| rest.parse::<usize>().ok()) {
            found.insert(idx, pos);
        }
    }
    if found.is_empty() {
        return Err(Error::MissingColumn(format!("{prefix}0")));
    }
    for (expected, idx) in found.keys().enumerate() {
        if *idx != expected {
            return Err(Error::MissingColumn(format!("{prefix}{expected}")));
        }
    }
    Ok(found.into_values().collect())
}

/// Reads a dataset written by [`write_csv`] or produced externally. Clean
/// labels are unknown for loaded data and are set equal to the observed ones.
pub fn read_csv<R: std::io::Read>(reader: R, schema: CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: "empty file".into(),
        });
    }
    let subject_col = header
        .iter()
        .position(|h| h == SUBJECT_COLUMN)
        .ok_or_else(|| Error::MissingColumn(SUBJECT_COLUMN.into()))?;
    let feature_cols = indexed_columns(&header, 'f')?;
    let task_cols = indexed_columns(&header, 't')?;

    let mut subjects = Vec::new();
    let mut features = Vec::new();
    let mut intensities = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |pos: usize| record.get(pos).unwrap_or("");
        subjects.push(cell(subject_col).to_string());
        for &pos in &feature_cols {
            let v: f64 = cell(pos).trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature `{}` in column `{}`", cell(pos), &header[pos]),
            })?;
            features.push(v);
        }
        for &pos in &task_cols {
            let v: i64 = cell(pos).trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-integer label `{}` in column `{}`", cell(pos), &header[pos]),
            })?;
            let max = match schema.labels {
                LabelFormat::Binary => 1,
                LabelFormat::Intensity => MAX_INTENSITY,
            };
            if !(0..=max).contains(&v) {
                return Err(Error::Parse {
                    line,
                    message: format!("label {v} in column `{}` is outside 0..={max}", &header[pos]),
                });
            }
            intensities.push(v);
        }
    }
    let n = subjects.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let features = Array2::from_shape_vec((n, feature_cols.len()), features).expect("row widths are fixed");
    let raw = Array2::from_shape_vec((n, task_cols.len()), intensities).expect("row widths are fixed");
    let labels = match schema.labels {
        LabelFormat::Binary => LabelMatrix::hard(raw.mapv(|v| v as f64), subjects)?,
        LabelFormat::Intensity => binarize_intensity(&raw, subjects)?,
    };
    Dataset::new(features, labels.clone(), labels)
}

pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}
