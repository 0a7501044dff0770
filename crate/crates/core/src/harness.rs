//! Experiment driver: configuration, seed lineage, the outer/nested fold
//! protocol and the report files behind each CLI subcommand.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! config_snapshot.toml
//! report.md
//! runs/<id>.csv      per (repeat, fold, task) scores
//! runs/<id>.json     full run record
//! tables/*.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, FoldPlan, LabelFormat, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{aggregate, task_histograms, task_scores, AggregateReport, PredHistogram, DEFAULT_THRESHOLD};
use crate::loss::{LossSpec, Weighting};
use crate::model::ModelConfig;
use crate::optim::OptimConfig;
use crate::smoothing::{compute_frequencies, SmoothingSpec};
use crate::train::{fit, TrainSetup};

pub const DEFAULT_BETAS: [f64; 6] = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0];

/// Which labels held-out predictions are scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLabels {
    /// The labels an annotator produced, noise included.
    #[default]
    Observed,
    /// The noise-free labels; only synthetic data has them.
    Clean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Read this CSV instead of generating data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub labels: LabelFormat,
    pub synthetic: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            csv: None,
            labels: LabelFormat::Binary,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Outer subject-exclusive folds.
    pub folds: usize,
    /// Inner folds per outer training set, used by the beta sweep.
    pub inner_folds: usize,
    pub threshold: f64,
    pub eval_labels: EvalLabels,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            inner_folds: 6,
            threshold: DEFAULT_THRESHOLD,
            eval_labels: EvalLabels::Observed,
        }
    }
}

/// Coefficients used by the ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.25 }
    }
}

/// Everything a command needs, read from one TOML file.
///
/// `model.input_dim`, `model.task_count` and `model.seed` are replaced by the
/// dataset shape and the derived per-run seed when training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed for folds and training. Data generation uses `data.synthetic.seed`.
    pub seed: u64,
    pub repeats: usize,
    pub output: PathBuf,
    pub data: DataConfig,
    pub smoothing: SmoothingSpec,
    pub loss: LossSpec,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub protocol: ProtocolConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 5,
            output: PathBuf::from("out"),
            data: DataConfig::default(),
            smoothing: SmoothingSpec::None,
            loss: LossSpec::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            protocol: ProtocolConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.protocol.folds < 2 {
            return Err(Error::Config("protocol.folds must be at least 2".into()));
        }
        if self.protocol.inner_folds < 2 {
            return Err(Error::Config("protocol.inner_folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.protocol.threshold) {
            return Err(Error::Config("protocol.threshold must lie in [0, 1]".into()));
        }
        if self.data.csv.is_none() {
            self.data.synthetic.validate()?;
        }
        self.smoothing.validate()?;
        SmoothingSpec::Vanilla { alpha: self.ablation.alpha }.validate()?;
        SmoothingSpec::Rhls { beta: self.ablation.beta }.validate()?;
        self.optim.validate()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data.csv {
            Some(path) => data::load_csv(path, data::CsvSchema { labels: self.data.labels }),
            None => data::generate(&self.data.synthetic),
        }
    }

    fn with_method(&self, smoothing: SmoothingSpec, weighting: Weighting) -> Self {
        Self {
            smoothing,
            loss: LossSpec { weighting },
            ..self.clone()
        }
    }
}

const FOLD_STREAM: u64 = 1;
const REPEAT_STREAM: u64 = 2;
const NESTED_STREAM: u64 = 3;

/// Child seed of `parent` for `(stream, index)`, mixed with SplitMix64.
pub fn derive_seed(parent: u64, stream: u64, index: u64) -> u64 {
    let mut z = parent
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed69);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fold_seed(master: u64) -> u64 {
    derive_seed(master, FOLD_STREAM, 0)
}

pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    derive_seed(master, REPEAT_STREAM, repeat as u64)
}

/// Training seed of one fold within one repeat.
pub fn run_seed(master: u64, repeat: usize, fold: usize) -> u64 {
    derive_seed(repeat_seed(master, repeat), FOLD_STREAM, fold as u64)
}

pub fn nested_seed(master: u64) -> u64 {
    derive_seed(master, NESTED_STREAM, 0)
}

/// Outer folds of `dataset` under the master seed.
pub fn fold_plan(config: &ExperimentConfig, dataset: &Dataset) -> Result<FoldPlan> {
    data::make_folds(dataset.subject_ids(), config.protocol.folds, fold_seed(config.seed))
}

/// One trained model scored on one held-out subject set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub repeat: usize,
    /// Outer fold index.
    pub fold: usize,
    /// Inner fold index for nested validation runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<usize>,
    pub seed: u64,
    pub train_subjects: Vec<String>,
    pub eval_subjects: Vec<String>,
    /// Observed-label frequencies of the training rows.
    pub frequencies: Vec<f64>,
    /// Column means of the smoothed training targets.
    pub smoothed_means: Vec<f64>,
    pub final_loss: f64,
    pub per_task_f1: Vec<f64>,
    pub mean_f1: f64,
    pub eval_positives: Vec<usize>,
    pub eval_negatives: Vec<usize>,
    pub histograms: Vec<PredHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master: u64,
    pub data: Option<u64>,
    pub folds: u64,
    pub repeats: Vec<u64>,
}

/// Everything one method produced under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub method: String,
    pub config: ExperimentConfig,
    pub seeds: SeedLineage,
    pub folds: FoldPlan,
    pub fold_fingerprint: String,
    pub runs: Vec<FoldRun>,
    pub summary: AggregateReport,
    /// Per-task histograms summed over every run.
    pub histograms: Vec<PredHistogram>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn trained_models(&self) -> usize {
        self.runs.len()
    }

    pub fn mean_per_task_f1(&self) -> Vec<f64> {
        let t = self.histograms.len();
        let n = self.runs.len() as f64;
        (0..t).map(|i| self.runs.iter().map(|r| r.per_task_f1[i]).sum::<f64>() / n).collect()
    }
}

struct Job {
    repeat: usize,
    fold: usize,
    inner: Option<usize>,
    seed: u64,
    split: Split,
}

fn run_job(dataset: &Dataset, config: &ExperimentConfig, job: &Job) -> Result<FoldRun> {
    let train = dataset.select(&dataset.rows_for(&job.split.train));
    let held_out = dataset.select(&dataset.rows_for(&job.split.held_out));
    if held_out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let setup = TrainSetup {
        model: config.model,
        optim: config.optim,
        smoothing: config.smoothing.clone(),
        loss: config.loss,
    };
    let trained = fit(&train, &setup, job.seed)?;
    let probs = trained.predict(held_out.features.view())?;
    let labels = match config.protocol.eval_labels {
        EvalLabels::Observed => &held_out.observed_labels,
        EvalLabels::Clean => &held_out.clean_labels,
    };
    let scores = task_scores(probs.view(), labels.values().view(), config.protocol.threshold)?;
    let histograms = task_histograms(probs.view(), labels.values().view())?;
    let positives: Vec<usize> = (0..labels.tasks())
        .map(|t| labels.column(t).iter().filter(|&&v| v == 1.0).count())
        .collect();
    Ok(FoldRun {
        repeat: job.repeat,
        fold: job.fold,
        inner: job.inner,
        seed: job.seed,
        train_subjects: job.split.train.clone(),
        eval_subjects: job.split.held_out.clone(),
        frequencies: trained.frequencies.as_slice().to_vec(),
        smoothed_means: trained.smoothed_means,
        final_loss: trained.final_loss,
        per_task_f1: scores.per_task.iter().map(|s| s.f1).collect(),
        mean_f1: scores.mean_f1,
        eval_negatives: positives.iter().map(|p| labels.rows() - p).collect(),
        eval_positives: positives,
        histograms,
    })
}

fn outer_jobs(config: &ExperimentConfig, plan: &FoldPlan) -> Vec<Job> {
    let splits = plan.outer_splits();
    (0..config.repeats)
        .flat_map(|repeat| {
            splits.iter().enumerate().map(move |(fold, split)| Job {
                repeat,
                fold,
                inner: None,
                seed: run_seed(config.seed, repeat, fold),
                split: split.clone(),
            })
        })
        .collect()
}

fn nested_jobs(config: &ExperimentConfig, plan: &FoldPlan) -> Result<Vec<Job>> {
    let nested = plan.nested_runs(config.protocol.inner_folds, nested_seed(config.seed))?;
    let v = config.protocol.inner_folds;
    let mut jobs = Vec::new();
    for repeat in 0..config.repeats {
        for (i, (outer, split)) in nested.iter().enumerate() {
            let inner = i % v;
            jobs.push(Job {
                repeat,
                fold: *outer,
                inner: Some(inner),
                seed: derive_seed(run_seed(config.seed, repeat, *outer), NESTED_STREAM, inner as u64),
                split: split.clone(),
            });
        }
    }
    Ok(jobs)
}

fn build_record(
    id: &str,
    method: &str,
    config: &ExperimentConfig,
    plan: &FoldPlan,
    runs: Vec<FoldRun>,
    elapsed: f64,
) -> Result<RunRecord> {
    let summary = aggregate(&runs.iter().map(|r| r.mean_f1).collect::<Vec<_>>())?;
    let mut histograms = runs[0].histograms.clone();
    for run in &runs[1..] {
        for (acc, h) in histograms.iter_mut().zip(&run.histograms) {
            acc.merge(h);
        }
    }
    Ok(RunRecord {
        id: id.to_string(),
        method: method.to_string(),
        config: config.clone(),
        seeds: SeedLineage {
            master: config.seed,
            data: config.data.csv.is_none().then_some(config.data.synthetic.seed),
            folds: fold_seed(config.seed),
            repeats: (0..config.repeats).map(|r| repeat_seed(config.seed, r)).collect(),
        },
        fold_fingerprint: plan.fingerprint(),
        folds: plan.clone(),
        runs,
        summary,
        histograms,
        wall_clock_secs: elapsed,
    })
}

/// Runs every job of every method in parallel, then groups results per method.
fn execute(dataset: &Dataset, methods: &[(ExperimentConfig, Vec<Job>)]) -> Result<Vec<(Vec<FoldRun>, f64)>> {
    let flat: Vec<(usize, &ExperimentConfig, &Job)> = methods
        .iter()
        .enumerate()
        .flat_map(|(m, (cfg, jobs))| jobs.iter().map(move |j| (m, cfg, j)))
        .collect();
    let results: Vec<(usize, Result<FoldRun>, f64)> = flat
        .par_iter()
        .map(|(m, cfg, job)| {
            let start = Instant::now();
            let run = run_job(dataset, cfg, job);
            (*m, run, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut grouped: Vec<(Vec<FoldRun>, f64)> = methods.iter().map(|_| (Vec::new(), 0.0)).collect();
    for (m, run, secs) in results {
        grouped[m].0.push(run?);
        grouped[m].1 += secs;
    }
    Ok(grouped)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_snapshot(out: &Path, config: &ExperimentConfig) -> Result<()> {
    write_text(&out.join("config_snapshot.toml"), &config.to_toml()?)
}

fn write_record(out: &Path, record: &RunRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(record).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join("runs").join(format!("{}.json", record.id)), &json)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["repeat", "fold", "inner", "seed", "task", "f1", "frequency", "smoothed_mean"])?;
    for run in &record.runs {
        for task in 0..run.per_task_f1.len() {
            w.write_record([
                run.repeat.to_string(),
                run.fold.to_string(),
                run.inner.map(|i| i.to_string()).unwrap_or_default(),
                run.seed.to_string(),
                task.to_string(),
                run.per_task_f1[task].to_string(),
                run.frequencies[task].to_string(),
                run.smoothed_means[task].to_string(),
            ])?;
        }
    }
    write_text(&out.join("runs").join(format!("{}.csv", record.id)), &csv_string(w)?)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Output of `gen`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub targets: Vec<f64>,
    pub clean: Vec<f64>,
    pub observed: Vec<f64>,
}

impl GenSummary {
    pub fn table(&self) -> String {
        let mut s = String::from("task  target  clean   observed\n");
        for t in 0..self.targets.len() {
            let _ = writeln!(
                s,
                "{t:>4}  {:>6.3}  {:>6.3}  {:>8.3}",
                self.targets[t], self.clean[t], self.observed[t]
            );
        }
        s
    }
}

/// Generates the synthetic dataset into `out/dataset.csv` and tabulates its frequencies.
pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> Result<GenSummary> {
    config.validate()?;
    let dataset = data::generate(&config.data.synthetic)?;
    fs::create_dir_all(out)?;
    write_snapshot(out, config)?;
    let path = out.join("dataset.csv");
    data::save_csv(&dataset, &path)?;
    let summary = GenSummary {
        path,
        rows: dataset.len(),
        targets: config.data.synthetic.frequencies.clone(),
        clean: dataset.clean_labels.column_means(),
        observed: dataset.observed_labels.column_means(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "target", "clean", "observed"])?;
    for t in 0..summary.targets.len() {
        w.write_record([
            t.to_string(),
            summary.targets[t].to_string(),
            summary.clean[t].to_string(),
            summary.observed[t].to_string(),
        ])?;
    }
    write_text(&out.join("tables").join("frequencies.csv"), &csv_string(w)?)?;
    Ok(summary)
}

fn method_label(config: &ExperimentConfig) -> String {
    match config.loss.weighting {
        Weighting::Uniform => config.smoothing.label(),
        Weighting::Frequency => format!("{} + FW-BCE", config.smoothing.label()),
    }
}

/// Outer-fold protocol: `repeats` x `folds` trained models under `config`.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<RunRecord> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    let plan = fold_plan(config, &dataset)?;
    let jobs = outer_jobs(config, &plan);
    let (runs, secs) = execute(&dataset, &[(config.clone(), jobs)])?.remove(0);
    let record = build_record("train", &method_label(config), config, &plan, runs, secs)?;

    write_snapshot(out, config)?;
    write_record(out, &record)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "mean_f1", "mean_frequency", "mean_smoothed"])?;
    let n = record.runs.len() as f64;
    for (t, f1) in record.mean_per_task_f1().iter().enumerate() {
        let freq = record.runs.iter().map(|r| r.frequencies[t]).sum::<f64>() / n;
        let smoothed = record.runs.iter().map(|r| r.smoothed_means[t]).sum::<f64>() / n;
        w.write_record([t.to_string(), f1.to_string(), freq.to_string(), smoothed.to_string()])?;
    }
    write_text(&out.join("tables").join("train_per_task.csv"), &csv_string(w)?)?;

    let mut report = format!("# Training run\n\nMethod: {}\n\n", record.method);
    let _ = writeln!(report, "Mean F1 over {} models: {}\n", record.summary.runs, record.summary);
    let _ = writeln!(report, "Fold fingerprint: `{}`\n", record.fold_fingerprint);
    report.push_str("| task | F1 |\n|---:|---:|\n");
    for (t, f1) in record.mean_per_task_f1().iter().enumerate() {
        let _ = writeln!(report, "| {t} | {} |", pct(*f1));
    }
    write_text(&out.join("report.md"), &report)?;
    Ok(record)
}

/// One row of the beta sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

fn beta_id(beta: f64) -> String {
    format!("sweep-beta-{beta}")
}

/// Nested-validation mean F1 of RHLS for each beta.
pub fn cmd_sweep_beta(config: &ExperimentConfig, betas: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if betas.is_empty() {
        return Err(Error::Config("beta list is empty".into()));
    }
    for &beta in betas {
        SmoothingSpec::Rhls { beta }.validate()?;
    }
    let dataset = config.load_dataset()?;
    let plan = fold_plan(config, &dataset)?;
    let methods = betas
        .iter()
        .map(|&beta| {
            let cfg = config.with_method(SmoothingSpec::Rhls { beta }, config.loss.weighting);
            let jobs = nested_jobs(&cfg, &plan)?;
            Ok((cfg, jobs))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = execute(&dataset, &methods)?;

    write_snapshot(out, config)?;
    let mut rows = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["beta", "mean", "std", "runs"])?;
    let mut report = String::from("# RHLS beta sweep (nested validation)\n\n| beta | mean F1 | runs |\n|---:|---:|---:|\n");
    for ((cfg, _), (runs, secs)) in methods.iter().zip(results) {
        let SmoothingSpec::Rhls { beta } = cfg.smoothing else { unreachable!() };
        let record = build_record(&beta_id(beta), &cfg.smoothing.label(), cfg, &plan, runs, secs)?;
        write_record(out, &record)?;
        let s = record.summary;
        w.write_record([beta.to_string(), s.mean.to_string(), s.std.to_string(), s.runs.to_string()])?;
        let _ = writeln!(report, "| {beta} | {s} | {} |", s.runs);
        rows.push(SweepRow {
            beta,
            mean: s.mean,
            std: s.std,
            runs: s.runs,
        });
    }
    let best = rows.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).expect("non-empty");
    let _ = writeln!(report, "\nBest beta: {}\n\nFold fingerprint: `{}`", best.beta, plan.fingerprint());
    write_text(&out.join("tables").join("sweep_beta.csv"), &csv_string(w)?)?;
    write_text(&out.join("report.md"), &report)?;
    Ok(rows)
}

/// The four methods of the ablation, in table order.
pub fn ablation_methods(config: &ExperimentConfig) -> Vec<(&'static str, String, ExperimentConfig)> {
    let a = config.ablation;
    vec![
        ("baseline", "Baseline".into(), config.with_method(SmoothingSpec::None, Weighting::Uniform)),
        (
            "label_smoothing",
            format!("Label Smoothing (α={})", a.alpha),
            config.with_method(SmoothingSpec::Vanilla { alpha: a.alpha }, Weighting::Uniform),
        ),
        (
            "fw_bce",
            "Frequency Weighted BCE".into(),
            config.with_method(SmoothingSpec::None, Weighting::Frequency),
        ),
        (
            "rhls",
            format!("RHLS (β={})", a.beta),
            config.with_method(SmoothingSpec::Rhls { beta: a.beta }, Weighting::Uniform),
        ),
    ]
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Keys whose values differ between two configs, as `(key, left, right)`.
pub fn config_diff(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<Vec<(String, String, String)>> {
    let to_map = |c: &ExperimentConfig| -> Result<BTreeMap<String, String>> {
        let value = toml::Value::try_from(c).map_err(|e| Error::Config(e.to_string()))?;
        let mut map = BTreeMap::new();
        flatten("", &value, &mut map);
        Ok(map)
    };
    let (ma, mb) = (to_map(a)?, to_map(b)?);
    let keys: std::collections::BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
    let missing = || "-".to_string();
    Ok(keys
        .into_iter()
        .filter(|k| ma.get(*k) != mb.get(*k))
        .map(|k| {
            (
                k.clone(),
                ma.get(k).cloned().unwrap_or_else(missing),
                mb.get(k).cloned().unwrap_or_else(missing),
            )
        })
        .collect())
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: String,
    pub method: String,
    pub summary: AggregateReport,
    pub fold_fingerprint: String,
}

/// Baseline, vanilla smoothing, frequency-weighted BCE and RHLS on identical folds and seeds.
pub fn cmd_ablate(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    let plan = fold_plan(config, &dataset)?;
    let methods = ablation_methods(config);
    let jobs: Vec<(ExperimentConfig, Vec<Job>)> = methods
        .iter()
        .map(|(_, _, cfg)| (cfg.clone(), outer_jobs(cfg, &plan)))
        .collect();
    let results = execute(&dataset, &jobs)?;

    write_snapshot(out, config)?;
    let mut records = Vec::new();
    for ((id, label, cfg), (runs, secs)) in methods.iter().zip(results) {
        let record = build_record(id, label, cfg, &plan, runs, secs)?;
        write_record(out, &record)?;
        records.push(record);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mean", "std", "runs", "fold_fingerprint"])?;
    for r in &records {
        w.write_record([
            r.method.clone(),
            r.summary.mean.to_string(),
            r.summary.std.to_string(),
            r.summary.runs.to_string(),
            r.fold_fingerprint.clone(),
        ])?;
    }
    write_text(&out.join("tables").join("ablation.csv"), &csv_string(w)?)?;

    let tasks = records[0].histograms.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    header.extend((0..tasks).map(|t| format!("task{t}")));
    w.write_record(&header)?;
    for r in &records {
        let mut row = vec![r.method.clone()];
        row.extend(r.mean_per_task_f1().iter().map(|f| f.to_string()));
        w.write_record(&row)?;
    }
    write_text(&out.join("tables").join("ablation_per_task.csv"), &csv_string(w)?)?;

    let mut report = String::from("# Ablation\n\n| Method | F1 |\n|:--|--:|\n");
    for r in &records {
        let _ = writeln!(report, "| {} | {} |", r.method, r.summary);
    }
    let _ = writeln!(
        report,
        "\nMean ± sample std over {} models per method ({} repeats x {} folds).\n",
        records[0].summary.runs, config.repeats, config.protocol.folds
    );
    report.push_str("## Fold assignments\n\n");
    for r in &records {
        let _ = writeln!(report, "- {}: `{}`", r.method, r.fold_fingerprint);
    }
    report.push_str("\n## Configuration differences from Baseline\n\n");
    for r in &records[1..] {
        let _ = writeln!(report, "{}:\n", r.method);
        for (key, base, this) in config_diff(&records[0].config, &r.config)? {
            let _ = writeln!(report, "- `{key}`: {base} -> {this}");
        }
        report.push('\n');
    }
    write_text(&out.join("report.md"), &report)?;
    Ok(records)
}

/// Writes one `tables/hist_<id>_task<i>.csv` per task from a saved run record.
pub fn cmd_hist(run: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    if !run.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("run record {} not found", run.display()),
        )));
    }
    let record = RunRecord::load(run)?;
    let mut paths = Vec::new();
    for (task, h) in record.histograms.iter().enumerate() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_lo", "bin_hi", "count_pos", "count_neg"])?;
        for bin in 0..h.positive.len() {
            let (lo, hi) = PredHistogram::bin_edges(bin);
            w.write_record([lo.to_string(), hi.to_string(), h.positive[bin].to_string(), h.negative[bin].to_string()])?;
        }
        let path = out.join("tables").join(format!("hist_{}_task{task}.csv", record.id));
        write_text(&path, &csv_string(w)?)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Frequencies recomputed from the logged training subjects of `run`.
pub fn recompute_frequencies(dataset: &Dataset, run: &FoldRun) -> Result<Vec<f64>> {
    let rows = dataset.rows_for(&run.train_subjects);
    Ok(compute_frequencies(&dataset.observed_labels.select(&rows))?.as_slice().to_vec())
}
