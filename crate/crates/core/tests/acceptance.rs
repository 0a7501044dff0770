//! Acceptance criteria. Each one prints a PASS/FAIL line and the binary exits
//! nonzero if any criterion fails. Runs without the libtest harness so the
//! lines are never captured.
//!
//! Criterion 7 trains 60 models at the default configuration and takes a
//! couple of minutes in the optimised test profile.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rhls::eval::{f1, HISTOGRAM_BINS};
use rhls::harness::{self, ExperimentConfig, RunRecord};
use rhls::loss::{batch_loss, batch_loss_grad, TaskWeights};
use rhls::model::{backward, forward, init_params, ModelConfig, ModelParams};
use rhls::smoothing::{compute_frequencies, fw_weights, rhls_lambdas, rhls_smooth, two_sided_smooth, vanilla_smooth};
use rhls::{LabelMatrix, TaskFrequencies};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    check(elapsed < budget, || format!("took {elapsed:?}, budget {budget:?}"))
}

fn hard_column(n: usize, positives: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut col: Vec<f64> = (0..n).map(|i| if i < positives { 1.0 } else { 0.0 }).collect();
    col.shuffle(rng);
    col
}

/// Majority-side coefficients written out directly from the frequency.
fn oracle_lambdas(f: f64, beta: f64) -> (f64, f64) {
    let plus = beta * ((2.0 * f - 1.0) / f).max(0.0);
    let minus = beta * ((1.0 - 2.0 * f) / (1.0 - f)).max(0.0);
    (plus, minus)
}

fn analytic_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut worst_balanced: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.random_range(2..400);
        let k = rng.random_range(1..n);
        // every 10th pair uses beta = 1
        let beta = if trial % 10 == 0 { 1.0 } else { rng.random_range(0.0..=1.0) };
        let labels = LabelMatrix::hard_anonymous(Array2::from_shape_vec((n, 1), hard_column(n, k, &mut rng)).unwrap())
            .map_err(|e| e.to_string())?;
        let freqs = compute_frequencies(&labels).map_err(|e| e.to_string())?;
        let f = k as f64 / n as f64;
        let lambdas = rhls_lambdas(&freqs, beta).map_err(|e| e.to_string())?;
        let (plus, minus) = (lambdas.plus[0], lambdas.minus[0]);
        check(plus * minus == 0.0, || format!("f={f} beta={beta}: plus={plus} minus={minus}"))?;
        let (op, om) = oracle_lambdas(f, beta);
        check((plus - op).abs() < 1e-12 && (minus - om).abs() < 1e-12, || {
            format!("f={f} beta={beta}: ({plus}, {minus}) vs oracle ({op}, {om})")
        })?;
        let smoothed = rhls_smooth(&labels, &freqs, beta).map_err(|e| e.to_string())?;
        let mean = smoothed.values().sum() / n as f64;
        let err = (mean - (f + beta * (0.5 - f))).abs();
        worst = worst.max(err);
        if beta == 1.0 {
            worst_balanced = worst_balanced.max((mean - 0.5).abs());
        }
    }
    // also continuous frequencies, not only ratios of small integers
    for _ in 0..1000 {
        let f = rng.random_range(1e-3..1.0 - 1e-3);
        let beta = rng.random_range(0.0..=1.0);
        let l = rhls_lambdas(&TaskFrequencies::new(vec![f]).unwrap(), beta).map_err(|e| e.to_string())?;
        check(l.plus[0] * l.minus[0] == 0.0, || format!("f={f} beta={beta}"))?;
    }
    let elapsed = start.elapsed();
    check(worst < 1e-12, || format!("max column-mean error {worst:e}"))?;
    check(worst_balanced < 1e-12, || format!("beta=1 mean off 0.5 by {worst_balanced:e}"))?;
    within_budget(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "max mean error {worst:.1e}, beta=1 max |mean-0.5| {worst_balanced:.1e}, {elapsed:.0?}"
    ))
}

fn reduction_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (n, t) = (rng.random_range(1..60), rng.random_range(1..10));
        let values = Array2::from_shape_fn((n, t), |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let labels = LabelMatrix::hard_anonymous(values).unwrap();
        let alpha = rng.random_range(0.0..=1.0);
        let coeffs = vec![alpha; t];
        let a = two_sided_smooth(&labels, &coeffs, &coeffs).map_err(|e| e.to_string())?;
        let b = vanilla_smooth(&labels, alpha).map_err(|e| e.to_string())?;
        check(a.values() == b.values(), || format!("alpha={alpha}: maps differ"))?;
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(1))?;
    Ok(format!("100 matrices bit-identical, {elapsed:.0?}"))
}

fn minority_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let mut checked = 0;
    for f in [0.05, 0.1, 0.3] {
        let positives = (f * n as f64) as usize;
        let labels = LabelMatrix::hard_anonymous(
            Array2::from_shape_vec((n, 1), hard_column(n, positives, &mut rng)).unwrap(),
        )
        .unwrap();
        let freqs = compute_frequencies(&labels).unwrap();
        for beta in [0.1, 0.25, 0.5, 1.0] {
            let smoothed = rhls_smooth(&labels, &freqs, beta).map_err(|e| e.to_string())?;
            for (y, s) in labels.values().iter().zip(smoothed.values()) {
                if *y == 1.0 {
                    check(*s == 1.0, || format!("f={f} beta={beta}: positive became {s}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} positive entries unchanged"))
}

fn objective(params: &ModelParams, x: &Array2<f64>, y: &Array2<f64>, w: &TaskWeights) -> f64 {
    let (logits, _) = forward(params, x.view()).unwrap();
    batch_loss(logits.view(), y.view(), w).unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + instance);
        let config = ModelConfig {
            input_dim: rng.random_range(2..6),
            token_count: rng.random_range(1..4),
            model_dim: rng.random_range(2..5),
            task_count: rng.random_range(1..4),
            seed: instance,
        };
        let params = init_params(&config).unwrap();
        let b = rng.random_range(1..5);
        let x = Array2::from_shape_fn((b, config.input_dim), |_| rng.random_range(-2.0..2.0));
        let y = Array2::from_shape_fn((b, config.task_count), |_| rng.random_range(0.0..=1.0));
        let raw: Vec<f64> = (0..config.task_count).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w = TaskWeights::new(raw.iter().map(|r| r / total).collect()).unwrap();

        let (logits, cache) = forward(&params, x.view()).unwrap();
        let upstream = batch_loss_grad(logits.view(), y.view(), &w).unwrap();
        let grads = backward(&params, &cache, upstream.view()).unwrap();
        for (ti, (name, g)) in grads.tensors().iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].1[i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].1[i] -= h;
                let fd = (objective(&plus, &x, &y, &w) - objective(&minus, &x, &y, &w)) / (2.0 * h);
                // central differences of an O(1) loss carry ~eps*L/h = 1e-11 of rounding
                // noise, so components below 1e-5 are compared against that scale instead
                let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-5);
                worst = worst.max(err);
                entries += 1;
                check(err < 1e-5, || {
                    format!("instance {instance} {name}[{i}]: analytic {} vs numeric {fd}", g[i])
                })?;
            }
        }
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(30))?;
    Ok(format!("{entries} entries, max relative error {worst:.1e}, {elapsed:.0?}"))
}

fn metric_oracle() -> Outcome {
    let bits = |mask: u32| -> Vec<f64> { (0..8).map(|i| f64::from((mask >> i) & 1)).collect() };
    for p in 0..256u32 {
        for l in 0..256u32 {
            let (tp, fp, fn_) = ((p & l).count_ones(), (p & !l).count_ones(), (!p & l).count_ones());
            let expected = if 2 * tp + fp + fn_ == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            let got = f1(&bits(p), &bits(l), 0.5).map_err(|e| e.to_string())?.f1;
            check((got - expected).abs() < 1e-15, || format!("pred {p:08b} label {l:08b}: {got} vs {expected}"))?;
        }
    }
    let w = fw_weights(&TaskFrequencies::new(vec![0.2, 0.2, 0.1]).unwrap());
    for (got, want) in w.iter().zip([0.25, 0.25, 0.5]) {
        check((got - want).abs() < 1e-12, || format!("fw weights {w:?}"))?;
    }
    Ok("65536 patterns, fw weights [0.25, 0.25, 0.5]".into())
}

fn protocol_arithmetic() -> Outcome {
    let config = ExperimentConfig::default();
    check(config.data.synthetic.subjects == 27, || "default has 27 subjects".into())?;
    let dataset = config.load_dataset().map_err(|e| e.to_string())?;
    check(dataset.subjects().len() == 27, || format!("{} subjects", dataset.subjects().len()))?;
    let plan = harness::fold_plan(&config, &dataset).map_err(|e| e.to_string())?;
    check(plan.k() == 3, || format!("k = {}", plan.k()))?;
    let mut all: Vec<String> = plan.folds.concat();
    check(plan.folds.iter().all(|f| f.len() == 9), || format!("{:?}", plan.folds))?;
    all.sort();
    all.dedup();
    check(all == dataset.subjects(), || "folds do not partition the subjects".into())?;

    let runs = plan.nested_runs(6, harness::nested_seed(config.seed)).map_err(|e| e.to_string())?;
    check(runs.len() == 18, || format!("{} nested runs", runs.len()))?;
    let outer = plan.outer_splits();
    for (o, split) in runs {
        let outer_train = &outer[o].train;
        check(split.train.len() + split.held_out.len() == 18, || "inner split size".into())?;
        check(split.held_out.len() == 3, || "validation fold size".into())?;
        check(
            split.train.iter().chain(&split.held_out).all(|s| outer_train.contains(s)),
            || "inner split leaks held-out subjects".into(),
        )?;
        check(split.train.iter().all(|s| !split.held_out.contains(s)), || "inner overlap".into())?;
    }
    Ok("3 folds of 9 subjects, 18 nested runs".into())
}

fn directional_ablation(records: &[RunRecord], elapsed: Duration) -> Outcome {
    let mean = |id: &str| records.iter().find(|r| r.id == id).unwrap().summary.mean;
    let (base, ls, fw, rh) = (mean("baseline"), mean("label_smoothing"), mean("fw_bce"), mean("rhls"));
    let fingerprints: Vec<&str> = records.iter().map(|r| r.fold_fingerprint.as_str()).collect();
    check(fingerprints.windows(2).all(|w| w[0] == w[1]), || format!("fold hashes {fingerprints:?}"))?;
    check(records.iter().all(|r| r.trained_models() == 15), || "expected 15 models per method".into())?;
    let summary = format!(
        "RHLS {:.2} vs Baseline {:.2}, LS {:.2} (FW-BCE {:.2}), {elapsed:.0?}",
        100.0 * rh,
        100.0 * base,
        100.0 * ls,
        100.0 * fw
    );
    check(rh > base && rh > ls, || summary.clone())?;
    within_budget(elapsed, Duration::from_secs(600))?;
    Ok(summary)
}

fn confidence_shift(records: &[RunRecord]) -> Outcome {
    let get = |id: &str| records.iter().find(|r| r.id == id).unwrap();
    let (base, rh) = (get("baseline"), get("rhls"));
    let tasks = base.histograms.len();
    let mut shifted = 0;
    let mut detail = Vec::new();
    for t in 0..tasks {
        let (b, r) = (base.histograms[t].negative[0], rh.histograms[t].negative[0]);
        check(base.histograms[t].negative.len() == HISTOGRAM_BINS, || "bin count".into())?;
        if r < b {
            shifted += 1;
        }
        detail.push(format!("{r}/{b}"));
    }
    let summary = format!("{shifted}/{tasks} tasks (RHLS/baseline first-bin negatives: {})", detail.join(" "));
    check(2 * shifted > tasks, || summary.clone())?;
    Ok(summary)
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.repeats = 2;
    c.data.synthetic.subjects = 6;
    c.data.synthetic.frames_per_subject = 60;
    c.optim.epochs = 2;
    c.protocol.inner_folds = 2;
    c.seed = 11;
    c
}

fn run_all_commands(config_path: &Path, out: &Path) -> Result<(), String> {
    let config = ExperimentConfig::load(config_path).map_err(|e| e.to_string())?;
    harness::cmd_gen(&config, &out.join("gen")).map_err(|e| e.to_string())?;
    harness::cmd_train(&config, &out.join("train")).map_err(|e| e.to_string())?;
    harness::cmd_sweep_beta(&config, &[0.0, 0.5, 1.0], &out.join("sweep")).map_err(|e| e.to_string())?;
    let ablate = out.join("ablate");
    harness::cmd_ablate(&config, &ablate).map_err(|e| e.to_string())?;
    harness::cmd_hist(&ablate.join("runs").join("rhls.json"), &ablate).map_err(|e| e.to_string())?;
    Ok(())
}

fn collect_files(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, root, out);
        } else {
            let key = path.strip_prefix(root).unwrap().display().to_string();
            out.insert(key, fs::read(&path).unwrap());
        }
    }
}

fn without_wall_clock(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_secs");
    v
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config_path = dir.path().join("experiment.toml");
    fs::write(&config_path, small_config().to_toml().unwrap()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_all_commands(&config_path, &a)?;
    run_all_commands(&config_path, &b)?;
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    collect_files(&a, &a, &mut fa);
    collect_files(&b, &b, &mut fb);
    check(fa.keys().eq(fb.keys()), || "different file sets".into())?;
    let mut tables = 0;
    for (name, bytes) in &fa {
        if name.ends_with(".json") {
            check(without_wall_clock(bytes) == without_wall_clock(&fb[name]), || format!("{name} differs"))?;
        } else {
            check(bytes == &fb[name], || format!("{name} differs"))?;
            tables += 1;
        }
    }
    Ok(format!("{tables} tables/reports byte-identical, {} run records equal", fa.len() - tables))
}

fn report(results: &mut Vec<(usize, &'static str, Outcome)>, id: usize, name: &'static str, f: impl FnOnce() -> Outcome) {
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err("panicked".into()));
    match &outcome {
        Ok(msg) => println!("PASS  [{id}] {name}: {msg}"),
        Err(msg) => println!("FAIL  [{id}] {name}: {msg}"),
    }
    results.push((id, name, outcome));
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(&mut results, 1, "analytic identities", analytic_identities);
    report(&mut results, 2, "reduction identity", reduction_identity);
    report(&mut results, 3, "minority preservation", minority_preservation);
    report(&mut results, 4, "gradient correctness", gradient_correctness);
    report(&mut results, 5, "metric oracle", metric_oracle);
    report(&mut results, 6, "protocol arithmetic", protocol_arithmetic);

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let ablation = harness::cmd_ablate(&ExperimentConfig::default(), dir.path());
    let elapsed = start.elapsed();
    match ablation {
        Ok(records) => {
            report(&mut results, 7, "directional ablation", || directional_ablation(&records, elapsed));
            report(&mut results, 8, "confidence shift", || confidence_shift(&records));
        }
        Err(e) => {
            let msg = format!("ablation failed: {e}");
            report(&mut results, 7, "directional ablation", || Err(msg.clone()));
            report(&mut results, 8, "confidence shift", || Err(msg));
        }
    }
    report(&mut results, 9, "determinism", determinism);

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, o)| o.is_err())
        .map(|(id, name, _)| format!("[{id}] {name}"))
        .collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
