//! Minibatch training of one model on one training split.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{batch_loss, batch_loss_grad, LossSpec};
use crate::model::{backward, forward, init_params, predict, ModelConfig, ModelParams};
use crate::optim::{AdamW, OptimConfig, OptimState};
use crate::smoothing::{compute_frequencies, SmoothingSpec, TaskFrequencies};

/// Per-feature standardisation fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(features: ArrayView2<'_, f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean = features.mean_axis(Axis(0)).expect("non-empty");
        let scale = features.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        (&features - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub smoothing: SmoothingSpec,
    pub loss: LossSpec,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub standardizer: Standardizer,
    /// Frequencies of the observed training labels.
    pub frequencies: TaskFrequencies,
    /// Column means of the smoothed training targets.
    pub smoothed_means: Vec<f64>,
    /// Mean minibatch loss over the final epoch.
    pub final_loss: f64,
}

impl TrainedModel {
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        predict(&self.params, self.standardizer.apply(features).view())
    }
}

/// Fits a fresh model on `train`. Everything derived from labels
/// (frequencies, smoothing, loss weights) comes from these rows only.
pub fn fit(train: &Dataset, setup: &TrainSetup, seed: u64) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model_cfg = ModelConfig {
        input_dim: train.input_dim(),
        task_count: train.task_count(),
        seed,
        ..setup.model
    };
    let labels = &train.observed_labels;
    let frequencies = compute_frequencies(labels)?;
    let targets = setup.smoothing.apply(labels, Some(&frequencies))?;
    let weights = setup.loss.weights(train.task_count(), Some(&frequencies))?;
    let standardizer = Standardizer::fit(train.features.view())?;
    let x = standardizer.apply(train.features.view());

    let mut params = init_params(&model_cfg)?;
    let optimizer = AdamW::new(setup.optim, &model_cfg)?;
    let mut state = OptimState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = 0.0;

    for _ in 0..setup.optim.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(setup.optim.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = targets.values().select(Axis(0), batch);
            let (logits, cache) = forward(&params, xb.view())?;
            epoch_loss += batch_loss(logits.view(), yb.view(), &weights)?;
            batches += 1;
            let upstream = batch_loss_grad(logits.view(), yb.view(), &weights)?;
            let grads = backward(&params, &cache, upstream.view())?;
            optimizer.step(&mut params, &grads, &mut state)?;
        }
        final_loss = epoch_loss / batches as f64;
        state.next_epoch();
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("trained parameters"));
    }

    Ok(TrainedModel {
        params,
        standardizer,
        frequencies,
        smoothed_means: targets.column_means(),
        final_loss,
    })
}
