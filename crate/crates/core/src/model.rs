//! Toy multi-task cross-attention classifier.
//!
//! ```text
//! x (B x D) --affine--> P tokens of width d
//! task queries (T x d) --W_q--> Q        tokens --W_k--> K, --W_v--> V
//! A[b, t, :] = softmax_p(Q[t] . K[b, p] / sqrt(d))
//! O[b, t]    = sum_p A[b, t, p] V[b, p]
//! logit[b,t] = head_w[t] . O[b, t] + head_b[t]
//! ```
//!
//! Forward and backward passes are written out by hand in double precision.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub token_count: usize,
    pub model_dim: usize,
    pub task_count: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            token_count: 8,
            model_dim: 16,
            task_count: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.token_count == 0 || self.model_dim == 0 || self.task_count == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Which learning-rate group a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Transformer,
}

/// All trainable tensors. Gradients and optimizer moments reuse this layout.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder_w: Array2<f64>,
    pub encoder_b: Array1<f64>,
    pub queries: Array2<f64>,
    pub query_w: Array2<f64>,
    pub query_b: Array1<f64>,
    pub key_w: Array2<f64>,
    pub key_b: Array1<f64>,
    pub value_w: Array2<f64>,
    pub value_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    /// Bumped on every in-place update so a forward cache can detect staleness.
    pub(crate) version: u64,
}

pub type ParamGrads = ModelParams;

// equality ignores `version`
impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors() == other.tensors()
    }
}

pub const TENSOR_NAMES: [&str; 11] = [
    "encoder.weight",
    "encoder.bias",
    "queries",
    "attn.query.weight",
    "attn.query.bias",
    "attn.key.weight",
    "attn.key.bias",
    "attn.value.weight",
    "attn.value.bias",
    "head.weight",
    "head.bias",
];

pub fn group_of(name: &str) -> ParamGroup {
    if name.starts_with("encoder.") {
        ParamGroup::Encoder
    } else {
        ParamGroup::Transformer
    }
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let ModelConfig {
            input_dim: dx,
            token_count: p,
            model_dim: d,
            task_count: t,
            ..
        } = config;
        Self {
            config,
            encoder_w: Array2::zeros((dx, p * d)),
            encoder_b: Array1::zeros(p * d),
            queries: Array2::zeros((t, d)),
            query_w: Array2::zeros((d, d)),
            query_b: Array1::zeros(d),
            key_w: Array2::zeros((d, d)),
            key_b: Array1::zeros(d),
            value_w: Array2::zeros((d, d)),
            value_b: Array1::zeros(d),
            head_w: Array2::zeros((t, d)),
            head_b: Array1::zeros(t),
            version: 0,
        }
    }

    /// Tensors in [`TENSOR_NAMES`] order, flattened row-major.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 11] {
        fn flat(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are kept in standard layout")
        }
        [
            (TENSOR_NAMES[0], flat(self.encoder_w.as_slice())),
            (TENSOR_NAMES[1], flat(self.encoder_b.as_slice())),
            (TENSOR_NAMES[2], flat(self.queries.as_slice())),
            (TENSOR_NAMES[3], flat(self.query_w.as_slice())),
            (TENSOR_NAMES[4], flat(self.query_b.as_slice())),
            (TENSOR_NAMES[5], flat(self.key_w.as_slice())),
            (TENSOR_NAMES[6], flat(self.key_b.as_slice())),
            (TENSOR_NAMES[7], flat(self.value_w.as_slice())),
            (TENSOR_NAMES[8], flat(self.value_b.as_slice())),
            (TENSOR_NAMES[9], flat(self.head_w.as_slice())),
            (TENSOR_NAMES[10], flat(self.head_b.as_slice())),
        ]
    }

    /// Mutable view of every tensor. Marks the parameters as modified.
    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 11] {
        self.version += 1;
        fn flat(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameters are kept in standard layout")
        }
        [
            (TENSOR_NAMES[0], flat(self.encoder_w.as_slice_mut())),
            (TENSOR_NAMES[1], flat(self.encoder_b.as_slice_mut())),
            (TENSOR_NAMES[2], flat(self.queries.as_slice_mut())),
            (TENSOR_NAMES[3], flat(self.query_w.as_slice_mut())),
            (TENSOR_NAMES[4], flat(self.query_b.as_slice_mut())),
            (TENSOR_NAMES[5], flat(self.key_w.as_slice_mut())),
            (TENSOR_NAMES[6], flat(self.key_b.as_slice_mut())),
            (TENSOR_NAMES[7], flat(self.value_w.as_slice_mut())),
            (TENSOR_NAMES[8], flat(self.value_b.as_slice_mut())),
            (TENSOR_NAMES[9], flat(self.head_w.as_slice_mut())),
            (TENSOR_NAMES[10], flat(self.head_b.as_slice_mut())),
        ]
    }

    pub fn shapes(&self) -> [(&'static str, Vec<usize>); 11] {
        let dims = [
            self.encoder_w.shape(),
            self.encoder_b.shape(),
            self.queries.shape(),
            self.query_w.shape(),
            self.query_b.shape(),
            self.key_w.shape(),
            self.key_b.shape(),
            self.value_w.shape(),
            self.value_b.shape(),
            self.head_w.shape(),
            self.head_b.shape(),
        ];
        std::array::from_fn(|i| (TENSOR_NAMES[i], dims[i].to_vec()))
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Seeded initialisation: affine weights ~ N(0, 1/fan_in), task queries ~ N(0, 1), biases zero.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(*config);
    let d = config.model_dim;
    let mut fill = |a: &mut Array2<f64>, std: f64| {
        let normal = Normal::new(0.0, std).expect("positive scale");
        a.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    };
    fill(&mut params.encoder_w, 1.0 / (config.input_dim as f64).sqrt());
    fill(&mut params.queries, 1.0);
    let attn_scale = 1.0 / (d as f64).sqrt();
    fill(&mut params.query_w, attn_scale);
    fill(&mut params.key_w, attn_scale);
    fill(&mut params.value_w, attn_scale);
    fill(&mut params.head_w, attn_scale);
    Ok(params)
}

/// Intermediates kept from [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    config: ModelConfig,
    x: Array2<f64>,
    /// (B*P) x d encoder tokens.
    tokens: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// B x T x P attention weights.
    attn: Array3<f64>,
    /// B x T x d attended representations.
    attended: Array3<f64>,
}

impl ForwardCache {
    pub fn attention(&self) -> &Array3<f64> {
        &self.attn
    }

    pub fn attended(&self) -> &Array3<f64> {
        &self.attended
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.v
    }
}

pub fn forward(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
    let cfg = params.config;
    let (p, d, t) = (cfg.token_count, cfg.model_dim, cfg.task_count);
    if x.ncols() != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            what: "model input",
            expected: (x.nrows(), cfg.input_dim),
            got: x.dim(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input"));
    }
    let batch = x.nrows();
    let scale = 1.0 / (d as f64).sqrt();

    let encoded = x.dot(&params.encoder_w) + &params.encoder_b;
    let tokens = encoded
        .into_shape_with_order((batch * p, d))
        .expect("encoder output is contiguous");
    let q = params.queries.dot(&params.query_w) + &params.query_b;
    let k = tokens.dot(&params.key_w) + &params.key_b;
    let v = tokens.dot(&params.value_w) + &params.value_b;

    // (B*P) x T
    let scores = k.dot(&q.t());
    let mut attn = Array3::zeros((batch, t, p));
    let mut attended = Array3::zeros((batch, t, d));
    let mut logits = Array2::zeros((batch, t));
    for b in 0..batch {
        let rows = s![b * p..(b + 1) * p, ..];
        let block = scores.slice(rows);
        let mut a_b = attn.index_axis_mut(Axis(0), b);
        for task in 0..t {
            let col = block.column(task);
            let max = col.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
            let mut total = 0.0;
            for (slot, &s) in a_b.row_mut(task).iter_mut().zip(col) {
                *slot = (s * scale - max).exp();
                total += *slot;
            }
            a_b.row_mut(task).mapv_inplace(|e| e / total);
        }
        let o_b = a_b.dot(&v.slice(rows));
        for task in 0..t {
            logits[[b, task]] = o_b.row(task).dot(&params.head_w.row(task)) + params.head_b[task];
        }
        attended.index_axis_mut(Axis(0), b).assign(&o_b);
    }

    let cache = ForwardCache {
        version: params.version,
        config: cfg,
        x: x.to_owned(),
        tokens,
        q,
        k,
        v,
        attn,
        attended,
    };
    Ok((logits, cache))
}

/// Gradients of `sum(grad_logits * logits)` with respect to every parameter.
pub fn backward(params: &ModelParams, cache: &ForwardCache, grad_logits: ArrayView2<'_, f64>) -> Result<ParamGrads> {
    let cfg = params.config;
    if cache.version != params.version || cache.config != cfg {
        return Err(Error::StaleCache);
    }
    let batch = cache.x.nrows();
    if grad_logits.dim() != (batch, cfg.task_count) {
        return Err(Error::ShapeMismatch {
            what: "logit gradient",
            expected: (batch, cfg.task_count),
            got: grad_logits.dim(),
        });
    }
    let (p, d, t) = (cfg.token_count, cfg.model_dim, cfg.task_count);
    let scale = 1.0 / (d as f64).sqrt();
    let mut grads = ModelParams::zeros(cfg);

    grads.head_b = grad_logits.sum_axis(Axis(0));
    let mut dk = Array2::zeros((batch * p, d));
    let mut dv = Array2::zeros((batch * p, d));
    let mut dq = Array2::<f64>::zeros((t, d));
    for b in 0..batch {
        let rows = s![b * p..(b + 1) * p, ..];
        let o_b = cache.attended.index_axis(Axis(0), b);
        let a_b = cache.attn.index_axis(Axis(0), b);
        let g_b = grad_logits.row(b);

        // T x d gradient flowing into the attended representations
        let mut do_b = params.head_w.clone();
        for (task, mut row) in do_b.rows_mut().into_iter().enumerate() {
            row *= g_b[task];
            grads.head_w.row_mut(task).scaled_add(g_b[task], &o_b.row(task));
        }

        let v_b = cache.v.slice(rows);
        let da_b = do_b.dot(&v_b.t());
        dv.slice_mut(rows).assign(&a_b.t().dot(&do_b));

        let mut ds_b = Array2::zeros((t, p));
        for task in 0..t {
            let a = a_b.row(task);
            let da = da_b.row(task);
            let inner = a.dot(&da);
            for j in 0..p {
                ds_b[[task, j]] = a[j] * (da[j] - inner) * scale;
            }
        }
        dq += &ds_b.dot(&cache.k.slice(rows));
        dk.slice_mut(rows).assign(&ds_b.t().dot(&cache.q));
    }

    grads.key_w = cache.tokens.t().dot(&dk);
    grads.key_b = dk.sum_axis(Axis(0));
    grads.value_w = cache.tokens.t().dot(&dv);
    grads.value_b = dv.sum_axis(Axis(0));
    grads.query_w = params.queries.t().dot(&dq);
    grads.query_b = dq.sum_axis(Axis(0));
    grads.queries = dq.dot(&params.query_w.t());

    let dtokens = dk.dot(&params.key_w.t()) + dv.dot(&params.value_w.t());
    let dencoded = dtokens
        .into_shape_with_order((batch, p * d))
        .expect("token gradient is contiguous");
    grads.encoder_w = cache.x.t().dot(&dencoded);
    grads.encoder_b = dencoded.sum_axis(Axis(0));
    Ok(grads)
}

/// Sigmoid probabilities for a batch of inputs.
pub fn predict(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (logits, _) = forward(params, x)?;
    Ok(logits.mapv(crate::loss::sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            token_count: 3,
            model_dim: 4,
            task_count: 2,
            seed,
        }
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::default();
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let other = ModelConfig { seed: 1, ..cfg };
        assert_ne!(init_params(&cfg).unwrap().encoder_w, init_params(&other).unwrap().encoder_w);
    }

    #[test]
    fn default_parameter_count() {
        // encoder 32*128 + 128, queries 8*16, attention 3*(16*16 + 16), heads 8*(16 + 1)
        let params = init_params(&ModelConfig::default()).unwrap();
        assert_eq!(params.param_count(), 4224 + 128 + 816 + 136);
        assert_eq!(params.param_count(), 5304);
    }

    #[test]
    fn init_biases_are_zero() {
        let params = init_params(&ModelConfig::default()).unwrap();
        for (name, t) in params.tensors() {
            if name.ends_with(".bias") {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn zero_paths_give_head_biases() {
        let cfg = small_config(3);
        let mut params = init_params(&cfg).unwrap();
        params.value_w.fill(0.0);
        params.head_b = Array1::from(vec![0.3, -0.7]);
        let x = Array2::zeros((1, cfg.input_dim));
        let (logits, _) = forward(&params, x.view()).unwrap();
        assert_eq!(logits.row(0).to_vec(), vec![0.3, -0.7]);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = small_config(4);
        let params = init_params(&cfg).unwrap();
        let x = random_input(6, cfg.input_dim, 1);
        let (_, cache) = forward(&params, x.view()).unwrap();
        for row in cache.attention().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn permuting_tokens_leaves_logits_unchanged() {
        let cfg = small_config(5);
        let params = init_params(&cfg).unwrap();
        let x = random_input(4, cfg.input_dim, 2);
        let (logits, _) = forward(&params, x.view()).unwrap();

        let perm = [2usize, 0, 1];
        let d = cfg.model_dim;
        let mut permuted = params.clone();
        for (dst, &src) in perm.iter().enumerate() {
            permuted
                .encoder_w
                .slice_mut(s![.., dst * d..(dst + 1) * d])
                .assign(&params.encoder_w.slice(s![.., src * d..(src + 1) * d]));
            permuted
                .encoder_b
                .slice_mut(s![dst * d..(dst + 1) * d])
                .assign(&params.encoder_b.slice(s![src * d..(src + 1) * d]));
        }
        let (again, _) = forward(&permuted, x.view()).unwrap();
        for (a, b) in logits.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_width_is_checked() {
        let params = init_params(&small_config(0)).unwrap();
        let x = Array2::zeros((2, 7));
        assert!(matches!(forward(&params, x.view()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = small_config(6);
        let params = init_params(&cfg).unwrap();
        let x = random_input(3, cfg.input_dim, 3);
        let (_, cache) = forward(&params, x.view()).unwrap();
        let grads = backward(&params, &cache, Array2::zeros((3, 2)).view()).unwrap();
        for (_, g) in grads.tensors() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn head_gradients_are_isolated_per_task() {
        let cfg = small_config(7);
        let params = init_params(&cfg).unwrap();
        let x = random_input(3, cfg.input_dim, 4);
        let (_, cache) = forward(&params, x.view()).unwrap();
        let mut upstream = random_input(3, 2, 5);
        upstream.column_mut(1).fill(0.0);
        let grads = backward(&params, &cache, upstream.view()).unwrap();
        assert!(grads.head_w.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(grads.head_b[1], 0.0);
        assert!(grads.head_w.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let cfg = small_config(8);
        let mut params = init_params(&cfg).unwrap();
        let x = random_input(2, cfg.input_dim, 6);
        let (_, cache) = forward(&params, x.view()).unwrap();
        params.tensors_mut()[0].1[0] += 1.0;
        let upstream = Array2::ones((2, 2));
        assert!(matches!(backward(&params, &cache, upstream.view()), Err(Error::StaleCache)));

        let (_, cache) = forward(&params, x.view()).unwrap();
        assert!(backward(&params, &cache, Array2::ones((3, 2)).view()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let cfg = small_config(seed);
            let params = init_params(&cfg).unwrap();
            let x = random_input(3, cfg.input_dim, 100 + seed);
            let upstream = random_input(3, cfg.task_count, 200 + seed);
            let objective = |p: &ModelParams| (forward(p, x.view()).unwrap().0 * &upstream).sum();
            let (_, cache) = forward(&params, x.view()).unwrap();
            let grads = backward(&params, &cache, upstream.view()).unwrap();

            let h = 1e-4;
            for (ti, (name, g)) in grads.tensors().iter().enumerate() {
                for i in 0..g.len() {
                    let mut plus = params.clone();
                    plus.tensors_mut()[ti].1[i] += h;
                    let mut minus = params.clone();
                    minus.tensors_mut()[ti].1[i] -= h;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                    let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
                    assert!(err < 1e-5, "{name}[{i}]: analytic {} vs fd {}", g[i], fd);
                }
            }
        }
    }
}
