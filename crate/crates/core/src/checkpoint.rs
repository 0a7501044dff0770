//! Plain-text parameter checkpoints.
//!
//! ```text
//! rhls-checkpoint v1
//! config <input_dim> <token_count> <model_dim> <task_count> <seed>
//! tensor <name> <dim0> [<dim1>]
//! <space-separated values, row-major>
//! ...
//! ```
//!
//! Tensors appear in the fixed order of [`crate::model::TENSOR_NAMES`].
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

const MAGIC: &str = "rhls-checkpoint v1";

pub fn to_string(params: &ModelParams) -> String {
    let c = params.config;
    let mut out = format!(
        "{MAGIC}\nconfig {} {} {} {} {}\n",
        c.input_dim, c.token_count, c.model_dim, c.task_count, c.seed
    );
    for ((name, shape), (_, values)) in params.shapes().iter().zip(params.tensors()) {
        let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
        let vals: Vec<String> = values.iter().map(f64::to_string).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_str(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header line"));
    }
    let cfg_line = lines.next().ok_or_else(|| bad("missing config line"))?;
    let nums: Vec<u64> = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| bad("malformed config line"))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad(format!("bad config value `{v}`"))))
        .collect::<Result<_>>()?;
    let [input_dim, token_count, model_dim, task_count, seed] = nums[..] else {
        return Err(bad("config line needs five values"));
    };
    let config = ModelConfig {
        input_dim: input_dim as usize,
        token_count: token_count as usize,
        model_dim: model_dim as usize,
        task_count: task_count as usize,
        seed,
    };
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    let shapes = params.shapes();
    for ((name, shape), (_, slot)) in shapes.iter().zip(params.tensors_mut()) {
        let header = lines.next().ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name) {
            return Err(bad(format!("expected tensor {name}, found `{header}`")));
        }
        let dims: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| bad(format!("bad dimension `{d}`"))))
            .collect::<Result<_>>()?;
        if &dims != shape {
            return Err(bad(format!("{name}: shape {dims:?} does not match config {shape:?}")));
        }
        let body = lines.next().ok_or_else(|| bad(format!("missing values for {name}")))?;
        let values: Vec<f64> = body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(format!("{name}: bad value `{v}`"))))
            .collect::<Result<_>>()?;
        if values.len() != slot.len() {
            return Err(bad(format!("{name}: expected {} values, got {}", slot.len(), values.len())));
        }
        slot.copy_from_slice(&values);
    }
    params.version = 0;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_str(&std::fs::read_to_string(path)?)
}
