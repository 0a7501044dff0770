//! Robin Hood label smoothing (RHLS) for imbalanced, noisy multi-task binary
//! classification, with the baselines it is compared against (vanilla label
//! smoothing, frequency-weighted BCE), a small trainable cross-attention
//! model and a subject-exclusive evaluation harness.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod labels;
pub mod loss;
pub mod model;
pub mod optim;
pub mod smoothing;
pub mod train;

pub use error::{Error, Result};
pub use labels::{LabelKind, LabelMatrix};
pub use smoothing::{SmoothingSpec, TaskFrequencies};
