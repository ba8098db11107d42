//! Semi-supervised domain adaptation for node classification across two
//! attributed graphs.
//!
//! Each graph is encoded by a sampled-neighborhood (local) view and a
//! diffusion (global) view. A contrastive objective ties the two views
//! together, a cosine classifier is trained on source labels plus a few
//! target labels, and a minimax entropy term aligns the domains.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod classifier;
pub mod config;
pub mod contrastive;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod par;
pub mod report;
pub mod synth;
pub mod trainer;

pub use config::{AblationFlags, Lambda2Mode, TrainConfig};
pub use error::{Error, Result};
pub use graph::{align_attributes, common_attribute_rate, AttributeVocabulary, Graph, Side};
pub use matrix::{CsrMatrix, Matrix};
pub use model::{Domain, Model, TransferTask};
pub use trainer::{run_experiment, run_grid, Divergence, Evaluation, GridCell, RunReport, StepMetrics, Trainer};
