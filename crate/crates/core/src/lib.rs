//! Rewards and evaluation metrics for image-quality feedback (scores, flaw
//! heatmaps and flaw boxes), plus pixel-level GRPO objectives checked on a toy
//! Gaussian flow policy.

pub mod cli;
pub mod denseflow;
pub mod error;
pub mod geometry;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod parser;
pub mod rewards;
pub mod types;
pub mod verifier;

pub use error::{Error, Result};
pub use types::{BoundingBox, EvaluationRecord, Heatmap, ScoreVector};
