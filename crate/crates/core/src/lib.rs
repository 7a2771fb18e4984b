//! Knowledge distillation from a multimodal heatmap teacher into a
//! pose-only graph-attention student that stays accurate when body
//! keypoints go missing.

mod error;

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corruption;
pub mod distill;
pub mod eval;
pub mod heads;
pub mod heatmap;
pub mod nn;
pub mod pose;
pub mod seed;
pub mod student;
pub mod teacher;
pub mod tensor;

pub use error::{Error, Result};
