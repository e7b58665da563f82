//! Factor-tuning for small vision transformers.
//!
//! Fine-tunes a frozen transformer backbone by representing all of its d×d
//! weight increments as slices of one virtual M×d×d tensor and training only
//! the lightweight factors of that tensor (Tensor-Train, Tucker, or
//! per-slice matrix-batch low-rank pairs), plus the classification head.
//! After training, factors can be expanded and absorbed back into the dense
//! weights so inference carries no adapter overhead.
//!
//! Crate layout:
//! - [`tensor`]: dense f32 tensors with reverse-mode autodiff
//! - [`factor`]: the three increment factorizations and their algebra
//! - [`model`]: a configurable small ViT plus staged (hierarchical) variant
//! - [`train`]: AdamW fine-tuning loop, baselines, and rank/scale sweeps
//! - [`data`]: synthetic task generator and a raw binary image format
//! - [`checkpoint`]: bit-exact factor checkpoints and backbone containers
//! - [`metrics`]: run metrics files and plot exports

pub mod error;
pub mod factor;
pub mod tensor;

pub use error::{Error, Result};
pub use factor::{FactorFormat, FactorSet, Ranks};
pub use tensor::Tensor;
