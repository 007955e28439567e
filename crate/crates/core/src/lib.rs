//! Gather-scatter balanced sparsity: pattern checks, magnitude pruners, a
//! bank-balanced sparse format, reference kernels and a bank-conflict cost
//! model.

pub mod error;
pub mod exec;
mod fileio;
pub mod format;
pub mod kernels;
pub mod patterns;
pub mod pruner;
pub mod tcm;
pub mod tensor;

pub use error::{GsError, Result};
pub use exec::Exec;
pub use format::{decode, encode, group_mask, load_gssf, save_gssf, GsBsrMatrix};
pub use patterns::{ConvGeometry, Family, MaskMatrix, PatternDescriptor};
pub use pruner::{prune, GroupedMask, ThresholdSpec};
pub use tensor::{load_tensor, save_tensor, DType, DenseTensor};
