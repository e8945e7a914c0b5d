//! Minimal reverse-mode differentiable tensor engine.

mod checkpoint;
mod conv;
mod gradcheck;
mod linalg;
mod nn;
mod ops;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use conv::{conv_out_len, Conv3dSpec};
pub use gradcheck::{grad_check, rel_err, CoordCheck, GradCheckConfig, GradCheckReport};
pub use nn::dropout_mask;
pub use params::{Bound, ParamEntry, ParamId, ParamStore};
pub use tensor::{numel_of, BackwardCtx, BackwardFn, Tensor};
