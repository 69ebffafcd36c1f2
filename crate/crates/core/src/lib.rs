//! Spatial moment pooling.
//!
//! SMP(n) generalizes spatial average pooling: each pooling window emits its
//! mean and its central moments of orders 2..n, concatenated along channels.
//! The crate provides the forward operator, analytic backward passes, the
//! normalizations used to keep orders >= 3 trainable, a finite-difference
//! gradient checker and a multiply-accumulate cost model.

pub mod error;
pub mod exec;
pub mod grad;
pub mod moments;
pub mod normalize;
pub mod rng;
pub mod smp;
pub mod tensor;
pub mod windows;

pub use error::{Error, Result};
pub use exec::Exec;
pub use moments::{central_moments, moment_gradients, MomentVector};
pub use normalize::{BatchNormState, NormAxis, NormGroup, NormKind};
pub use smp::{op_cost, sap_forward, smp_forward, BatchNormMode, MomentSpec, OpCostReport, Smp, SmpTrace};
pub use tensor::{has_nonfinite, tensor_read, tensor_write, Tensor};
pub use windows::{col2im_accumulate, im2col, output_dims, PoolSpec, WindowMatrix};
