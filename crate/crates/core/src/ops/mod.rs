//! Layer primitives with explicit forward and backward passes.

pub mod adam;
pub mod conv;
pub mod gelu;
pub mod gradcheck;
pub mod layernorm;
pub mod linear;
pub mod loss;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d_backward_batch, conv2d_forward, conv2d_forward_batch, ConvSpec};
pub use gelu::{gelu, gelu_backward, gelu_scalar};
pub use gradcheck::{finite_diff_at, finite_diff_grad, max_relative_error, relative_error};
pub use layernorm::{layernorm, layernorm_backward, layernorm_forward, LnCache, LN_EPS};
pub use linear::{linear_backward, linear_forward};
pub use loss::cross_entropy;
