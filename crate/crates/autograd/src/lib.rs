//! Dense tensors and a reverse-mode differentiation graph that supports
//! gradients of gradients.
//!
//! The operation set is deliberately small: broadcasting arithmetic,
//! reductions, matrix products and NHWC convolutions are enough to express
//! the GAN generators and discriminators in `coloc-core`, including the
//! input-gradient norm used by gradient-penalty regularizers.

mod conv;
mod float;
mod tensor;
mod var;

pub use conv::{conv_backward_data, conv_backward_weight, conv_forward, ConvGeom};
pub use float::Float;
pub use tensor::{broadcast_shape, Tensor};
pub use var::{can_broadcast, grad, Var};
