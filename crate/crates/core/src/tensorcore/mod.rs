//! Dense f32 tensors and the handful of kernels the network needs, each with
//! an analytic backward rule. All kernels are pure and accumulate in f64.

mod conv;
mod linalg;
mod norm;
mod shape;
mod tensor;

pub use conv::{conv1d_dilated, conv1d_dilated_backward, ConvSpec};
pub use linalg::{dense, dense_backward, matmul, matmul_at, matmul_bt};
pub use norm::{layer_norm, layer_norm_backward, softmax_rows, softmax_rows_backward, LayerNormCache};
pub use shape::{
    avg_pool, avg_pool_backward, concat_cols, concat_rows, mean_rows, relu, relu_backward, scale, slice_cols,
    transpose,
};
pub use tensor::{Scalar, Tensor};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
