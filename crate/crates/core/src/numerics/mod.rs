//! Tensor kernels, layer primitives and statistics.

mod nn;
pub mod stats;
mod tensor;

pub use nn::{
    activation, bilinear_resize, conv2d, dense, pool2d, sigmoid, Activation, ConvGeometry,
    PoolMode, Pooled,
};
pub(crate) use nn::{dense_raw, dense_transpose};
pub use stats::{
    gini_index, histogram_entropy, pearson_corr, ssim, wilcoxon_signed_rank, StatResult,
};
pub use tensor::Tensor;
