mod activation;
mod conv;
pub(crate) mod elementwise;
mod layout;
mod norm;
mod pool;

pub use activation::{leaky_relu, log_softmax_channel, sigmoid, softmax_channel};
pub use conv::{conv2d, depthwise_conv2d, transposed_conv2x2, Conv2dOptions};
pub use elementwise::{add, affine_scalar, div, mean_all, mean_axes, mul, sub, sum_all, sum_axes};
pub use layout::{concat_channels, crop_top_left, index_select_channels, pad_bottom_right, patch_partition, reshape};
pub use norm::layernorm;
pub use pool::{avgpool_global, maxpool2x2};
