//! Tensors and the convolution kernels a MobileNetV2-style detector needs,
//! in a float reference form and an integer fixed-point form.

pub mod fixed;
pub mod float;
mod pad;
mod tensor;

pub use fixed::{
    add_fixed, channel_affine_fixed, concat_channels_fixed, conv2d_fixed, conv2d_fixed_bias,
    depthwise_conv2d_fixed, relu6_fixed, requantize_tensor, upsample2x_fixed,
};
pub use float::{
    add, batch_norm, channel_affine, concat_channels, conv2d, conv2d_bias, conv2d_macs,
    depthwise_conv2d, depthwise_macs, fold_batch_norm, relu6, resize_bilinear, resize_by, scaled_extent,
    upsample2x_bilinear,
};
pub use pad::{pad2d, pad_to_multiple, PadSpec, Padding};
pub use tensor::{QTensor, Tensor};
