//! Forward operators of the network and their vector-Jacobian products.

pub mod conv;
pub mod layout;
pub mod loss;
pub mod norm;
pub mod resize;
pub mod vjp;

pub use conv::{
    conv2d, conv2d_vjp, depthwise_conv2d, depthwise_conv2d_vjp, ConvGrads, ConvWeight,
    DEPTHWISE_KERNELS,
};
pub use layout::{
    channel_concat, channel_embed, channel_shuffle, channel_slice, channel_split, pixel_shuffle,
    pixel_unshuffle,
};
pub use loss::{l1_loss, l1_loss_vjp};
pub use norm::{layer_norm_channels, layer_norm_vjp, silu, silu_vjp, NormWeight, LAYER_NORM_EPS};
pub use resize::{bicubic_resize, bilinear_resize, Resize};
pub use vjp::{vjp, OpId};
