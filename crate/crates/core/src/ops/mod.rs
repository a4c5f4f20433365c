//! Convolution variants with forward and backward rules.

pub mod bilinear;
pub mod conv;
pub mod ddc;
mod init;
pub mod involution;
pub mod patch;

pub use bilinear::{bilinear_sample, Corners};
pub use conv::{conv_flops, Conv, ConvDims, ConvSpec};
pub use ddc::{ddc_flops, DdcLayer};
pub use init::uniform_fan_in;
pub use involution::{involution_flops, Involution3d, StaticKernelConv};
pub use patch::{check_divisible, pixel_shuffle, pixel_shuffle_tensor, PatchBack, PatchEmbed};
