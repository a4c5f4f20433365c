//! Deformable dynamic convolution network (DDCN) for next-step prediction on
//! grid-shaped spatio-temporal traffic data.
//!
//! Data flows `(B, T, C, H, W) → (B, C, H, W)`: patch embedding, a stack of
//! encoder blocks (spatio-temporal involution attention, spatial deformable
//! dynamic convolution attention, pointwise feed-forward), and patch back.

pub mod cli;
pub mod data;
pub mod error;
pub mod numerics;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod profile;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use numerics::{ParamSet, Scalar, Tape, Tensor, Var};
