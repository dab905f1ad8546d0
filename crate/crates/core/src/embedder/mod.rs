//! Residual embedding network built from multi-length convolution layers and
//! global average pooling.
//!
//! Each block runs `[conv -> BN -> ReLU] x (convs_per_block - 1)`, then
//! `conv -> BN`, adds the block input (through a 1x1 conv + BN projection when
//! the channel count changes) and applies a final ReLU.

mod arch;
pub mod checkpoint;
mod model;

pub use arch::ArchSpec;
pub use model::{ForwardCache, FreezeSelector, ResNetModel};
