//! Dense networks with exact reverse-mode gradients and an Adam optimizer.
//!
//! All math runs in `f64`. Networks are plain data: the forward pass that
//! feeds a backward pass returns an explicit [`ForwardCache`], so there is
//! no hidden state and repeated calls are bit-identical.

mod adam;
mod init;
mod net;
mod trainable;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use init::orthogonal;
pub use net::{Activation, DenseNet, ForwardCache, Gradients, Layer};
pub use trainable::{gradient_check, TrainableNet};
