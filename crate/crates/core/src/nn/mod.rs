//! Building blocks for the coupling-layer conditioners.

mod conditioner;
mod conv;
mod optim;
mod registry;

pub use conditioner::{Conditioner, LEAKY_SLOPE};
pub use conv::{conv2d_circular, Conv2dLayer, KERNEL};
pub use optim::{clip_grad_norm, grad_norm, Adam, AdamConfig};
pub use registry::ParamRegistry;
