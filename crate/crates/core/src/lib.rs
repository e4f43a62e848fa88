//! Normalizing flows for the two-flavour lattice Schwinger model.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense tensors with an instrumented reverse-mode autodiff graph.
//! - [`nn`]: circular convolutions, conditioner networks, Adam, clipping.
//! - [`gauge`]: U(1) link fields, plaquettes, Wilson loops, gauge action.
//! - [`dirac`]: Wilson-Dirac operator, fermion determinant, observables.
//! - [`flow`]: masks, circular splines, coupling layers and the flow model.
//! - [`estimators`]: reparameterization and REINFORCE losses, ESS, free energy.
//! - [`sampler`]: Metropolized independent sampling and chain statistics.
//! - [`driver`]: configuration, checkpoints, training, sampling, profiling.

pub mod dirac;
pub mod driver;
pub mod error;
pub mod estimators;
pub mod flow;
pub mod par;
pub mod sampler;
pub mod gauge;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
