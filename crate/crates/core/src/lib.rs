//! Joint predictive filtering and generative image inpainting.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the pixel-adaptive
//! filtering and fusion operators ([`filter`]), the UNet branches ([`nn`]), two-stage
//! training ([`train`]), data synthesis ([`data`]) and evaluation ([`eval`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod filter;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
