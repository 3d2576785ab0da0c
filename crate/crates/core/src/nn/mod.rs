//! Encoder–decoder networks and the three inpainting branches built on them.

mod branches;
mod params;
mod unet;

pub use branches::{
    broadcast_channels, classical_fill, ClassicalFill, GeneratorBranch, PfuForward, PfuNet, PfuOutput, ToyGenerator,
    UafForward, UafNet,
};
pub use params::{Bound, Param, ParamStore};
pub use unet::{Activation, LayerStats, UNet, UNetConfig, UNetOutput};
