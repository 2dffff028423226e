//! Minimal reverse-mode differentiation engine and layer toolkit.
//!
//! Everything runs on `f64` [`ndarray`] arrays recorded on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar node yields gradients for every recorded
//! tensor. The engine is single-threaded and fully deterministic, which the
//! trainer relies on for bit-identical reruns and resumable checkpoints.

mod adam;
mod conv;
#[cfg(test)]
mod gradcheck;
mod layers;
mod ops;
mod params;
mod tape;

pub use adam::Adam;
pub use layers::{
    Conv2dLayer, Conv3dLayer, Ctx, LayerNormSeq, Linear, NormLayer, ResBlock2d, ResBlock3d,
    TemporalConv,
};
pub use params::{ParamStore, init};
pub use tape::{Gradients, Tape, TensorId};
