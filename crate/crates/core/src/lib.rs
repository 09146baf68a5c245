//! Light-field compression with an implicit neural representation.
//!
//! A light field is stored as the weights of a small network that maps an
//! angular coordinate `(u, v)` to the corresponding sub-aperture image. The
//! network is overfitted to the field, pruned, quantized and entropy coded
//! into a bitstream that can reconstruct the whole field or any single view.

pub mod autodiff;
pub mod codec;
pub mod io;
pub mod lightfield;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use lightfield::{AngularCoord, LightField, Sai};
