//! Off-resonance simulation and correction for spiral real-time MRI.
//!
//! The crate covers the full experiment: spiral trajectories, a
//! discrete-object signal model with field-map phase, classical corrections
//! (multi-frequency interpolation and iterative reconstruction), an
//! attention-gated residual CNN trained from scratch, image-quality metrics,
//! a synthetic phantom data pipeline, and the command-line front end.

pub mod classical;
pub mod cli;
pub mod datagen;
pub mod encoder;
pub mod nn;
pub mod quality;
pub mod spiral;
pub mod tensors;
