//! Radiation fault simulation for convolutional segmentation models.
//!
//! Weights can be hit by single IEEE-754 bit-flips ([`bitflip`]) and input
//! images by sensor disturbances ([`disturbance`]); [`campaign`] sweeps both
//! deterministically and scores the results with [`metrics`].

pub mod bitflip;
pub mod bundle;
pub mod campaign;
pub mod cli;
pub mod disturbance;
pub mod format;
pub mod graph;
pub mod metrics;
pub mod reference;
pub mod rng;
pub mod tensor;

pub use bundle::WeightBundle;
pub use tensor::Tensor;
