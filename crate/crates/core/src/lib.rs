//! Convolutional object-recognition engine for a camera-driven blind aid.
//!
//! The crate is organised as the frame pipeline runs:
//!
//! 1. [`vision`] decodes PPM frames, resizes them to the network resolution and
//!    produces `[C,H,W]` input tensors.
//! 2. [`network`] builds a CNN from a declarative [`network::NetworkConfig`],
//!    runs it forward and trains it at toy scale with plain SGD.
//!    The per-layer math lives in [`layers`], on top of [`tensor`].
//! 3. [`detect`] turns the grid head output into normalised boxes and applies
//!    per-class non-maximum suppression.
//! 4. [`assist`] renders a frame's detections as canonical JSON, Grade-1
//!    braille and a short spoken phrase.
//!
//! [`eval`] computes top-1 accuracy and PASCAL-style average precision, and
//! [`shapes`] generates the synthetic dataset used for toy training.

pub mod assist;
pub mod detect;
pub mod error;
pub mod eval;
pub mod layers;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod shapes;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
