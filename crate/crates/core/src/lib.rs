//! Affect-conditioned multi-codebook music generation on a synthetic
//! video/music world.
//!
//! The pipeline: a frozen backbone plus a small probe reads a per-second
//! valence/arousal trajectory from pseudo-video; a semantic anchor captures
//! global style; an adapter lifts the trajectory to token rate and injects it
//! into the shallow layers of an autoregressive decoder; long videos are
//! handled window by window with token-prefix continuation.
//!
//! Core math is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the precision used by the command-line tools.

pub mod adapter;
pub mod anchor;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod longform;
pub mod nn;
pub mod params;
pub mod probe;
pub mod rng;
mod scalar;
pub mod synth;
pub mod trajectory;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used for training and inference by the tools.
pub type Real = f32;

pub type Adapter = adapter::AdapterParams<Real>;
pub type AnchorEncoder = anchor::AnchorEncoder<Real>;
pub type ProbeHead = probe::ProbeHead<Real>;
pub type FrozenBackbone = probe::FrozenBackbone<Real>;
pub type Backbone = decoder::Backbone<Real>;
pub type ControlBranch = decoder::ControlBranch<Real>;
