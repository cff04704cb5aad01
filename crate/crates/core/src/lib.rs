//! Simulation and detection library for intensity-modulated, directly detected
//! optical links impaired by chromatic dispersion.
//!
//! The photodetected signal of a dispersive link is exactly a second-order
//! Volterra series in the transmitted symbols. [`volterra`] extracts those
//! kernels, re-expresses them over mutually orthogonal kernels with a pivoted
//! least-squares procedure, and measures how much signal each truncated model
//! keeps. [`receiver`] builds maximum-likelihood sequence detectors on top of
//! the orthogonal model, and [`harness`] runs the Monte-Carlo experiments.

pub mod channel;
pub mod error;
pub mod harness;
pub mod receiver;
pub mod signal;
pub mod volterra;

pub use channel::{Constellation, LinkConfig, Modulation};
pub use error::{Error, Result};
pub use harness::{BerPoint, ExperimentConfig, SmseReport};
pub use receiver::{Design, MuTable, TrellisSpec};
pub use signal::{GridSpec, RealSignal, SampledSignal};
pub use volterra::{BStreams, KernelSet, OrthoKernelSet, PivotOrder, ShiftSpec};
