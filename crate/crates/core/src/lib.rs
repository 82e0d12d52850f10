//! Simulation and iterative subspace detection/localization of multiple
//! targets in a distributed MIMO radar whose waveforms have non-ideal auto-
//! and cross-correlations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod calibration;
pub mod config;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod scene;
pub mod seeds;
pub mod subspace;
pub mod waveform;

pub use error::{Error, Result};
