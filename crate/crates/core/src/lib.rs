//! Open-set recognition laboratory.
//!
//! * [`synthdata`] renders the circle/rectangle protocols used by the
//!   controlled experiments.
//! * [`nn`] is a small fixed-architecture CNN with hand-written backprop.
//! * [`supcon`] holds the supervised contrastive loss, its pair gradients,
//!   augmentations and the temperature/gradient curve simulator.
//! * [`osr`] scores samples as inliers or outliers and aggregates scores over
//!   several representations.
//! * [`metrics`] computes AUROC, OSCR, openness and accuracy.
//! * [`harness`] wires everything into reproducible experiments.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod osr;
pub mod seed;
pub mod supcon;
pub mod synthdata;

pub use error::{Error, Result};
