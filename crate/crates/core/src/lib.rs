//! Group sequential stepped-wedge cluster randomised trials.
//!
//! Operating characteristics come from multivariate normal rectangle
//! probabilities of the standardised interim statistics ([`oc`]); designs
//! are found by cross-entropy search ([`optimize`]); terminated trials are
//! analysed under the stage-wise ordering ([`analysis`]); and [`sim`]
//! generates trial data to check all of it. [`cli`] is the batch frontend.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod mvnorm;
pub mod oc;
pub mod optimize;
pub mod seeds;
pub mod sim;

pub use error::{Error, Result};
