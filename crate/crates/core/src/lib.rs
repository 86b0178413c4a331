//! Age estimation with a patch-fusion convolutional network.
//!
//! The pipeline has three stages:
//!
//! 1. [`bif`] scores every candidate 24×24 face patch with a Gabor filter
//!    bank, and [`select`] runs multi-class AdaBoost over those scores to
//!    pick the most age-informative, non-overlapping patches.
//! 2. [`model`] builds the fusion network: a residual CNN over the whole
//!    face that concatenates a small feature map computed from each
//!    selected patch into successive stages.
//! 3. [`train`] fits the network with SGD and evaluates it with mean
//!    absolute error and cumulative scores, using either the argmax or the
//!    expected-age head.
//!
//! [`tensor`] and [`nn`] provide the numeric substrate, [`data`] handles
//! datasets, and [`config`] / [`pipeline`] tie everything together for
//! the command-line driver.

pub mod bif;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod select;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
