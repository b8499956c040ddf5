//! Membership-inference auditing for spiking neural networks.
//!
//! The crate trains small spiking (integrate-and-fire) and conventional
//! classifiers, plays the online membership-inference game against them with
//! a pool of reference models, and scores membership with Attack-P, Attack-R
//! and RMIA, optionally sharpening confidences by averaging over randomly
//! dropped-out inputs. Results are summarised as ROC curves, AUC and TPR at
//! low FPR.

pub mod attack;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod game;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod seeds;
pub mod snn;
pub mod surrogate;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Model, ModelKind};
pub use tensor::Tensor;
