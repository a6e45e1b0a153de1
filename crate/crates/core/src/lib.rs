//! Robust unsupervised domain adaptation.
//!
//! A target encoder is adapted to an unlabeled domain by combining
//! adversarial feature matching against a frozen source encoder with
//! discriminative clustering of the target features: Student-t soft
//! assignments pulled toward a sharpened auxiliary distribution, and
//! trainable centroids pushed toward distinct class predictions. Target
//! augmentation with unlabeled source rows handles partial label overlap.
//!
//! The runnable programs under `examples/` walk through each capability.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod manifest;
pub mod nets;
pub mod optim;

pub use error::{Error, Result};
