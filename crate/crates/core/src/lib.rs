//! Cross-modal manifold alignment for grounded language learning.
//!
//! Two per-modality encoders (language/speech and vision) are trained with a
//! cosine-distance triplet loss so that projections of the same object class
//! land close together in a shared latent space. The crate also provides the
//! evaluation harness (retrieval MRR, threshold classification, ROC/AUC), an
//! MFCC front end for raw audio, and speaker-trait studies.
//!
//! Module map:
//!
//! - [`dataset`]: embedding records, on-disk formats, splits, speaker traits
//! - [`mfcc`]: WAV decoding and MFCC extraction
//! - [`nn`]: MLP and LSTM encoders with analytic gradients, Adam, checkpoints
//! - [`align`]: cosine distance, triplet loss, triplet sampling, training
//! - [`eval`]: MRR protocols, threshold tuning, ROC curves, reports
//! - [`analysis`]: per-user and per-group trait studies, Pearson correlation
//! - [`synthetic`]: seeded class-conditional Gaussian fixtures

pub mod align;
pub mod analysis;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod mfcc;
pub mod nn;
pub mod rng;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};

/// Version tag embedded in every emitted report and checkpoint.
pub const VERSION_TAG: &str = concat!("speechground ", env!("CARGO_PKG_VERSION"));
