//! Spatiotemporal self-supervised pre-training on longitudinal 3D volume
//! sequences.
//!
//! The crate covers the full pipeline: manifest ingestion and gap-constrained
//! sequence extraction ([`cohort`]), stochastic volume augmentation
//! ([`augment`]), a residual 3D CNN encoder with order-verification,
//! permutation-classification and contrastive heads ([`nets`]), the pretext
//! and downstream loss functions ([`objectives`]), training loops and
//! checkpointing ([`trainer`]), AUC evaluation with repeated trials
//! ([`eval`]), and a synthetic longitudinal phantom cohort ([`synth`]) that
//! lets the whole thing be verified end-to-end on a laptop-sized budget.

pub mod augment;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod nets;
pub mod nn;
pub mod objectives;
pub mod permutation;
pub mod sequence;
pub mod synth;
pub mod task;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
